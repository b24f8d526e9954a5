//! Scoring pipeline output against manifest ground truth: detection F1 at
//! IoU 0.5, plate exact-match rate, and a character confusion matrix built
//! from per-position or edit-distance alignment.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::pipeline::recognize::text_to_labels;
use crate::synthgen::{SceneRecord, CHARSET_LEN};

/// What the pipeline produced for one scene: per-view boxes and the fused text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub scene_id: u64,
    /// (view_id, detected box); at most one box per view.
    pub detections: Vec<(u32, BBox)>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub plate_exact_match_rate: f64,
    pub mean_char_accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// (classes+1)^2 counts; index 0 is epsilon (missing character), so
    /// column 0 holds deletions and row 0 insertions.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit similarity of `pred` against `gt`: 1 − distance/|gt|, floored at 0.
/// An empty ground truth scores 1.0 only for an empty prediction.
pub fn char_accuracy(gt: &str, pred: &str) -> f64 {
    let g: Vec<usize> = gt.chars().map(|c| c as usize).collect();
    let p: Vec<usize> = pred.chars().map(|c| c as usize).collect();
    if g.is_empty() {
        return if p.is_empty() { 1.0 } else { 0.0 };
    }
    (1.0 - levenshtein(&g, &p) as f64 / g.len() as f64).max(0.0)
}

/// Aligns gt and pred class sequences into (gt, pred) pairs where 0 marks a
/// missing side. Equal lengths pair positionally; otherwise a minimal edit
/// script is traced (diagonal preferred, then deletion, then insertion).
fn align_classes(gt: &[usize], pred: &[usize]) -> Vec<(usize, usize)> {
    if gt.len() == pred.len() {
        return gt.iter().copied().zip(pred.iter().copied()).collect();
    }
    let (n, m) = (gt.len(), pred.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(gt[i - 1] != pred[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(gt[i - 1] != pred[j - 1]) {
            pairs.push((gt[i - 1], pred[j - 1]));
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            pairs.push((gt[i - 1], 0)); // deletion: gt char unread
            i -= 1;
        } else {
            pairs.push((0, pred[j - 1])); // insertion: spurious char
            j -= 1;
        }
    }
    pairs.reverse();
    pairs
}

/// Scores one outcome per scene against the manifest. Detection is TP at
/// IoU ≥ 0.5 against the same view's ground-truth box; texts feed the
/// exact-match rate and the confusion matrix. Outcome order is irrelevant.
pub fn evaluate(outcomes: &[SceneOutcome], records: &[SceneRecord]) -> Result<EvalReport> {
    let mut by_scene: HashMap<u64, Vec<&SceneRecord>> = HashMap::new();
    for r in records {
        by_scene.entry(r.scene_id).or_default().push(r);
    }
    if outcomes.len() != by_scene.len() {
        return Err(Error::InvalidInput(format!(
            "evaluate: {} outcomes for {} scenes",
            outcomes.len(),
            by_scene.len()
        )));
    }

    let classes = CHARSET_LEN + 1;
    let mut confusion = vec![vec![0usize; classes]; classes];
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut exact = 0usize;
    let mut acc_sum = 0.0;
    let mut seen: HashMap<u64, ()> = HashMap::new();

    for out in outcomes {
        let Some(views) = by_scene.get(&out.scene_id) else {
            return Err(Error::InvalidInput(format!("evaluate: unknown scene id {}", out.scene_id)));
        };
        if seen.insert(out.scene_id, ()).is_some() {
            return Err(Error::InvalidInput(format!("evaluate: duplicate scene id {}", out.scene_id)));
        }

        // Greedy one-to-one matching within the scene, view by view.
        let mut used = vec![false; views.len()];
        for (vid, bbox) in &out.detections {
            let hit = views.iter().enumerate().find(|(k, r)| {
                !used[*k] && r.view_id == *vid && iou(bbox, &r.gt_box) >= 0.5
            });
            match hit {
                Some((k, _)) => {
                    used[k] = true;
                    tp += 1;
                }
                None => fp += 1,
            }
        }
        fn_ += used.iter().filter(|&&u| !u).count();

        let gt_text = &views[0].gt_text;
        if &out.text == gt_text {
            exact += 1;
        }
        acc_sum += char_accuracy(gt_text, &out.text);

        let gt = text_to_labels(gt_text)?;
        // Prediction may contain anything; unknown chars count as class 0.
        let pred: Vec<usize> = out
            .text
            .chars()
            .map(|c| crate::synthgen::char_to_class(c).unwrap_or(0))
            .collect();
        for (g, p) in align_classes(&gt, &pred) {
            confusion[g][p] += 1;
        }
    }

    let scenes = outcomes.len().max(1);
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        precision,
        recall,
        f1,
        plate_exact_match_rate: exact as f64 / scenes as f64,
        mean_char_accuracy: acc_sum / scenes as f64,
        tp,
        fp,
        fn_,
        confusion,
    })
}
