//! OCR inference and training on rectified plate rows.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::{beam_decode, ctc_grad, ctc_loss, min_frames};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::img::Image;
use crate::neuralcore::{OcrGrads, OcrNet, OcrNetConfig};
use crate::pipeline::layout::LayoutClass;
use crate::pipeline::rectify::rectify_crop;
use crate::synthgen::{char_to_class, class_to_char, Layout, SceneRecord};

/// Smallest crop side accepted for recognition.
pub const MIN_CROP: usize = 8;

/// Decoded text plus the model's own confidence in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recognition {
    pub text: String,
    pub labels: Vec<usize>,
    /// exp(-ctc loss of the decoded labeling), clipped to [0, 1].
    pub confidence: f64,
}

pub fn text_to_labels(text: &str) -> Result<Vec<usize>> {
    text.chars()
        .map(|c| {
            char_to_class(c)
                .ok_or_else(|| Error::InvalidInput(format!("character {c:?} not in charset")))
        })
        .collect()
}

pub fn labels_to_text(labels: &[usize]) -> String {
    labels.iter().filter_map(|&k| class_to_char(k)).collect()
}

/// Runs one rectified row through the net and beam-decodes the posterior.
pub fn recognize(crop: &Image, net: &OcrNet, beam_width: usize) -> Result<Recognition> {
    if crop.h < MIN_CROP || crop.w < MIN_CROP {
        return Err(Error::InvalidInput(format!(
            "crop {}x{} below minimum {MIN_CROP}x{MIN_CROP}",
            crop.h, crop.w
        )));
    }
    let input = crop.to_luma().resize(net.cfg.input_h, net.cfg.input_w);
    let cache = net.forward(&input)?;
    let (labels, _) = beam_decode(&cache.probs, beam_width);
    let confidence = match ctc_loss(&cache.probs, &labels) {
        Ok(loss) => (-loss).exp().clamp(0.0, 1.0),
        Err(_) => 0.0,
    };
    Ok(Recognition { text: labels_to_text(&labels), labels, confidence })
}

// ── Training ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcrTrainConfig {
    pub net: OcrNetConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of samples held out for the validation curve.
    pub val_fraction: f64,
    /// Multiplicative learning-rate decay applied once per epoch (1.0 = none).
    pub lr_decay: f64,
    /// Epochs at the full rate before `lr_decay` starts to apply.
    pub lr_hold: usize,
    /// Global-norm gradient clip per update step (0.0 = off). CTC gradients
    /// spike when an alignment flips; uncapped steps can undo whole epochs.
    pub grad_clip: f64,
}

impl Default for OcrTrainConfig {
    fn default() -> Self {
        OcrTrainConfig {
            net: OcrNetConfig::default(),
            epochs: 20,
            lr: 0.05,
            batch_size: 16,
            seed: 17,
            val_fraction: 0.1,
            lr_decay: 1.0,
            lr_hold: 0,
            grad_clip: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrTrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Samples whose label cannot fit the net's output length.
    pub skipped_infeasible: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

/// SGD over the CTC gradient with per-epoch reshuffling. Labels that need
/// more frames than the net emits are dropped up front and counted.
/// Deterministic for a fixed (samples, cfg).
pub fn train_ocr(
    samples: &[(Image, Vec<usize>)],
    cfg: &OcrTrainConfig,
) -> Result<(OcrNet, OcrTrainReport)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::Config("val_fraction must be in [0, 1)".into()));
    }
    let mut net = OcrNet::init(cfg.net.clone(), cfg.seed)?;
    let t_out = cfg.net.time_steps();

    let mut skipped = 0usize;
    let mut usable: Vec<usize> = Vec::new();
    for (i, (_, y)) in samples.iter().enumerate() {
        if y.iter().any(|&k| k == 0 || k >= cfg.net.classes) {
            return Err(Error::InvalidInput(format!("sample {i}: label class out of range")));
        }
        if min_frames(y) > t_out {
            skipped += 1;
        } else {
            usable.push(i);
        }
    }
    if usable.is_empty() {
        return Err(Error::Config("no feasible training samples".into()));
    }

    // Inputs resized once; recognition applies the same resize at inference.
    let inputs: Vec<Image> = samples
        .iter()
        .map(|(img, _)| img.to_luma().resize(cfg.net.input_h, cfg.net.input_w))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6f63_725f_7472_6169);
    usable.shuffle(&mut rng);
    let n_val = ((usable.len() as f64 * cfg.val_fraction).round() as usize).min(usable.len() - 1);
    let (val_idx, train_idx) = usable.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let mut report = OcrTrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::new(),
        skipped_infeasible: skipped,
        train_samples: train_idx.len(),
        val_samples: val_idx.len(),
    };

    let mut lr = cfg.lr;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let mut acc = OcrGrads::zeros_like(&net);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let cache = net.forward(&inputs[i])?;
                let (loss, dlogits) = ctc_grad(&cache.probs, &samples[i].1)?;
                epoch_loss += loss;
                let g = net.backward(&cache, &dlogits);
                acc.add_scaled(&g, inv);
            }
            if cfg.grad_clip > 0.0 {
                let norm = acc.global_norm();
                if norm > cfg.grad_clip {
                    acc.rescale(cfg.grad_clip / norm);
                }
            }
            net.sgd(&acc, lr)?;
        }
        if epoch + 1 >= cfg.lr_hold {
            lr *= cfg.lr_decay;
        }
        report.train_loss.push(epoch_loss / train_idx.len() as f64);

        if !val_idx.is_empty() {
            let mut v = 0.0;
            for &i in &val_idx {
                let cache = net.forward(&inputs[i])?;
                v += ctc_loss(&cache.probs, &samples[i].1)?;
            }
            report.val_loss.push(v / val_idx.len() as f64);
        }
    }
    Ok((net, report))
}

// ── Sample preparation ──────────────────────────────────────────────────────

/// Cuts (row image, label) training pairs out of manifest frames using the
/// ground-truth boxes. `jitter` shifts each box edge by up to that fraction
/// of the box size, imitating localizer slack; two-row plates contribute one
/// sample per row with the text split at the rendered row break.
pub fn ocr_samples_from_records(
    records: &[SceneRecord],
    root: &Path,
    canon_h: usize,
    canon_w: usize,
    jitter: f64,
    seed: u64,
) -> Result<Vec<(Image, Vec<usize>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a69_7474_6572_6a69);
    let mut out = Vec::new();
    for rec in records {
        let frame = Image::load_png(&root.join(&rec.image_path))?;
        let b = &rec.gt_box;
        let jit = |rng: &mut ChaCha8Rng, span: f64| {
            if jitter > 0.0 {
                rng.random_range(-jitter..jitter) * span
            } else {
                0.0
            }
        };
        let x0 = (b.x0 + jit(&mut rng, b.width())).max(0.0);
        let y0 = (b.y0 + jit(&mut rng, b.height())).max(0.0);
        let x1 = (b.x1 + jit(&mut rng, b.width())).min(frame.w as f64);
        let y1 = (b.y1 + jit(&mut rng, b.height())).min(frame.h as f64);
        if x1 - x0 < MIN_CROP as f64 || y1 - y0 < MIN_CROP as f64 {
            continue;
        }
        let crop = frame.crop_resize(
            &BBox::new(x0, y0, x1, y1),
            (y1 - y0).round() as usize,
            (x1 - x0).round() as usize,
        );
        let chars: Vec<char> = rec.gt_text.chars().collect();
        match rec.layout {
            Layout::SingleRow => {
                let aligned = rectify_crop(&crop, LayoutClass::SingleRow, canon_h, canon_w);
                out.push((aligned.rows[0].clone(), text_to_labels(&rec.gt_text)?));
            }
            Layout::TwoRow { split } => {
                let split = split.min(chars.len());
                let aligned = rectify_crop(&crop, LayoutClass::TwoRow, canon_h, canon_w);
                let top: String = chars[..split].iter().collect();
                let bottom: String = chars[split..].iter().collect();
                for (row, text) in aligned.rows.iter().zip([top, bottom]) {
                    if !text.is_empty() {
                        out.push((row.clone(), text_to_labels(&text)?));
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{render_plate, PlateSpec};

    fn row(text: &str, seed: u64) -> Image {
        render_plate(
            &PlateSpec { text: text.into(), layout: Layout::SingleRow, width: 96, height: 32 },
            seed,
        )
        .unwrap()
        .image
        .to_luma()
    }

    fn tiny_cfg() -> OcrNetConfig {
        OcrNetConfig {
            input_h: 16,
            input_w: 48,
            conv_channels: [4, 6, 8, 8],
            lstm_hidden: 10,
            classes: 53,
        }
    }

    #[test]
    fn labels_roundtrip_and_reject_unknowns() {
        let labels = text_to_labels("29A12345").unwrap();
        assert_eq!(labels_to_text(&labels), "29A12345");
        assert!(labels.iter().all(|&k| k >= 1));
        assert!(text_to_labels("29a12345").is_err());
    }

    #[test]
    fn tiny_crops_are_rejected() {
        let net = OcrNet::init(tiny_cfg(), 1).unwrap();
        let small = Image::new(6, 40, 1, 0.5);
        assert!(recognize(&small, &net, 8).is_err());
        let ok = Image::new(16, 48, 1, 0.5);
        let r = recognize(&ok, &net, 8).unwrap();
        assert!((0.0..=1.0).contains(&r.confidence));
        // Same crop, same params, same answer.
        let r2 = recognize(&ok, &net, 8).unwrap();
        assert_eq!(r.text, r2.text);
    }

    #[test]
    fn ten_samples_overfit_below_one_hundredth() {
        let texts =
            ["29A1", "51F0", "30E7", "43B2", "88K9", "12C3", "77D5", "60G8", "15H4", "92M6"];
        let samples: Vec<(Image, Vec<usize>)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (row(t, i as u64), text_to_labels(t).unwrap()))
            .collect();
        let cfg = OcrTrainConfig {
            net: OcrNetConfig {
                input_h: 16,
                input_w: 24,
                conv_channels: [8, 12, 16, 16],
                lstm_hidden: 48,
                classes: 53,
            },
            epochs: 200,
            lr: 0.4,
            batch_size: 1,
            seed: 9,
            val_fraction: 0.0,
            grad_clip: 5.0,
            ..Default::default()
        };
        let (net, report) = train_ocr(&samples, &cfg).unwrap();
        assert_eq!(report.skipped_infeasible, 0);
        assert!(report.val_loss.is_empty());
        let last = *report.train_loss.last().unwrap();
        assert!(last < 0.01, "final train loss {last}");
        // Memorized samples decode exactly.
        for (img, y) in &samples {
            let r = recognize(img, &net, 8).unwrap();
            assert_eq!(&r.labels, y);
        }
    }

    #[test]
    fn infeasible_labels_are_counted_and_skipped() {
        let good = (row("29A1", 3), text_to_labels("29A1").unwrap());
        // 25 labels can never fit 24 output frames.
        let bad = (row("29A1", 4), vec![1usize; 25]);
        let cfg = OcrTrainConfig {
            net: tiny_cfg(),
            epochs: 1,
            lr: 0.05,
            batch_size: 4,
            seed: 2,
            val_fraction: 0.0,
            ..Default::default()
        };
        let (_, report) = train_ocr(&[good, bad], &cfg).unwrap();
        assert_eq!(report.skipped_infeasible, 1);
        assert_eq!(report.train_samples, 1);

        let out_of_range = (row("29A1", 5), vec![99usize]);
        assert!(train_ocr(&[out_of_range], &cfg).is_err());
    }

    #[test]
    fn same_seed_same_curves() {
        let samples: Vec<(Image, Vec<usize>)> = ["29A1", "51F0", "30E7", "43B2"]
            .iter()
            .enumerate()
            .map(|(i, t)| (row(t, 20 + i as u64), text_to_labels(t).unwrap()))
            .collect();
        let cfg = OcrTrainConfig {
            net: tiny_cfg(),
            epochs: 3,
            lr: 0.1,
            batch_size: 2,
            seed: 33,
            val_fraction: 0.25,
            ..Default::default()
        };
        let (_, r1) = train_ocr(&samples, &cfg).unwrap();
        let (_, r2) = train_ocr(&samples, &cfg).unwrap();
        assert_eq!(r1.train_loss, r2.train_loss);
        assert_eq!(r1.val_loss, r2.val_loss);
        assert_eq!(r1.val_samples, 1);
        assert_eq!(r1.train_loss.len(), 3);
        assert_eq!(r1.val_loss.len(), 3);
    }
}
