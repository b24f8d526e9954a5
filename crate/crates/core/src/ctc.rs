//! CTC loss over a (t, classes) probability matrix, its logit gradient, an
//! exhaustive path-enumeration oracle, and greedy / prefix-beam decoders.
//! Class 0 is the blank throughout. The forward-backward recursions run in
//! log space over the blank-interleaved label.

use crate::error::{Error, Result};
use crate::neuralcore::Tensor;
use std::collections::HashMap;

const LOG_FLOOR: f64 = 1e-300;

fn lse(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn validate(p: &Tensor, y: &[usize]) -> Result<(usize, usize)> {
    if p.shape.len() != 2 {
        return Err(Error::InvalidInput("probability matrix must be 2-D".into()));
    }
    let (t, c) = (p.shape[0], p.shape[1]);
    if t == 0 {
        return Err(Error::InvalidInput("empty probability matrix".into()));
    }
    if c < 2 {
        return Err(Error::InvalidInput("need blank plus at least one class".into()));
    }
    if let Some(&bad) = y.iter().find(|&&k| k == 0 || k >= c) {
        return Err(Error::InvalidInput(format!("label class {bad} out of range 1..{c}")));
    }
    Ok((t, c))
}

/// Minimum number of frames that can emit `y`: one per symbol plus one
/// separating blank per adjacent repeat.
pub fn min_frames(y: &[usize]) -> usize {
    let repeats = y.windows(2).filter(|w| w[0] == w[1]).count();
    y.len() + repeats
}

/// Blank-interleaved label: blank, y1, blank, y2, ..., blank.
fn interleave(y: &[usize]) -> Vec<usize> {
    let mut l = Vec::with_capacity(2 * y.len() + 1);
    l.push(0);
    for &k in y {
        l.push(k);
        l.push(0);
    }
    l
}

/// Log-space forward recursion. Returns the alpha table (t rows, one entry
/// per interleaved label position) plus the total log-probability.
fn forward_alphas(p: &Tensor, lab: &[usize], t: usize, c: usize) -> (Vec<Vec<f64>>, f64) {
    let s = lab.len();
    let lp = |tt: usize, k: usize| p.data[tt * c + k].max(LOG_FLOOR).ln();
    let mut alpha = vec![vec![f64::NEG_INFINITY; s]; t];
    alpha[0][0] = lp(0, lab[0]);
    if s > 1 {
        alpha[0][1] = lp(0, lab[1]);
    }
    for tt in 1..t {
        for ss in 0..s {
            let mut a = alpha[tt - 1][ss];
            if ss >= 1 {
                a = lse(a, alpha[tt - 1][ss - 1]);
            }
            // Skip transition only between distinct non-blank symbols.
            if ss >= 2 && lab[ss] != 0 && lab[ss] != lab[ss - 2] {
                a = lse(a, alpha[tt - 1][ss - 2]);
            }
            alpha[tt][ss] = a + lp(tt, lab[ss]);
        }
    }
    let total = if s > 1 {
        lse(alpha[t - 1][s - 1], alpha[t - 1][s - 2])
    } else {
        alpha[t - 1][s - 1]
    };
    (alpha, total)
}

/// Negative log-probability that `p` emits `y` under CTC collapsing.
pub fn ctc_loss(p: &Tensor, y: &[usize]) -> Result<f64> {
    let (t, c) = validate(p, y)?;
    let needed = min_frames(y);
    if t < needed {
        return Err(Error::CtcInfeasible { t, needed });
    }
    let lab = interleave(y);
    let (_, total) = forward_alphas(p, &lab, t, c);
    Ok(-total)
}

/// Loss plus gradient with respect to the pre-softmax logits that produced
/// `p`. Every row of the gradient sums to zero.
pub fn ctc_grad(p: &Tensor, y: &[usize]) -> Result<(f64, Tensor)> {
    let (t, c) = validate(p, y)?;
    let needed = min_frames(y);
    if t < needed {
        return Err(Error::CtcInfeasible { t, needed });
    }
    let lab = interleave(y);
    let s = lab.len();
    let lp = |tt: usize, k: usize| p.data[tt * c + k].max(LOG_FLOOR).ln();

    let (alpha, total) = forward_alphas(p, &lab, t, c);

    // Beta mirrors alpha from the sequence end; both include the frame's own
    // emission probability, so alpha+beta double-counts it once.
    let mut beta = vec![vec![f64::NEG_INFINITY; s]; t];
    beta[t - 1][s - 1] = lp(t - 1, lab[s - 1]);
    if s > 1 {
        beta[t - 1][s - 2] = lp(t - 1, lab[s - 2]);
    }
    for tt in (0..t - 1).rev() {
        for ss in (0..s).rev() {
            let mut b = beta[tt + 1][ss];
            if ss + 1 < s {
                b = lse(b, beta[tt + 1][ss + 1]);
            }
            if ss + 2 < s && lab[ss + 2] != 0 && lab[ss + 2] != lab[ss] {
                b = lse(b, beta[tt + 1][ss + 2]);
            }
            beta[tt][ss] = b + lp(tt, lab[ss]);
        }
    }

    // d(loss)/d(logit[t][k]) = p[t][k] − posterior mass of label positions
    // emitting k at time t.
    let mut grad = Tensor::zeros(&[t, c]);
    for tt in 0..t {
        let mut occ = vec![f64::NEG_INFINITY; c];
        for ss in 0..s {
            let contrib = alpha[tt][ss] + beta[tt][ss] - lp(tt, lab[ss]);
            occ[lab[ss]] = lse(occ[lab[ss]], contrib);
        }
        for k in 0..c {
            let posterior = if occ[k] == f64::NEG_INFINITY {
                0.0
            } else {
                (occ[k] - total).exp()
            };
            grad.data[tt * c + k] = p.data[tt * c + k] - posterior;
        }
    }
    Ok((-total, grad))
}

/// Removes consecutive duplicates, then blanks.
pub fn collapse_path(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &k in path {
        if k != prev && k != 0 {
            out.push(k);
        }
        prev = k;
    }
    out
}

/// Enumerates every alignment path and sums the probability of those that
/// collapse to `y`. Independent of the forward-backward code; quadratic in
/// nothing and exponential in everything, so instances are capped at 10^6
/// paths.
pub fn brute_force_ctc(p: &Tensor, y: &[usize]) -> Result<f64> {
    let (t, c) = validate(p, y)?;
    if (c as f64).powi(t as i32) > 1e6 {
        return Err(Error::InvalidInput(format!("{c}^{t} paths exceed the 1e6 cap")));
    }
    let mut path = vec![0usize; t];
    let mut total = 0.0;
    loop {
        if collapse_path(&path) == y {
            let mut prob = 1.0;
            for (tt, &k) in path.iter().enumerate() {
                prob *= p.data[tt * c + k];
            }
            total += prob;
        }
        // Odometer increment over base-c digits.
        let mut i = 0;
        loop {
            if i == t {
                return Ok(-total.max(LOG_FLOOR).ln());
            }
            path[i] += 1;
            if path[i] < c {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Per-row argmax (ties to the lowest class index) followed by collapse.
pub fn greedy_decode(p: &Tensor) -> Vec<usize> {
    let c = p.shape[1];
    let path: Vec<usize> = p
        .data
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0usize;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse_path(&path)
}

/// Prefix beam search. Tracks per-prefix blank / non-blank ending mass so
/// alignments of the same labeling merge; returns the best labeling and its
/// accumulated posterior.
pub fn beam_decode(p: &Tensor, width: usize) -> (Vec<usize>, f64) {
    assert!(width >= 1, "beam width must be at least 1");
    let (t, c) = (p.shape[0], p.shape[1]);
    // (prefix, p_ending_blank, p_ending_nonblank)
    let mut beams: Vec<(Vec<usize>, f64, f64)> = vec![(Vec::new(), 1.0, 0.0)];
    for tt in 0..t {
        let row = &p.data[tt * c..(tt + 1) * c];
        let mut next: HashMap<Vec<usize>, (f64, f64)> = HashMap::new();
        for (prefix, pb, pnb) in &beams {
            // Blank extends the alignment without changing the labeling.
            let e = next.entry(prefix.clone()).or_insert((0.0, 0.0));
            e.0 += (pb + pnb) * row[0];
            for k in 1..c {
                let pk = row[k];
                if Some(&k) == prefix.last() {
                    // Same symbol again: merges unless a blank intervened.
                    let e = next.entry(prefix.clone()).or_insert((0.0, 0.0));
                    e.1 += pnb * pk;
                    let mut ext = prefix.clone();
                    ext.push(k);
                    let e = next.entry(ext).or_insert((0.0, 0.0));
                    e.1 += pb * pk;
                } else {
                    let mut ext = prefix.clone();
                    ext.push(k);
                    let e = next.entry(ext).or_insert((0.0, 0.0));
                    e.1 += (pb + pnb) * pk;
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, f64, f64)> =
            next.into_iter().map(|(k, (pb, pnb))| (k, pb, pnb)).collect();
        // Deterministic order: score descending, then lexicographic prefix.
        ranked.sort_by(|a, b| {
            let sa = a.1 + a.2;
            let sb = b.1 + b.2;
            sb.partial_cmp(&sa).unwrap().then_with(|| a.0.cmp(&b.0))
        });
        ranked.truncate(width);
        beams = ranked;
    }
    let (prefix, pb, pnb) = beams.into_iter().next().unwrap();
    (prefix, (pb + pnb).clamp(0.0, 1.0))
}
