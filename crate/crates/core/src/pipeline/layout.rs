//! Single-row vs two-row plate classifier: two conv+pool stages, a row
//! profile (mean over columns, which keeps the vertical ink structure that
//! separates the classes), and a two-way softmax head trained with
//! cross-entropy.

use crate::error::{Error, Result};
use crate::img::Image;
use crate::neuralcore::{
    ce_grad_logits, ce_loss, load_checkpoint, relu, relu_backward, save_checkpoint, sgd_step,
    softmax_rows, Conv2d, Dense, MaxPool, Tensor,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;

pub const LAYOUT_INPUT_H: usize = 32;
pub const LAYOUT_INPUT_W: usize = 64;
const POOL: MaxPool = MaxPool { ph: 2, pw: 2 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayoutClass {
    SingleRow,
    TwoRow,
}

#[derive(Debug, Clone)]
pub struct LayoutNet {
    conv1: Conv2d,
    conv2: Conv2d,
    dense: Dense,
    trained: bool,
}

struct LayoutCache {
    x: Tensor,
    a1: Tensor,
    r1: Tensor,
    arg1: Vec<usize>,
    p1: Tensor,
    a2: Tensor,
    r2: Tensor,
    arg2: Vec<usize>,
    p2: Tensor,
    row_profile: Tensor,
    probs: Tensor,
}

impl LayoutNet {
    const C1: usize = 6;
    const C2: usize = 12;
    /// Dense input: one C2-vector per pooled row.
    const FEAT: usize = (LAYOUT_INPUT_H / 4) * Self::C2;

    pub fn init(seed: u64) -> LayoutNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LayoutNet {
            conv1: Conv2d::new(
                Tensor::glorot(&[3, 3, 1, Self::C1], 9, 9 * Self::C1, &mut rng),
                Tensor::zeros(&[Self::C1]),
            ),
            conv2: Conv2d::new(
                Tensor::glorot(&[3, 3, Self::C1, Self::C2], 9 * Self::C1, 9 * Self::C2, &mut rng),
                Tensor::zeros(&[Self::C2]),
            ),
            dense: Dense::new(
                Tensor::glorot(&[2, Self::FEAT], Self::FEAT, 2, &mut rng),
                Tensor::zeros(&[2]),
            ),
            trained: false,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn forward(&self, crop: &Image) -> LayoutCache {
        let input = crop.to_luma().resize(LAYOUT_INPUT_H, LAYOUT_INPUT_W);
        let x = Tensor::from_vec(&[LAYOUT_INPUT_H, LAYOUT_INPUT_W, 1], input.data);
        let a1 = self.conv1.forward(&x);
        let r1 = relu(&a1);
        let (p1, arg1) = POOL.forward(&r1);
        let a2 = self.conv2.forward(&p1);
        let r2 = relu(&a2);
        let (p2, arg2) = POOL.forward(&r2);
        let (ph, pw, pc) = (p2.shape[0], p2.shape[1], p2.shape[2]);
        let mut row_profile = Tensor::zeros(&[1, ph * pc]);
        for (y, row) in p2.data.chunks_exact(pw * pc).enumerate() {
            for cell in row.chunks_exact(pc) {
                for (c, &v) in cell.iter().enumerate() {
                    row_profile.data[y * pc + c] += v / pw as f64;
                }
            }
        }
        let probs = softmax_rows(&self.dense.forward(&row_profile));
        LayoutCache { x, a1, r1, arg1, p1, a2, r2, arg2, p2, row_profile, probs }
    }

    /// Class probabilities; errors on an untrained net.
    pub fn classify(&self, crop: &Image) -> Result<(LayoutClass, f64)> {
        if !self.trained {
            return Err(Error::InvalidInput("layout classifier has not been trained".into()));
        }
        let cache = self.forward(crop);
        let (p_single, p_two) = (cache.probs.data[0], cache.probs.data[1]);
        if p_two > p_single {
            Ok((LayoutClass::TwoRow, p_two))
        } else {
            Ok((LayoutClass::SingleRow, p_single))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &json!({"trained": self.trained, "channels": [Self::C1, Self::C2]}),
            &[
                ("conv1.w", &self.conv1.w),
                ("conv1.b", &self.conv1.b),
                ("conv2.w", &self.conv2.w),
                ("conv2.b", &self.conv2.b),
                ("dense.w", &self.dense.w),
                ("dense.b", &self.dense.b),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<LayoutNet> {
        let ck = load_checkpoint(path)?;
        let mut net = LayoutNet::init(0);
        for (name, dst) in [
            ("conv1.w", &mut net.conv1.w),
            ("conv1.b", &mut net.conv1.b),
            ("conv2.w", &mut net.conv2.w),
            ("conv2.b", &mut net.conv2.b),
            ("dense.w", &mut net.dense.w),
            ("dense.b", &mut net.dense.b),
        ] {
            let t = ck.tensor(name)?;
            if t.shape != dst.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    t.shape, dst.shape
                )));
            }
            *dst = t.clone();
        }
        net.trained = ck.config["trained"].as_bool().unwrap_or(false);
        Ok(net)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LayoutTrainConfig {
    fn default() -> Self {
        LayoutTrainConfig { epochs: 60, lr: 0.1, batch_size: 16, seed: 11 }
    }
}

struct LayoutGrads {
    c1w: Tensor,
    c1b: Tensor,
    c2w: Tensor,
    c2b: Tensor,
    dw: Tensor,
    db: Tensor,
}

impl LayoutGrads {
    fn zeros(net: &LayoutNet) -> LayoutGrads {
        LayoutGrads {
            c1w: Tensor::zeros(&net.conv1.w.shape),
            c1b: Tensor::zeros(&net.conv1.b.shape),
            c2w: Tensor::zeros(&net.conv2.w.shape),
            c2b: Tensor::zeros(&net.conv2.b.shape),
            dw: Tensor::zeros(&net.dense.w.shape),
            db: Tensor::zeros(&net.dense.b.shape),
        }
    }

    fn add(&mut self, other: &LayoutGrads) {
        for (a, b) in [
            (&mut self.c1w, &other.c1w),
            (&mut self.c1b, &other.c1b),
            (&mut self.c2w, &other.c2w),
            (&mut self.c2b, &other.c2b),
            (&mut self.dw, &other.dw),
            (&mut self.db, &other.db),
        ] {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for t in [&mut self.c1w, &mut self.c1b, &mut self.c2w, &mut self.c2b, &mut self.dw, &mut self.db] {
            for v in t.data.iter_mut() {
                *v *= s;
            }
        }
    }
}

fn backward(net: &LayoutNet, cache: &LayoutCache, target: &Tensor) -> (f64, LayoutGrads) {
    let loss = ce_loss(&cache.probs, target);
    let dlogits = ce_grad_logits(&cache.probs, target);
    let (dprofile, dw, db) = net.dense.backward(&cache.row_profile, &dlogits);
    let (pw, pc) = (cache.p2.shape[1], cache.p2.shape[2]);
    let mut dp2 = Tensor::zeros(&cache.p2.shape);
    for (y, row) in dp2.data.chunks_exact_mut(pw * pc).enumerate() {
        for cell in row.chunks_exact_mut(pc) {
            for (c, d) in cell.iter_mut().enumerate() {
                *d = dprofile.data[y * pc + c] / pw as f64;
            }
        }
    }
    let dr2 = POOL.backward(&cache.r2.shape, &cache.arg2, &dp2);
    let da2 = relu_backward(&cache.a2, &dr2);
    let (dp1, c2w, c2b) = net.conv2.backward(&cache.p1, &da2);
    let dr1 = POOL.backward(&cache.r1.shape, &cache.arg1, &dp1);
    let da1 = relu_backward(&cache.a1, &dr1);
    let (_, c1w, c1b) = net.conv1.backward(&cache.x, &da1);
    (loss, LayoutGrads { c1w, c1b, c2w, c2b, dw, db })
}

fn apply(net: &mut LayoutNet, g: &LayoutGrads, lr: f64) -> Result<()> {
    let mut entries: Vec<(&str, &mut Tensor, &Tensor)> = vec![
        ("conv1.w", &mut net.conv1.w, &g.c1w),
        ("conv1.b", &mut net.conv1.b, &g.c1b),
        ("conv2.w", &mut net.conv2.w, &g.c2w),
        ("conv2.b", &mut net.conv2.b, &g.c2b),
        ("dense.w", &mut net.dense.w, &g.dw),
        ("dense.b", &mut net.dense.b, &g.db),
    ];
    sgd_step(&mut entries, lr)
}

fn one_hot(two_row: bool) -> Tensor {
    let data = if two_row { vec![0.0, 1.0] } else { vec![1.0, 0.0] };
    Tensor::from_vec(&[1, 2], data)
}

/// Mini-batch SGD with cross-entropy; samples are (crop, is_two_row).
/// Returns the net plus per-epoch mean training loss.
pub fn train_layout_classifier(
    samples: &[(Image, bool)],
    cfg: &LayoutTrainConfig,
) -> Result<(LayoutNet, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty layout training set".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    let mut net = LayoutNet::init(cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6c61_796f_7574);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut acc = LayoutGrads::zeros(&net);
            for &i in chunk {
                let (crop, two_row) = &samples[i];
                let cache = net.forward(crop);
                let (loss, g) = backward(&net, &cache, &one_hot(*two_row));
                epoch_loss += loss;
                acc.add(&g);
            }
            acc.scale(1.0 / chunk.len() as f64);
            apply(&mut net, &acc, cfg.lr)?;
        }
        curve.push(epoch_loss / samples.len() as f64);
    }
    net.trained = true;
    Ok((net, curve))
}
