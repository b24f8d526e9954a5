//! Two-view image fusion. Each view is scored by the mean squared gradient
//! energy of a 5-level pyramid; a temperature softmax over the two scores
//! yields blend weights. The weighted average is the exact minimizer of the
//! weighted-MSE fusion loss, and a small convolutional fuser can be trained
//! against that same loss with the analytic fuser as its reference.

use crate::error::{Error, Result};
use crate::img::Image;
use crate::neuralcore::{
    load_checkpoint, relu, relu_backward, save_checkpoint, sgd_step, Conv2d, Tensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;

pub const PYRAMID_LEVELS: usize = 5;

// ── Information measure ─────────────────────────────────────────────────────

/// Gradient-magnitude maps of the image and of four successively halved
/// copies.
pub struct FeaturePyramid {
    pub levels: Vec<Image>,
}

pub fn feature_pyramid(img: &Image) -> Result<FeaturePyramid> {
    if img.h < 16 || img.w < 16 {
        return Err(Error::InvalidInput(format!(
            "pyramid needs at least 16x16, got {}x{}",
            img.h, img.w
        )));
    }
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    let mut cur = img.to_luma();
    for k in 0..PYRAMID_LEVELS {
        levels.push(cur.sobel_magnitude());
        if k + 1 < PYRAMID_LEVELS {
            cur = cur.downsample2();
        }
    }
    Ok(FeaturePyramid { levels })
}

/// Mean over pyramid levels of the mean squared feature value. Zero exactly
/// when every level is flat, which happens iff the image is constant.
pub fn info_measure(p: &FeaturePyramid) -> f64 {
    let sum: f64 = p
        .levels
        .iter()
        .map(|l| l.data.iter().map(|&v| v * v).sum::<f64>() / l.data.len() as f64)
        .sum();
    sum / p.levels.len() as f64
}

/// Pyramid + measure in one call.
pub fn image_info(img: &Image) -> Result<f64> {
    Ok(info_measure(&feature_pyramid(img)?))
}

// ── Weights ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w1: f64,
    pub w2: f64,
    pub c: f64,
}

/// Softmax of (g1/c, g2/c), computed as a single logistic so equal scores
/// give exactly (0.5, 0.5) and extreme gaps saturate without overflow.
pub fn fusion_weights(g1: f64, g2: f64, c: f64) -> Result<FusionWeights> {
    if !(c > 0.0) {
        return Err(Error::Config(format!("softmax temperature must be positive, got {c}")));
    }
    if !g1.is_finite() || !g2.is_finite() {
        return Err(Error::InvalidInput("non-finite information measure".into()));
    }
    let w1 = 1.0 / (1.0 + ((g2 - g1) / c).exp());
    Ok(FusionWeights { w1, w2: 1.0 - w1, c })
}

// ── Loss and analytic fuser ─────────────────────────────────────────────────

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if (a.h, a.w, a.c) != (b.h, b.w, b.c) {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {}x{}x{} vs {}x{}x{}",
            a.h, a.w, a.c, b.h, b.w, b.c
        )));
    }
    Ok(())
}

/// w1 * MSE(f, i1) + w2 * MSE(f, i2).
pub fn fusion_loss(f: &Image, i1: &Image, i2: &Image, w: &FusionWeights) -> Result<f64> {
    check_shapes(f, i1)?;
    check_shapes(f, i2)?;
    Ok(w.w1 * f.mse(i1) + w.w2 * f.mse(i2))
}

/// Pixelwise w1*i1 + w2*i2: the unique global minimizer of `fusion_loss`.
pub fn fuse_analytic(i1: &Image, i2: &Image, w: &FusionWeights) -> Result<Image> {
    check_shapes(i1, i2)?;
    let mut out = i1.clone();
    for (o, (&a, &b)) in out.data.iter_mut().zip(i1.data.iter().zip(&i2.data)) {
        *o = w.w1 * a + w.w2 * b;
    }
    Ok(out)
}

/// Convenience: weigh two views by their own information measures, then fuse.
pub fn fuse_weighted(i1: &Image, i2: &Image, c: f64) -> Result<(Image, FusionWeights)> {
    let w = fusion_weights(image_info(i1)?, image_info(i2)?, c)?;
    Ok((fuse_analytic(i1, i2, &w)?, w))
}

// ── Trained fuser ───────────────────────────────────────────────────────────

/// Gate-style fuser: three 3x3 convs produce a per-pixel blend factor in
/// (0,1) via a sigmoid, and the output is alpha*i1 + (1-alpha)*i2. Identical
/// inputs therefore fuse losslessly for any parameter values.
#[derive(Debug, Clone)]
pub struct FusionNet {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub temperature: f64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        FusionTrainConfig { epochs: 30, lr: 0.5, seed: 7, temperature: 1.0 }
    }
}

struct FuseCache {
    x: Tensor,
    a1: Tensor,
    r1: Tensor,
    a2: Tensor,
    r2: Tensor,
    alpha: Vec<f64>,
}

impl FusionNet {
    const HIDDEN: usize = 8;

    pub fn init(seed: u64) -> FusionNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Self::HIDDEN;
        let conv = |cin: usize, cout: usize, rng: &mut ChaCha8Rng| {
            Conv2d::new(
                Tensor::glorot(&[3, 3, cin, cout], 9 * cin, 9 * cout, rng),
                Tensor::zeros(&[cout]),
            )
        };
        FusionNet { conv1: conv(2, h, &mut rng), conv2: conv(h, h, &mut rng), conv3: conv(h, 1, &mut rng) }
    }

    fn forward(&self, i1: &Image, i2: &Image) -> Result<(Image, FuseCache)> {
        check_shapes(i1, i2)?;
        let l1 = i1.to_luma();
        let l2 = i2.to_luma();
        let stacked = Image::stack2(&l1, &l2);
        let x = Tensor::from_vec(&[l1.h, l1.w, 2], stacked.data);
        let a1 = self.conv1.forward(&x);
        let r1 = relu(&a1);
        let a2 = self.conv2.forward(&r1);
        let r2 = relu(&a2);
        let a3 = self.conv3.forward(&r2);
        let alpha: Vec<f64> = a3.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let mut fused = Image::zeros(l1.h, l1.w);
        for (i, o) in fused.data.iter_mut().enumerate() {
            *o = alpha[i] * l1.data[i] + (1.0 - alpha[i]) * l2.data[i];
        }
        Ok((fused, FuseCache { x, a1, r1, a2, r2, alpha }))
    }

    /// Inference entry point: no information measures involved.
    pub fn fuse(&self, i1: &Image, i2: &Image) -> Result<Image> {
        Ok(self.forward(i1, i2)?.0)
    }

    /// One full-pair gradient step against fusion_loss; returns the loss
    /// before the update.
    fn train_step(&mut self, i1: &Image, i2: &Image, w: &FusionWeights, lr: f64) -> Result<f64> {
        let l1 = i1.to_luma();
        let l2 = i2.to_luma();
        let (fused, cache) = self.forward(&l1, &l2)?;
        let loss = fusion_loss(&fused, &l1, &l2, w)?;

        let n = fused.data.len() as f64;
        let mut da3 = Tensor::zeros(&[fused.h, fused.w, 1]);
        for i in 0..fused.data.len() {
            let f = fused.data[i];
            let df = 2.0 / n * (w.w1 * (f - l1.data[i]) + w.w2 * (f - l2.data[i]));
            let dalpha = df * (l1.data[i] - l2.data[i]);
            da3.data[i] = dalpha * cache.alpha[i] * (1.0 - cache.alpha[i]);
        }
        let (dr2, dw3, db3) = self.conv3.backward(&cache.r2, &da3);
        let da2 = relu_backward(&cache.a2, &dr2);
        let (dr1, dw2, db2) = self.conv2.backward(&cache.r1, &da2);
        let da1 = relu_backward(&cache.a1, &dr1);
        let (_, dw1, db1) = self.conv1.backward(&cache.x, &da1);

        let mut entries: Vec<(&str, &mut Tensor, &Tensor)> = vec![
            ("conv1.w", &mut self.conv1.w, &dw1),
            ("conv1.b", &mut self.conv1.b, &db1),
            ("conv2.w", &mut self.conv2.w, &dw2),
            ("conv2.b", &mut self.conv2.b, &db2),
            ("conv3.w", &mut self.conv3.w, &dw3),
            ("conv3.b", &mut self.conv3.b, &db3),
        ];
        sgd_step(&mut entries, lr)?;
        Ok(loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(
            path,
            &json!({"hidden": Self::HIDDEN}),
            &[
                ("conv1.w", &self.conv1.w),
                ("conv1.b", &self.conv1.b),
                ("conv2.w", &self.conv2.w),
                ("conv2.b", &self.conv2.b),
                ("conv3.w", &self.conv3.w),
                ("conv3.b", &self.conv3.b),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<FusionNet> {
        let ck = load_checkpoint(path)?;
        let mut net = FusionNet::init(0);
        for (name, dst) in [
            ("conv1.w", &mut net.conv1.w),
            ("conv1.b", &mut net.conv1.b),
            ("conv2.w", &mut net.conv2.w),
            ("conv2.b", &mut net.conv2.b),
            ("conv3.w", &mut net.conv3.w),
            ("conv3.b", &mut net.conv3.b),
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
        Ok(net)
    }
}

/// Trains the gate fuser. Per-pair softmax weights are fixed up front from
/// the views' information measures (they depend only on the inputs) and the
/// pairs are visited in dataset order every epoch. Returns the net and the
/// mean loss per epoch.
pub fn train_fusion_net(
    pairs: &[(Image, Image)],
    cfg: &FusionTrainConfig,
) -> Result<(FusionNet, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("empty fusion training set".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("need at least one epoch".into()));
    }
    let weights: Vec<FusionWeights> = pairs
        .iter()
        .map(|(i1, i2)| fusion_weights(image_info(i1)?, image_info(i2)?, cfg.temperature))
        .collect::<Result<_>>()?;
    let mut net = FusionNet::init(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut sum = 0.0;
        for ((i1, i2), w) in pairs.iter().zip(&weights) {
            sum += net.train_step(i1, i2, w, cfg.lr)?;
        }
        curve.push(sum / pairs.len() as f64);
    }
    Ok((net, curve))
}
