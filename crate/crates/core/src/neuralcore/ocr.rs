//! The plate reader network. Four same-padded 3x3 conv + relu stages with
//! height-heavy pooling (2x1, 2x1, 2x2) shrink an (h, w) grayscale crop to a
//! (h/8, w/2) grid; averaging over the remaining height yields a w/2-step
//! feature sequence that a bidirectional LSTM and a dense softmax head turn
//! into per-step class distributions. Class 0 is reserved for the CTC blank.
//!
//! Each feature channel is standardized across the sequence axis before the
//! LSTM. Without this the step-invariant component of the features (which
//! only encodes "a plate is present") reaches the logits three orders of
//! magnitude stronger than the step-varying component that distinguishes
//! glyphs, and plain SGD settles into the all-blank CTC optimum and stays
//! there regardless of learning rate, batch size, or width.

use super::layers::{relu, relu_backward, softmax_rows, Conv2d, Dense, MaxPool};
use super::lstm::{BiLstm, BiLstmCache, BiLstmGrads};
use super::{load_checkpoint, save_checkpoint, sgd_step, Tensor};
use crate::error::{Error, Result};
use crate::img::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const POOLS: [MaxPool; 3] = [
    MaxPool { ph: 2, pw: 1 },
    MaxPool { ph: 2, pw: 1 },
    MaxPool { ph: 2, pw: 2 },
];

// Keeps the per-channel inverse std finite when a channel is flat (a dead
// relu channel normalizes to exactly zero, and the dead relu then blocks the
// amplified gradient on the way back down).
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrNetConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub conv_channels: [usize; 4],
    pub lstm_hidden: usize,
    pub classes: usize,
}

impl Default for OcrNetConfig {
    fn default() -> Self {
        OcrNetConfig {
            input_h: 32,
            input_w: 96,
            conv_channels: [40, 60, 80, 80],
            lstm_hidden: 100,
            classes: 53,
        }
    }
}

impl OcrNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_h == 0 || self.input_h % 8 != 0 {
            return Err(Error::Config(format!(
                "input height {} must be a positive multiple of 8",
                self.input_h
            )));
        }
        if self.input_w == 0 || self.input_w % 2 != 0 {
            return Err(Error::Config(format!(
                "input width {} must be a positive multiple of 2",
                self.input_w
            )));
        }
        if self.conv_channels.iter().any(|&c| c == 0) || self.lstm_hidden == 0 {
            return Err(Error::Config("zero-width layer".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least blank + one symbol".into()));
        }
        Ok(())
    }

    /// Sequence length the network emits: one step per two input columns.
    pub fn time_steps(&self) -> usize {
        self.input_w / 2
    }
}

// ── Network ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct OcrNet {
    pub cfg: OcrNetConfig,
    pub conv: [Conv2d; 4],
    pub lstm: BiLstm,
    pub dense: Dense,
}

/// Everything the backward pass needs, captured during forward.
pub struct OcrCache {
    x0: Tensor,
    pre: [Tensor; 4],    // conv outputs before relu
    post: [Tensor; 4],   // after relu (pool inputs / collapse input)
    pooled: [Tensor; 3], // pool outputs (conv 2..4 inputs)
    pool_args: [Vec<usize>; 3],
    nseq: Tensor,        // standardized sequence (LSTM input)
    nstd_inv: Vec<f64>,  // 1/sqrt(var + eps) per channel
    hseq: Tensor,
    lstm_cache: BiLstmCache,
    pub logits: Tensor,
    pub probs: Tensor,
}

#[derive(Debug, Clone)]
pub struct OcrGrads {
    pub conv: [(Tensor, Tensor); 4],
    pub lstm: BiLstmGrads,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
}

impl OcrNet {
    pub fn init(cfg: OcrNetConfig, seed: u64) -> Result<OcrNet> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3, c4] = cfg.conv_channels;
        let chans = [(1, c1), (c1, c2), (c2, c3), (c3, c4)];
        let conv = chans.map(|(cin, cout)| {
            Conv2d::new(
                Tensor::glorot(&[3, 3, cin, cout], 9 * cin, 9 * cout, &mut rng),
                Tensor::zeros(&[cout]),
            )
        });
        let lstm = BiLstm::new(c4, cfg.lstm_hidden, &mut rng);
        let dense = Dense::new(
            Tensor::glorot(&[cfg.classes, cfg.lstm_hidden], cfg.lstm_hidden, cfg.classes, &mut rng),
            Tensor::zeros(&[cfg.classes]),
        );
        Ok(OcrNet { cfg, conv, lstm, dense })
    }

    pub fn forward(&self, img: &Image) -> Result<OcrCache> {
        if img.h != self.cfg.input_h || img.w != self.cfg.input_w {
            return Err(Error::InvalidInput(format!(
                "expected {}x{} input, got {}x{}",
                self.cfg.input_h, self.cfg.input_w, img.h, img.w
            )));
        }
        let luma = img.to_luma();
        // Center around mid-gray so glyph structure, not the plate's bright
        // field, dominates the early feature maps.
        let centered: Vec<f64> = luma.data.iter().map(|v| v - 0.5).collect();
        let x0 = Tensor::from_vec(&[img.h, img.w, 1], centered);

        let mut pre: Vec<Tensor> = Vec::with_capacity(4);
        let mut post: Vec<Tensor> = Vec::with_capacity(4);
        let mut pooled: Vec<Tensor> = Vec::with_capacity(3);
        let mut pool_args: Vec<Vec<usize>> = Vec::with_capacity(3);
        let mut cur = x0.clone();
        for (i, conv) in self.conv.iter().enumerate() {
            let a = conv.forward(&cur);
            let r = relu(&a);
            pre.push(a);
            if i < 3 {
                let (p, arg) = POOLS[i].forward(&r);
                post.push(r);
                pool_args.push(arg);
                pooled.push(p.clone());
                cur = p;
            } else {
                post.push(r.clone());
                cur = r;
            }
        }

        // Height collapse: mean over the remaining rows per column.
        let (fh, fw, fc) = (cur.shape[0], cur.shape[1], cur.shape[2]);
        let mut seq = Tensor::zeros(&[fw, fc]);
        for hh in 0..fh {
            for t in 0..fw {
                for c in 0..fc {
                    seq.data[t * fc + c] += cur.data[(hh * fw + t) * fc + c];
                }
            }
        }
        for v in seq.data.iter_mut() {
            *v /= fh as f64;
        }

        // Standardize each channel across the sequence axis.
        let mut nseq = Tensor::zeros(&[fw, fc]);
        let mut nstd_inv = vec![0.0; fc];
        for c in 0..fc {
            let mean = (0..fw).map(|t| seq.data[t * fc + c]).sum::<f64>() / fw as f64;
            let var = (0..fw)
                .map(|t| (seq.data[t * fc + c] - mean).powi(2))
                .sum::<f64>()
                / fw as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            nstd_inv[c] = inv;
            for t in 0..fw {
                nseq.data[t * fc + c] = (seq.data[t * fc + c] - mean) * inv;
            }
        }

        let (hseq, lstm_cache) = self.lstm.forward(&nseq);
        let logits = self.dense.forward(&hseq);
        let probs = softmax_rows(&logits);
        Ok(OcrCache {
            x0,
            pre: pre.try_into().unwrap(),
            post: post.try_into().unwrap(),
            pooled: pooled.try_into().unwrap(),
            pool_args: pool_args.try_into().unwrap(),
            nseq,
            nstd_inv,
            hseq,
            lstm_cache,
            logits,
            probs,
        })
    }

    /// Backpropagates a gradient given with respect to the logits.
    pub fn backward(&self, cache: &OcrCache, dlogits: &Tensor) -> OcrGrads {
        let (dh, dense_w, dense_b) = self.dense.backward(&cache.hseq, dlogits);
        let (dnseq, lstm_grads) = self.lstm.backward(&cache.nseq, &cache.lstm_cache, &dh);

        // Undo the standardization. With y = (x - mu) * inv:
        //   dx[t] = inv * (dy[t] - mean_t(dy) - y[t] * mean_t(dy * y))
        let (tn, fc2) = (cache.nseq.shape[0], cache.nseq.shape[1]);
        let mut dseq = Tensor::zeros(&[tn, fc2]);
        for c in 0..fc2 {
            let mut dy_mean = 0.0;
            let mut dyy_mean = 0.0;
            for t in 0..tn {
                let dy = dnseq.data[t * fc2 + c];
                dy_mean += dy;
                dyy_mean += dy * cache.nseq.data[t * fc2 + c];
            }
            dy_mean /= tn as f64;
            dyy_mean /= tn as f64;
            for t in 0..tn {
                let dy = dnseq.data[t * fc2 + c];
                let y = cache.nseq.data[t * fc2 + c];
                dseq.data[t * fc2 + c] = cache.nstd_inv[c] * (dy - dy_mean - y * dyy_mean);
            }
        }

        // Undo the height collapse: every row of the collapsed column shares
        // the mean's 1/fh factor.
        let last = &cache.post[3];
        let (fh, fw, fc) = (last.shape[0], last.shape[1], last.shape[2]);
        let mut dlast = Tensor::zeros(&last.shape);
        for hh in 0..fh {
            for t in 0..fw {
                for c in 0..fc {
                    dlast.data[(hh * fw + t) * fc + c] = dseq.data[t * fc + c] / fh as f64;
                }
            }
        }

        let mut conv_grads: Vec<(Tensor, Tensor)> = Vec::with_capacity(4);
        let mut dcur = relu_backward(&cache.pre[3], &dlast);
        for i in (0..4).rev() {
            let input = if i == 0 { &cache.x0 } else { &cache.pooled[i - 1] };
            let (dx, dw, db) = self.conv[i].backward(input, &dcur);
            conv_grads.push((dw, db));
            if i > 0 {
                let dpool = POOLS[i - 1].backward(
                    &cache.post[i - 1].shape,
                    &cache.pool_args[i - 1],
                    &dx,
                );
                dcur = relu_backward(&cache.pre[i - 1], &dpool);
            }
        }
        conv_grads.reverse();
        OcrGrads {
            conv: conv_grads.try_into().unwrap(),
            lstm: lstm_grads,
            dense_w,
            dense_b,
        }
    }

    pub fn sgd(&mut self, g: &OcrGrads, lr: f64) -> Result<()> {
        let [c0, c1, c2, c3] = &mut self.conv;
        let mut entries: Vec<(&str, &mut Tensor, &Tensor)> = vec![
            ("conv1.w", &mut c0.w, &g.conv[0].0),
            ("conv1.b", &mut c0.b, &g.conv[0].1),
            ("conv2.w", &mut c1.w, &g.conv[1].0),
            ("conv2.b", &mut c1.b, &g.conv[1].1),
            ("conv3.w", &mut c2.w, &g.conv[2].0),
            ("conv3.b", &mut c2.b, &g.conv[2].1),
            ("conv4.w", &mut c3.w, &g.conv[3].0),
            ("conv4.b", &mut c3.b, &g.conv[3].1),
            ("lstm.fwd.wx", &mut self.lstm.fwd.wx, &g.lstm.fwd_wx),
            ("lstm.fwd.wh", &mut self.lstm.fwd.wh, &g.lstm.fwd_wh),
            ("lstm.fwd.b", &mut self.lstm.fwd.b, &g.lstm.fwd_b),
            ("lstm.bwd.wx", &mut self.lstm.bwd.wx, &g.lstm.bwd_wx),
            ("lstm.bwd.wh", &mut self.lstm.bwd.wh, &g.lstm.bwd_wh),
            ("lstm.bwd.b", &mut self.lstm.bwd.b, &g.lstm.bwd_b),
            ("dense.w", &mut self.dense.w, &g.dense_w),
            ("dense.b", &mut self.dense.b, &g.dense_b),
        ];
        sgd_step(&mut entries, lr)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("conv1.w", &self.conv[0].w),
            ("conv1.b", &self.conv[0].b),
            ("conv2.w", &self.conv[1].w),
            ("conv2.b", &self.conv[1].b),
            ("conv3.w", &self.conv[2].w),
            ("conv3.b", &self.conv[2].b),
            ("conv4.w", &self.conv[3].w),
            ("conv4.b", &self.conv[3].b),
            ("lstm.fwd.wx", &self.lstm.fwd.wx),
            ("lstm.fwd.wh", &self.lstm.fwd.wh),
            ("lstm.fwd.b", &self.lstm.fwd.b),
            ("lstm.bwd.wx", &self.lstm.bwd.wx),
            ("lstm.bwd.wh", &self.lstm.bwd.wh),
            ("lstm.bwd.b", &self.lstm.bwd.b),
            ("dense.w", &self.dense.w),
            ("dense.b", &self.dense.b),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &serde_json::to_value(&self.cfg)?, &self.params())
    }

    pub fn load(path: &Path) -> Result<OcrNet> {
        let ck = load_checkpoint(path)?;
        let cfg: OcrNetConfig = serde_json::from_value(ck.config.clone())?;
        let mut net = OcrNet::init(cfg, 0)?;
        let expected: Vec<(String, Vec<usize>)> = net
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape.clone()))
            .collect();
        for (name, shape) in &expected {
            let t = ck.tensor(name)?;
            if &t.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
        }
        let assign = |dst: &mut Tensor, name: &str| {
            *dst = ck.tensor(name).unwrap().clone();
        };
        assign(&mut net.conv[0].w, "conv1.w");
        assign(&mut net.conv[0].b, "conv1.b");
        assign(&mut net.conv[1].w, "conv2.w");
        assign(&mut net.conv[1].b, "conv2.b");
        assign(&mut net.conv[2].w, "conv3.w");
        assign(&mut net.conv[2].b, "conv3.b");
        assign(&mut net.conv[3].w, "conv4.w");
        assign(&mut net.conv[3].b, "conv4.b");
        assign(&mut net.lstm.fwd.wx, "lstm.fwd.wx");
        assign(&mut net.lstm.fwd.wh, "lstm.fwd.wh");
        assign(&mut net.lstm.fwd.b, "lstm.fwd.b");
        assign(&mut net.lstm.bwd.wx, "lstm.bwd.wx");
        assign(&mut net.lstm.bwd.wh, "lstm.bwd.wh");
        assign(&mut net.lstm.bwd.b, "lstm.bwd.b");
        assign(&mut net.dense.w, "dense.w");
        assign(&mut net.dense.b, "dense.b");
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }
}

impl OcrGrads {
    /// Zero gradients shaped like `net`'s parameters, for batch accumulation.
    pub fn zeros_like(net: &OcrNet) -> OcrGrads {
        let zt = |t: &Tensor| Tensor::zeros(&t.shape);
        OcrGrads {
            conv: [
                (zt(&net.conv[0].w), zt(&net.conv[0].b)),
                (zt(&net.conv[1].w), zt(&net.conv[1].b)),
                (zt(&net.conv[2].w), zt(&net.conv[2].b)),
                (zt(&net.conv[3].w), zt(&net.conv[3].b)),
            ],
            lstm: BiLstmGrads {
                fwd_wx: zt(&net.lstm.fwd.wx),
                fwd_wh: zt(&net.lstm.fwd.wh),
                fwd_b: zt(&net.lstm.fwd.b),
                bwd_wx: zt(&net.lstm.bwd.wx),
                bwd_wh: zt(&net.lstm.bwd.wh),
                bwd_b: zt(&net.lstm.bwd.b),
            },
            dense_w: zt(&net.dense.w),
            dense_b: zt(&net.dense.b),
        }
    }

    /// `self += scale * other`; shapes must already agree.
    pub fn add_scaled(&mut self, other: &OcrGrads, scale: f64) {
        fn axpy(dst: &mut Tensor, src: &Tensor, s: f64) {
            debug_assert_eq!(dst.shape, src.shape);
            for (d, v) in dst.data.iter_mut().zip(&src.data) {
                *d += s * v;
            }
        }
        for i in 0..4 {
            axpy(&mut self.conv[i].0, &other.conv[i].0, scale);
            axpy(&mut self.conv[i].1, &other.conv[i].1, scale);
        }
        axpy(&mut self.lstm.fwd_wx, &other.lstm.fwd_wx, scale);
        axpy(&mut self.lstm.fwd_wh, &other.lstm.fwd_wh, scale);
        axpy(&mut self.lstm.fwd_b, &other.lstm.fwd_b, scale);
        axpy(&mut self.lstm.bwd_wx, &other.lstm.bwd_wx, scale);
        axpy(&mut self.lstm.bwd_wh, &other.lstm.bwd_wh, scale);
        axpy(&mut self.lstm.bwd_b, &other.lstm.bwd_b, scale);
        axpy(&mut self.dense_w, &other.dense_w, scale);
        axpy(&mut self.dense_b, &other.dense_b, scale);
    }

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.conv[0].0, &self.conv[0].1, &self.conv[1].0, &self.conv[1].1,
            &self.conv[2].0, &self.conv[2].1, &self.conv[3].0, &self.conv[3].1,
            &self.lstm.fwd_wx, &self.lstm.fwd_wh, &self.lstm.fwd_b,
            &self.lstm.bwd_wx, &self.lstm.bwd_wh, &self.lstm.bwd_b,
            &self.dense_w, &self.dense_b,
        ]
    }

    /// L2 norm over every gradient entry, all tensors together.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Multiplies every gradient entry by `s` in place.
    pub fn rescale(&mut self, s: f64) {
        for i in 0..4 {
            for v in self.conv[i].0.data.iter_mut() { *v *= s; }
            for v in self.conv[i].1.data.iter_mut() { *v *= s; }
        }
        for t in [
            &mut self.lstm.fwd_wx, &mut self.lstm.fwd_wh, &mut self.lstm.fwd_b,
            &mut self.lstm.bwd_wx, &mut self.lstm.bwd_wh, &mut self.lstm.bwd_b,
            &mut self.dense_w, &mut self.dense_b,
        ] {
            for v in t.data.iter_mut() { *v *= s; }
        }
    }
}
