//! From-scratch f64 neural network kernels: convolution, pooling, a
//! bidirectional LSTM, dense+softmax, cross-entropy, and plain SGD, each
//! with hand-written backward passes. No autograd, no BLAS; every gradient
//! here is checked against central finite differences in the test suite.

pub mod checkpoint;
pub mod layers;
pub mod lstm;
pub mod ocr;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use layers::{
    ce_grad_logits, ce_loss, relu, relu_backward, softmax_rows, Conv2d, Dense, MaxPool,
};
pub use lstm::BiLstm;
pub use ocr::{OcrGrads, OcrNet, OcrNetConfig};

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ── Tensor ──────────────────────────────────────────────────────────────────

/// Dense row-major f64 tensor. The last axis varies fastest; images use
/// (h, w, channels), sequences (t, features).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Uniform Glorot init in +-sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..shape.iter().product())
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// ── SGD ─────────────────────────────────────────────────────────────────────

/// One plain SGD step `w <- w - lr * g` over paired (name, param, grad)
/// entries. A non-finite gradient component aborts before any update.
pub fn sgd_step(entries: &mut [(&str, &mut Tensor, &Tensor)], lr: f64) -> Result<()> {
    for (name, param, grad) in entries.iter() {
        assert_eq!(param.shape, grad.shape, "{name}: param/grad shape mismatch");
        if !grad.is_finite() {
            return Err(Error::NonFiniteGradient((*name).to_string()));
        }
    }
    for (_, param, grad) in entries.iter_mut() {
        for (w, g) in param.data.iter_mut().zip(&grad.data) {
            *w -= lr * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn glorot_respects_bound_and_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::glorot(&[3, 3, 2, 4], 18, 36, &mut rng);
        let bound = (6.0 / 54.0f64).sqrt();
        assert!(t.data.iter().all(|v| v.abs() < bound));
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(t, Tensor::glorot(&[3, 3, 2, 4], 18, 36, &mut rng2));
    }

    #[test]
    fn sgd_two_steps_match_hand_computation() {
        // f(w) = w^2, grad 2w, lr 0.1: 1.0 -> 0.8 -> 0.64.
        let mut w = Tensor::from_vec(&[1], vec![1.0]);
        for _ in 0..2 {
            let g = Tensor::from_vec(&[1], vec![2.0 * w.data[0]]);
            sgd_step(&mut [("w", &mut w, &g)], 0.1).unwrap();
        }
        assert!((w.data[0] - 0.64).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_gradients_without_updating() {
        let mut w = Tensor::from_vec(&[2], vec![1.0, 2.0]);
        let g = Tensor::from_vec(&[2], vec![0.5, f64::NAN]);
        let err = sgd_step(&mut [("w", &mut w, &g)], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(_)));
        assert_eq!(w.data, vec![1.0, 2.0]);
    }
}
