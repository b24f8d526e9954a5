//! Feed-forward layers. Shapes: activations (h, w, c) or (t, features),
//! conv kernels (kh, kw, cin, cout), dense weights (out, in). Inner loops
//! keep the output-channel axis contiguous so the compiler can vectorize.

use super::Tensor;

// ── Convolution ─────────────────────────────────────────────────────────────

/// 2-D convolution with same padding (zero outside the frame) and stride 1.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Tensor,
    pub b: Tensor,
}

impl Conv2d {
    pub fn new(w: Tensor, b: Tensor) -> Conv2d {
        assert_eq!(w.shape.len(), 4, "conv kernel must be (kh, kw, cin, cout)");
        assert_eq!(w.shape[0] % 2, 1, "kernel height must be odd");
        assert_eq!(w.shape[1] % 2, 1, "kernel width must be odd");
        assert_eq!(b.shape, vec![w.shape[3]]);
        Conv2d { w, b }
    }

    pub fn cin(&self) -> usize {
        self.w.shape[2]
    }

    pub fn cout(&self) -> usize {
        self.w.shape[3]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (kh, kw, cin, cout) =
            (self.w.shape[0], self.w.shape[1], self.w.shape[2], self.w.shape[3]);
        assert_eq!(x.shape.len(), 3);
        assert_eq!(x.shape[2], cin, "input channel mismatch");
        let (h, w) = (x.shape[0], x.shape[1]);
        let (ph, pw) = (kh / 2, kw / 2);

        let mut y = Tensor::zeros(&[h, w, cout]);
        for row in y.data.chunks_exact_mut(cout) {
            row.copy_from_slice(&self.b.data);
        }
        for oy in 0..h {
            for ky in 0..kh {
                let sy = oy + ky;
                if sy < ph || sy - ph >= h {
                    continue;
                }
                let sy = sy - ph;
                for ox in 0..w {
                    let yrow = &mut y.data[(oy * w + ox) * cout..(oy * w + ox + 1) * cout];
                    for kx in 0..kw {
                        let sx = ox + kx;
                        if sx < pw || sx - pw >= w {
                            continue;
                        }
                        let sx = sx - pw;
                        let xrow = &x.data[(sy * w + sx) * cin..(sy * w + sx + 1) * cin];
                        let kbase = (ky * kw + kx) * cin * cout;
                        for (ci, &xv) in xrow.iter().enumerate() {
                            let krow = &self.w.data[kbase + ci * cout..kbase + (ci + 1) * cout];
                            for (yv, &kv) in yrow.iter_mut().zip(krow) {
                                *yv += xv * kv;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Returns (dx, dw, db) for upstream gradient `dy`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
        let (kh, kw, cin, cout) =
            (self.w.shape[0], self.w.shape[1], self.w.shape[2], self.w.shape[3]);
        let (h, w) = (x.shape[0], x.shape[1]);
        assert_eq!(dy.shape, vec![h, w, cout]);
        let (ph, pw) = (kh / 2, kw / 2);

        let mut dx = Tensor::zeros(&x.shape);
        let mut dw = Tensor::zeros(&self.w.shape);
        let mut db = Tensor::zeros(&self.b.shape);

        for row in dy.data.chunks_exact(cout) {
            for (dbv, &dv) in db.data.iter_mut().zip(row) {
                *dbv += dv;
            }
        }
        for oy in 0..h {
            for ky in 0..kh {
                let sy = oy + ky;
                if sy < ph || sy - ph >= h {
                    continue;
                }
                let sy = sy - ph;
                for ox in 0..w {
                    let dyrow = &dy.data[(oy * w + ox) * cout..(oy * w + ox + 1) * cout];
                    for kx in 0..kw {
                        let sx = ox + kx;
                        if sx < pw || sx - pw >= w {
                            continue;
                        }
                        let sx = sx - pw;
                        let xbase = (sy * w + sx) * cin;
                        let kbase = (ky * kw + kx) * cin * cout;
                        for ci in 0..cin {
                            let xv = x.data[xbase + ci];
                            let krow = &self.w.data[kbase + ci * cout..kbase + (ci + 1) * cout];
                            let dwrow = &mut dw.data[kbase + ci * cout..kbase + (ci + 1) * cout];
                            let mut acc = 0.0;
                            for ((dwv, &kv), &dv) in dwrow.iter_mut().zip(krow).zip(dyrow) {
                                *dwv += xv * dv;
                                acc += kv * dv;
                            }
                            dx.data[xbase + ci] += acc;
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    }
}

// ── ReLU ────────────────────────────────────────────────────────────────────

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Gradient gate uses the pre-activation input; the kink at 0 routes to the
/// zero branch.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    assert_eq!(x.shape, dy.shape);
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().zip(&dy.data).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect(),
    }
}

// ── Max pooling ─────────────────────────────────────────────────────────────

/// Non-overlapping max pooling with window (ph, pw). Output dimensions round
/// up; edge windows are clipped. Ties take the first cell in row-major window
/// order, and the backward pass routes the gradient to that cell alone.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool {
    pub ph: usize,
    pub pw: usize,
}

impl MaxPool {
    pub fn out_shape(&self, h: usize, w: usize, c: usize) -> [usize; 3] {
        [h.div_ceil(self.ph), w.div_ceil(self.pw), c]
    }

    /// Returns the pooled tensor plus, per output element, the flat index of
    /// the winning input element.
    pub fn forward(&self, x: &Tensor) -> (Tensor, Vec<usize>) {
        let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
        let [oh, ow, _] = self.out_shape(h, w, c);
        let mut y = Tensor::zeros(&[oh, ow, c]);
        let mut arg = vec![0usize; oh * ow * c];
        for oy in 0..oh {
            let y0 = oy * self.ph;
            let y1 = (y0 + self.ph).min(h);
            for ox in 0..ow {
                let x0 = ox * self.pw;
                let x1 = (x0 + self.pw).min(w);
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for sy in y0..y1 {
                        for sx in x0..x1 {
                            let i = (sy * w + sx) * c + ch;
                            if x.data[i] > best {
                                best = x.data[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (oy * ow + ox) * c + ch;
                    y.data[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        (y, arg)
    }

    pub fn backward(&self, in_shape: &[usize], arg: &[usize], dy: &Tensor) -> Tensor {
        assert_eq!(arg.len(), dy.numel());
        let mut dx = Tensor::zeros(in_shape);
        for (&i, &d) in arg.iter().zip(&dy.data) {
            dx.data[i] += d;
        }
        dx
    }
}

// ── Dense ───────────────────────────────────────────────────────────────────

/// Affine map applied independently to each row of a (t, in) tensor.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn new(w: Tensor, b: Tensor) -> Dense {
        assert_eq!(w.shape.len(), 2, "dense weight must be (out, in)");
        assert_eq!(b.shape, vec![w.shape[0]]);
        Dense { w, b }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (out, inn) = (self.w.shape[0], self.w.shape[1]);
        assert_eq!(x.shape.len(), 2);
        assert_eq!(x.shape[1], inn);
        let t = x.shape[0];
        let mut y = Tensor::zeros(&[t, out]);
        for (xrow, yrow) in x.data.chunks_exact(inn).zip(y.data.chunks_exact_mut(out)) {
            yrow.copy_from_slice(&self.b.data);
            for (wrow, yv) in self.w.data.chunks_exact(inn).zip(yrow.iter_mut()) {
                *yv += wrow.iter().zip(xrow).map(|(&wv, &xv)| wv * xv).sum::<f64>();
            }
        }
        y
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
        let (out, inn) = (self.w.shape[0], self.w.shape[1]);
        assert_eq!(dy.shape, vec![x.shape[0], out]);
        let mut dx = Tensor::zeros(&x.shape);
        let mut dw = Tensor::zeros(&self.w.shape);
        let mut db = Tensor::zeros(&self.b.shape);
        for (xrow, (dyrow, dxrow)) in x
            .data
            .chunks_exact(inn)
            .zip(dy.data.chunks_exact(out).zip(dx.data.chunks_exact_mut(inn)))
        {
            for (o, &dv) in dyrow.iter().enumerate() {
                db.data[o] += dv;
                let wrow = &self.w.data[o * inn..(o + 1) * inn];
                let dwrow = &mut dw.data[o * inn..(o + 1) * inn];
                for ((dxv, (dwv, &wv)), &xv) in
                    dxrow.iter_mut().zip(dwrow.iter_mut().zip(wrow)).zip(xrow)
                {
                    *dwv += dv * xv;
                    *dxv += dv * wv;
                }
            }
        }
        (dx, dw, db)
    }
}

// ── Softmax and cross-entropy ───────────────────────────────────────────────

/// Row-wise softmax of a (t, c) tensor, max-shifted for stability.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    assert_eq!(logits.shape.len(), 2);
    let c = logits.shape[1];
    let mut y = Tensor::zeros(&logits.shape);
    for (lrow, yrow) in logits.data.chunks_exact(c).zip(y.data.chunks_exact_mut(c)) {
        let m = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (yv, &lv) in yrow.iter_mut().zip(lrow) {
            *yv = (lv - m).exp();
            z += *yv;
        }
        for yv in yrow.iter_mut() {
            *yv /= z;
        }
    }
    y
}

/// Mean cross-entropy between target rows and predicted rows, with
/// predictions clamped to at least 1e-12 inside the log.
pub fn ce_loss(probs: &Tensor, targets: &Tensor) -> f64 {
    assert_eq!(probs.shape, targets.shape);
    let n = probs.shape[0] as f64;
    let mut loss = 0.0;
    for (&p, &y) in probs.data.iter().zip(&targets.data) {
        if y != 0.0 {
            loss -= y * p.max(1e-12).ln();
        }
    }
    loss / n
}

/// Gradient of `ce_loss(softmax_rows(logits), targets)` with respect to the
/// logits: (p - y) / n.
pub fn ce_grad_logits(probs: &Tensor, targets: &Tensor) -> Tensor {
    assert_eq!(probs.shape, targets.shape);
    let n = probs.shape[0] as f64;
    Tensor {
        shape: probs.shape.clone(),
        data: probs.data.iter().zip(&targets.data).map(|(&p, &y)| (p - y) / n).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data)
    }

    /// Central-difference check of df/dx against an analytic gradient.
    fn check_grad(
        x: &Tensor,
        analytic: &Tensor,
        mut f: impl FnMut(&Tensor) -> f64,
        tol: f64,
    ) {
        let h = 1e-5;
        let mut x = x.clone();
        for i in 0..x.numel() {
            let orig = x.data[i];
            x.data[i] = orig + h;
            let fp = f(&x);
            x.data[i] = orig - h;
            let fm = f(&x);
            x.data[i] = orig;
            let num = (fp - fm) / (2.0 * h);
            let a = analytic.data[i];
            let rel = (a - num).abs() / f64::max(1.0, f64::max(a.abs(), num.abs()));
            assert!(rel < tol, "component {i}: analytic {a} vs numeric {num}");
        }
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        k.data[(1 * 3 + 1) * 1] = 1.0; // center tap
        let conv = Conv2d::new(k, Tensor::zeros(&[1]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&[5, 7, 1], &mut rng);
        assert_eq!(conv.forward(&x).data, x.data);
    }

    #[test]
    fn conv_same_padding_treats_outside_as_zero() {
        // All-ones 3x3 kernel over an all-ones image: interior sums 9 cells,
        // edges 6, corners 4.
        let k = Tensor::from_vec(&[3, 3, 1, 1], vec![1.0; 9]);
        let conv = Conv2d::new(k, Tensor::zeros(&[1]));
        let x = Tensor::from_vec(&[3, 3, 1], vec![1.0; 9]);
        let y = conv.forward(&x);
        assert_eq!(y.data, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&[5, 6, 2], &mut rng);
        let conv = Conv2d::new(
            rand_tensor(&[3, 3, 2, 3], &mut rng),
            rand_tensor(&[3], &mut rng),
        );
        // Scalar loss: weighted sum of outputs, weights fixed.
        let wsum = rand_tensor(&[5, 6, 3], &mut rng);
        let loss = |c: &Conv2d, x: &Tensor| {
            c.forward(x).data.iter().zip(&wsum.data).map(|(&a, &b)| a * b).sum::<f64>()
        };
        let (dx, dw, db) = conv.backward(&x, &wsum);
        check_grad(&x, &dx, |xt| loss(&conv, xt), 1e-6);
        check_grad(&conv.w, &dw, |wt| loss(&Conv2d { w: wt.clone(), b: conv.b.clone() }, &x), 1e-6);
        check_grad(&conv.b, &db, |bt| loss(&Conv2d { w: conv.w.clone(), b: bt.clone() }, &x), 1e-6);
    }

    #[test]
    fn maxpool_ceil_shapes_and_first_index_ties() {
        // 3x3 input, 2x2 pool -> 2x2 output with clipped edge windows.
        let x = Tensor::from_vec(
            &[3, 3, 1],
            vec![1.0, 1.0, 2.0, 1.0, 1.0, 0.0, 5.0, 4.0, 3.0],
        );
        let pool = MaxPool { ph: 2, pw: 2 };
        let (y, arg) = pool.forward(&x);
        assert_eq!(y.shape, vec![2, 2, 1]);
        assert_eq!(y.data, vec![1.0, 2.0, 5.0, 3.0]);
        // Four tied 1.0s in the first window: gradient goes to index 0 only.
        assert_eq!(arg[0], 0);
        let dy = Tensor::from_vec(&[2, 2, 1], vec![1.0, 1.0, 1.0, 1.0]);
        let dx = pool.backward(&[3, 3, 1], &arg, &dy);
        assert_eq!(dx.data, vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = rand_tensor(&[6, 5, 3], &mut rng);
        let pool = MaxPool { ph: 2, pw: 2 };
        let wsum = rand_tensor(&[3, 3, 3], &mut rng);
        let (_, arg) = pool.forward(&x);
        let dx = pool.backward(&x.shape, &arg, &wsum);
        check_grad(&x, &dx, |xt| {
            pool.forward(xt).0.data.iter().zip(&wsum.data).map(|(&a, &b)| a * b).sum()
        }, 1e-6);
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = rand_tensor(&[4, 5], &mut rng);
        let dense = Dense::new(rand_tensor(&[3, 5], &mut rng), rand_tensor(&[3], &mut rng));
        let wsum = rand_tensor(&[4, 3], &mut rng);
        let (dx, dw, db) = dense.backward(&x, &wsum);
        let loss = |d: &Dense, x: &Tensor| {
            d.forward(x).data.iter().zip(&wsum.data).map(|(&a, &b)| a * b).sum::<f64>()
        };
        check_grad(&x, &dx, |xt| loss(&dense, xt), 1e-6);
        check_grad(&dense.w, &dw, |wt| loss(&Dense { w: wt.clone(), b: dense.b.clone() }, &x), 1e-6);
        check_grad(&dense.b, &db, |bt| loss(&Dense { w: dense.w.clone(), b: bt.clone() }, &x), 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_match_two_logit_example() {
        let y = softmax_rows(&Tensor::from_vec(&[1, 2], vec![1.0, 0.0]));
        assert!((y.data[0] - 0.731_058_578_630_0049).abs() < 1e-12);
        assert!((y.data[0] + y.data[1] - 1.0).abs() < 1e-15);
        // Extreme logits must not overflow.
        let y = softmax_rows(&Tensor::from_vec(&[1, 2], vec![1000.0, -1000.0]));
        assert!((y.data[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ce_loss_frozen_values() {
        // One-hot target, p(correct) = 0.8: loss = -ln 0.8.
        let probs = Tensor::from_vec(&[1, 2], vec![0.8, 0.2]);
        let target = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]);
        assert!((ce_loss(&probs, &target) - 0.223_143_551_314_2097).abs() < 1e-12);
        // Uniform over 4 classes: loss = ln 4.
        let probs = Tensor::from_vec(&[1, 4], vec![0.25; 4]);
        let target = Tensor::from_vec(&[1, 4], vec![0.0, 1.0, 0.0, 0.0]);
        assert!((ce_loss(&probs, &target) - 1.386_294_361_119_8906).abs() < 1e-12);
        // Zero probability on the target class stays finite via the clamp.
        let probs = Tensor::from_vec(&[1, 2], vec![0.0, 1.0]);
        let target = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]);
        assert!(ce_loss(&probs, &target).is_finite());
    }

    #[test]
    fn ce_logit_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let logits = rand_tensor(&[3, 4], &mut rng);
        let mut targets = Tensor::zeros(&[3, 4]);
        for t in 0..3 {
            targets.data[t * 4 + rng.random_range(0..4)] = 1.0;
        }
        let probs = softmax_rows(&logits);
        let grad = ce_grad_logits(&probs, &targets);
        let h = 1e-6;
        let mut l = logits.clone();
        for i in 0..l.numel() {
            let orig = l.data[i];
            l.data[i] = orig + h;
            let fp = ce_loss(&softmax_rows(&l), &targets);
            l.data[i] = orig - h;
            let fm = ce_loss(&softmax_rows(&l), &targets);
            l.data[i] = orig;
            let num = (fp - fm) / (2.0 * h);
            assert!((grad.data[i] - num).abs() < 1e-8);
        }
        // Rows of the logit gradient sum to zero.
        for row in grad.data.chunks_exact(4) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
