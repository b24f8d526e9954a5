//! Bidirectional LSTM over a (t, features) sequence. Both directions share
//! the input; their hidden states are summed elementwise, so the output is
//! (t, hidden). Gate layout inside every 4h-sized block: input, forget,
//! cell candidate, output.

use super::Tensor;
use rand_chacha::ChaCha8Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ── Single direction ────────────────────────────────────────────────────────

/// One direction's parameters: wx (4h, in), wh (4h, h), b (4h).
#[derive(Debug, Clone)]
pub struct LstmDir {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
}

/// Per-step activations kept for backprop: gate values, cell states, and
/// tanh(c), all in forward-time order for the direction.
struct DirCache {
    gates: Vec<[Vec<f64>; 4]>, // i, f, g, o per step
    c: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

#[derive(Debug, Default, Clone)]
pub struct LstmDirGrads {
    pub wx: Option<Tensor>,
    pub wh: Option<Tensor>,
    pub b: Option<Tensor>,
}

impl LstmDir {
    fn hidden(&self) -> usize {
        self.wh.shape[1]
    }

    /// Runs the recurrence over `steps` (already ordered for this direction).
    fn forward(&self, x: &Tensor, steps: &[usize]) -> DirCache {
        let inn = self.wx.shape[1];
        let hid = self.hidden();
        let mut cache = DirCache {
            gates: Vec::with_capacity(steps.len()),
            c: Vec::with_capacity(steps.len()),
            tanh_c: Vec::with_capacity(steps.len()),
            h: Vec::with_capacity(steps.len()),
        };
        let mut h_prev = vec![0.0; hid];
        let mut c_prev = vec![0.0; hid];
        for &t in steps {
            let xrow = &x.data[t * inn..(t + 1) * inn];
            let mut z = self.b.data.clone();
            for (zi, wrow) in z.iter_mut().zip(self.wx.data.chunks_exact(inn)) {
                *zi += wrow.iter().zip(xrow).map(|(&w, &v)| w * v).sum::<f64>();
            }
            for (zi, wrow) in z.iter_mut().zip(self.wh.data.chunks_exact(hid)) {
                *zi += wrow.iter().zip(&h_prev).map(|(&w, &v)| w * v).sum::<f64>();
            }
            let i: Vec<f64> = z[0..hid].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = z[hid..2 * hid].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = z[2 * hid..3 * hid].iter().map(|&v| v.tanh()).collect();
            let o: Vec<f64> = z[3 * hid..4 * hid].iter().map(|&v| sigmoid(v)).collect();
            let c: Vec<f64> = (0..hid).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
            let tc: Vec<f64> = c.iter().map(|&v| v.tanh()).collect();
            let h: Vec<f64> = (0..hid).map(|k| o[k] * tc[k]).collect();
            h_prev = h.clone();
            c_prev = c.clone();
            cache.gates.push([i, f, g, o]);
            cache.c.push(c);
            cache.tanh_c.push(tc);
            cache.h.push(h);
        }
        cache
    }

    /// BPTT for one direction. `dh_out[t]` is the upstream gradient at
    /// sequence position t; `steps` matches the forward call. Returns dx
    /// contributions added into `dx`.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        x: &Tensor,
        steps: &[usize],
        cache: &DirCache,
        dh_out: &Tensor,
        dx: &mut Tensor,
        dwx: &mut Tensor,
        dwh: &mut Tensor,
        db: &mut Tensor,
    ) {
        let inn = self.wx.shape[1];
        let hid = self.hidden();
        let mut dh_next = vec![0.0; hid];
        let mut dc_next = vec![0.0; hid];
        for (si, &t) in steps.iter().enumerate().rev() {
            let [i, f, g, o] = &cache.gates[si];
            let tc = &cache.tanh_c[si];
            let c_prev: &[f64] = if si == 0 { &[] } else { &cache.c[si - 1] };
            let h_prev: &[f64] = if si == 0 { &[] } else { &cache.h[si - 1] };

            let mut dz = vec![0.0; 4 * hid];
            let mut dc = vec![0.0; hid];
            for k in 0..hid {
                let dh = dh_out.data[t * hid + k] + dh_next[k];
                let dck = dh * o[k] * (1.0 - tc[k] * tc[k]) + dc_next[k];
                dc[k] = dck;
                let cp = if si == 0 { 0.0 } else { c_prev[k] };
                dz[k] = dck * g[k] * i[k] * (1.0 - i[k]);
                dz[hid + k] = dck * cp * f[k] * (1.0 - f[k]);
                dz[2 * hid + k] = dck * i[k] * (1.0 - g[k] * g[k]);
                dz[3 * hid + k] = dh * tc[k] * o[k] * (1.0 - o[k]);
            }
            for k in 0..hid {
                dc_next[k] = dc[k] * f[k];
            }

            let xrow = &x.data[t * inn..(t + 1) * inn];
            let dxrow = &mut dx.data[t * inn..(t + 1) * inn];
            dh_next = vec![0.0; hid];
            for (r, &dzv) in dz.iter().enumerate() {
                db.data[r] += dzv;
                let wxrow = &self.wx.data[r * inn..(r + 1) * inn];
                let dwxrow = &mut dwx.data[r * inn..(r + 1) * inn];
                for ((dxv, (dwv, &wv)), &xv) in
                    dxrow.iter_mut().zip(dwxrow.iter_mut().zip(wxrow)).zip(xrow)
                {
                    *dwv += dzv * xv;
                    *dxv += dzv * wv;
                }
                if si > 0 {
                    let whrow = &self.wh.data[r * hid..(r + 1) * hid];
                    let dwhrow = &mut dwh.data[r * hid..(r + 1) * hid];
                    for k in 0..hid {
                        dwhrow[k] += dzv * h_prev[k];
                        dh_next[k] += dzv * whrow[k];
                    }
                }
            }
        }
    }
}

// ── Bidirectional wrapper ───────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmDir,
    pub bwd: LstmDir,
}

pub struct BiLstmCache {
    fwd: DirCache,
    bwd: DirCache,
    t: usize,
}

#[derive(Debug, Clone)]
pub struct BiLstmGrads {
    pub fwd_wx: Tensor,
    pub fwd_wh: Tensor,
    pub fwd_b: Tensor,
    pub bwd_wx: Tensor,
    pub bwd_wh: Tensor,
    pub bwd_b: Tensor,
}

impl BiLstm {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> BiLstm {
        let dir = |rng: &mut ChaCha8Rng| {
            // Forget-gate bias starts at 1 so cell state survives the first
            // epochs; gradients through time vanish otherwise.
            let mut b = Tensor::zeros(&[4 * hidden]);
            b.data[hidden..2 * hidden].fill(1.0);
            LstmDir {
                wx: Tensor::glorot(&[4 * hidden, input], input, 4 * hidden, rng),
                wh: Tensor::glorot(&[4 * hidden, hidden], hidden, 4 * hidden, rng),
                b,
            }
        };
        BiLstm { fwd: dir(rng), bwd: dir(rng) }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn input(&self) -> usize {
        self.fwd.wx.shape[1]
    }

    /// Output (t, hidden): elementwise sum of the two directional passes.
    pub fn forward(&self, x: &Tensor) -> (Tensor, BiLstmCache) {
        assert_eq!(x.shape.len(), 2);
        assert_eq!(x.shape[1], self.input());
        let t = x.shape[0];
        let hid = self.hidden();
        let fwd_steps: Vec<usize> = (0..t).collect();
        let bwd_steps: Vec<usize> = (0..t).rev().collect();
        let fc = self.fwd.forward(x, &fwd_steps);
        let bc = self.bwd.forward(x, &bwd_steps);
        let mut y = Tensor::zeros(&[t, hid]);
        for (si, &tt) in fwd_steps.iter().enumerate() {
            for k in 0..hid {
                y.data[tt * hid + k] += fc.h[si][k];
            }
        }
        for (si, &tt) in bwd_steps.iter().enumerate() {
            for k in 0..hid {
                y.data[tt * hid + k] += bc.h[si][k];
            }
        }
        (y, BiLstmCache { fwd: fc, bwd: bc, t })
    }

    /// The sum couples nothing: each direction receives the full `dy`.
    pub fn backward(&self, x: &Tensor, cache: &BiLstmCache, dy: &Tensor) -> (Tensor, BiLstmGrads) {
        assert_eq!(dy.shape, vec![cache.t, self.hidden()]);
        let mut dx = Tensor::zeros(&x.shape);
        let mut g = BiLstmGrads {
            fwd_wx: Tensor::zeros(&self.fwd.wx.shape),
            fwd_wh: Tensor::zeros(&self.fwd.wh.shape),
            fwd_b: Tensor::zeros(&self.fwd.b.shape),
            bwd_wx: Tensor::zeros(&self.bwd.wx.shape),
            bwd_wh: Tensor::zeros(&self.bwd.wh.shape),
            bwd_b: Tensor::zeros(&self.bwd.b.shape),
        };
        let fwd_steps: Vec<usize> = (0..cache.t).collect();
        let bwd_steps: Vec<usize> = (0..cache.t).rev().collect();
        self.fwd.backward(x, &fwd_steps, &cache.fwd, dy, &mut dx, &mut g.fwd_wx, &mut g.fwd_wh, &mut g.fwd_b);
        self.bwd.backward(x, &bwd_steps, &cache.bwd, dy, &mut dx, &mut g.bwd_wx, &mut g.bwd_wh, &mut g.bwd_b);
        (dx, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..shape.iter().product()).map(|_| rng.random_range(-0.8..0.8)).collect();
        Tensor::from_vec(shape, data)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let z = |shape: &[usize]| Tensor::zeros(shape);
        let dir = || LstmDir { wx: z(&[8, 3]), wh: z(&[8, 2]), b: z(&[8]) };
        let lstm = BiLstm { fwd: dir(), bwd: dir() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&[4, 3], &mut rng);
        let (y, _) = lstm.forward(&x);
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_is_sum_of_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lstm = BiLstm::new(3, 4, &mut rng);
        let x = rand_tensor(&[5, 3], &mut rng);
        let (y, _) = lstm.forward(&x);

        // Zero one direction: output must drop to the other direction alone.
        let mut fwd_only = lstm.clone();
        fwd_only.bwd.wx = Tensor::zeros(&fwd_only.bwd.wx.shape);
        fwd_only.bwd.wh = Tensor::zeros(&fwd_only.bwd.wh.shape);
        fwd_only.bwd.b = Tensor::zeros(&fwd_only.bwd.b.shape);
        let mut bwd_only = lstm.clone();
        bwd_only.fwd.wx = Tensor::zeros(&bwd_only.fwd.wx.shape);
        bwd_only.fwd.wh = Tensor::zeros(&bwd_only.fwd.wh.shape);
        bwd_only.fwd.b = Tensor::zeros(&bwd_only.fwd.b.shape);
        let (yf, _) = fwd_only.forward(&x);
        let (yb, _) = bwd_only.forward(&x);
        for i in 0..y.numel() {
            assert!((y.data[i] - yf.data[i] - yb.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_matches_hand_computed_cell() {
        // One step, hidden 1, forward direction only relevant.
        let fwd = LstmDir {
            wx: Tensor::from_vec(&[4, 1], vec![0.5, -0.3, 0.8, 0.2]),
            wh: Tensor::from_vec(&[4, 1], vec![0.0; 4]),
            b: Tensor::from_vec(&[4], vec![0.1, 0.2, 0.0, -0.1]),
        };
        let zero = LstmDir {
            wx: Tensor::zeros(&[4, 1]),
            wh: Tensor::zeros(&[4, 1]),
            b: Tensor::zeros(&[4]),
        };
        let lstm = BiLstm { fwd, bwd: zero };
        let x = Tensor::from_vec(&[1, 1], vec![1.0]);
        let (y, _) = lstm.forward(&x);
        let i = sigmoid(0.5 + 0.1);
        let g = 0.8f64.tanh();
        let o = sigmoid(0.2 - 0.1);
        let expect = o * (i * g).tanh();
        assert!((y.data[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let lstm = BiLstm::new(3, 4, &mut rng);
        let x = rand_tensor(&[6, 3], &mut rng);
        let wsum = rand_tensor(&[6, 4], &mut rng);
        let loss = |l: &BiLstm, x: &Tensor| -> f64 {
            l.forward(x).0.data.iter().zip(&wsum.data).map(|(&a, &b)| a * b).sum()
        };
        let (_, cache) = lstm.forward(&x);
        let (dx, g) = lstm.backward(&x, &cache, &wsum);

        let h = 1e-5;
        let check = |analytic: &Tensor, read: &dyn Fn(&BiLstm) -> Tensor,
                     write: &dyn Fn(&mut BiLstm, Tensor)| {
            let base = read(&lstm);
            for idx in 0..base.numel() {
                let mut lp = lstm.clone();
                let mut t = base.clone();
                t.data[idx] += h;
                write(&mut lp, t);
                let fp = loss(&lp, &x);
                let mut lm = lstm.clone();
                let mut t = base.clone();
                t.data[idx] -= h;
                write(&mut lm, t);
                let fm = loss(&lm, &x);
                let num = (fp - fm) / (2.0 * h);
                let a = analytic.data[idx];
                let rel = (a - num).abs() / f64::max(1.0, f64::max(a.abs(), num.abs()));
                assert!(rel < 1e-6, "idx {idx}: analytic {a} vs numeric {num}");
            }
        };
        check(&g.fwd_wx, &|l| l.fwd.wx.clone(), &|l, t| l.fwd.wx = t);
        check(&g.fwd_wh, &|l| l.fwd.wh.clone(), &|l, t| l.fwd.wh = t);
        check(&g.fwd_b, &|l| l.fwd.b.clone(), &|l, t| l.fwd.b = t);
        check(&g.bwd_wx, &|l| l.bwd.wx.clone(), &|l, t| l.bwd.wx = t);
        check(&g.bwd_wh, &|l| l.bwd.wh.clone(), &|l, t| l.bwd.wh = t);
        check(&g.bwd_b, &|l| l.bwd.b.clone(), &|l, t| l.bwd.b = t);

        // Input gradient too.
        for idx in 0..x.numel() {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let fp = loss(&lstm, &xp);
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fm = loss(&lstm, &xm);
            let num = (fp - fm) / (2.0 * h);
            let a = dx.data[idx];
            let rel = (a - num).abs() / f64::max(1.0, f64::max(a.abs(), num.abs()));
            assert!(rel < 1e-6, "dx {idx}: analytic {a} vs numeric {num}");
        }
    }
}
