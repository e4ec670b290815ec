//! Gaussian radial-basis net: f_k(x) = sum_i w_ki exp(-sigma_ki |x - c_ki|^2)
//! with weights, shapes and centers all trainable, independently per output
//! component (4n parameters each). Shapes are constrained to sigma >= 0 and
//! re-clamped on every parameter load.

use super::InitScheme;
use crate::ad::{Tape, TapeVar};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// exp(-t) for t above this is < 9e-27, a dead contribution against any
/// accumulator this model produces; skipping the exp keeps the hot loop
/// cheap once shapes sharpen during training.
const EXP_CUTOFF: f64 = 60.0;

#[derive(Clone, Debug)]
pub struct RadialBasisNet {
    n: usize,
    out_dim: usize,
    /// Per output component: w[0..n], sigma[n..2n], centers [cx cy]*n.
    params: Vec<f64>,
}

impl RadialBasisNet {
    pub fn new(n: usize, out_dim: usize) -> Result<RadialBasisNet> {
        if n == 0 || out_dim == 0 {
            return Err(Error::contract(format!(
                "bad radial basis net: n = {n}, out_dim = {out_dim}"
            )));
        }
        Ok(RadialBasisNet {
            n,
            out_dim,
            params: vec![0.0; out_dim * 4 * n],
        })
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    pub fn center_count(&self) -> usize {
        self.n
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    #[inline]
    fn base(&self, k: usize) -> usize {
        k * 4 * self.n
    }

    fn clamp_shapes(&mut self) {
        let n = self.n;
        for k in 0..self.out_dim {
            let base = self.base(k);
            for s in self.params[base + n..base + 2 * n].iter_mut() {
                if *s < 0.0 {
                    *s = 0.0;
                }
            }
        }
    }

    pub fn evaluate(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for k in 0..self.out_dim {
            let base = self.base(k);
            let (w, rest) = self.params[base..base + 4 * n].split_at(n);
            let (sig, cen) = rest.split_at(n);
            let mut acc = 0.0;
            for i in 0..n {
                let dx = x[0] - cen[2 * i];
                let dy = x[1] - cen[2 * i + 1];
                let t = sig[i] * (dx * dx + dy * dy);
                if t < EXP_CUTOFF {
                    acc += w[i] * (-t).exp();
                }
            }
            out[k] = acc;
        }
    }

    pub fn vjp(
        &self,
        x: &[f64],
        seed: &[f64],
        out: &mut [f64],
        grad_input: Option<&mut [f64]>,
        mut grad_params: Option<&mut [f64]>,
    ) {
        let n = self.n;
        let mut gx = 0.0;
        let mut gy = 0.0;
        let want_input = grad_input.is_some();
        for k in 0..self.out_dim {
            let base = self.base(k);
            let sk = seed[k];
            let mut acc = 0.0;
            for i in 0..n {
                let w = self.params[base + i];
                let s = self.params[base + n + i];
                let cx = self.params[base + 2 * n + 2 * i];
                let cy = self.params[base + 2 * n + 2 * i + 1];
                let dx = x[0] - cx;
                let dy = x[1] - cy;
                let r2 = dx * dx + dy * dy;
                let t = s * r2;
                if t >= EXP_CUTOFF {
                    continue;
                }
                let e = (-t).exp();
                acc += w * e;
                let we = w * e;
                if let Some(gp) = grad_params.as_deref_mut() {
                    gp[base + i] += sk * e;
                    gp[base + n + i] -= sk * we * r2;
                    let f = sk * we * 2.0 * s;
                    gp[base + 2 * n + 2 * i] += f * dx;
                    gp[base + 2 * n + 2 * i + 1] += f * dy;
                }
                if want_input {
                    let f = sk * we * 2.0 * s;
                    gx -= f * dx;
                    gy -= f * dy;
                }
            }
            out[k] = acc;
        }
        if let Some(gi) = grad_input {
            gi[0] = gx;
            gi[1] = gy;
        }
    }

    pub fn parameter_vector(&self) -> Vec<f64> {
        self.params.clone()
    }

    /// Loads and re-clamps shapes onto sigma >= 0.
    pub fn load_parameters(&mut self, v: &[f64]) {
        self.params.copy_from_slice(v);
        self.clamp_shapes();
    }

    /// -inf everywhere except zero on the shape slots.
    pub fn lower_bounds(&self) -> Vec<f64> {
        let n = self.n;
        let mut lb = vec![f64::NEG_INFINITY; self.params.len()];
        for k in 0..self.out_dim {
            let base = self.base(k);
            for s in lb[base + n..base + 2 * n].iter_mut() {
                *s = 0.0;
            }
        }
        lb
    }

    pub fn initialize(&mut self, scheme: &InitScheme) -> Result<()> {
        match scheme {
            InitScheme::Zeros => self.params.fill(0.0),
            InitScheme::RbfnDefault { seed } => {
                let mut rng = ChaCha12Rng::seed_from_u64(*seed);
                let n = self.n;
                for k in 0..self.out_dim {
                    let base = self.base(k);
                    self.params[base..base + n].fill(0.0);
                    self.params[base + n..base + 2 * n].fill(1.0);
                    for i in 0..n {
                        self.params[base + 2 * n + 2 * i] = rng.gen_range(0.0..7.0);
                        self.params[base + 2 * n + 2 * i + 1] = rng.gen_range(0.0..7.0);
                    }
                }
            }
            _ => {
                return Err(Error::contract(
                    "radial basis net supports zeros or its default init",
                ))
            }
        }
        Ok(())
    }

    fn record_generic(
        &self,
        tape: &mut Tape,
        x: &[f64],
        theta: Option<&[TapeVar]>,
        x_vars: Option<&[TapeVar]>,
    ) -> Result<Vec<TapeVar>> {
        let n = self.n;
        let mut outs = Vec::with_capacity(self.out_dim);
        for k in 0..self.out_dim {
            let base = self.base(k);
            let mut acc = tape.constant(0.0);
            for i in 0..n {
                let (w, s, cx, cy) = match theta {
                    Some(th) => (
                        th[base + i],
                        th[base + n + i],
                        th[base + 2 * n + 2 * i],
                        th[base + 2 * n + 2 * i + 1],
                    ),
                    None => (
                        tape.constant(self.params[base + i]),
                        tape.constant(self.params[base + n + i]),
                        tape.constant(self.params[base + 2 * n + 2 * i]),
                        tape.constant(self.params[base + 2 * n + 2 * i + 1]),
                    ),
                };
                let (dx, dy) = match x_vars {
                    Some(xv) => (tape.sub(xv[0], cx), tape.sub(xv[1], cy)),
                    None => {
                        let xc = tape.constant(x[0]);
                        let yc = tape.constant(x[1]);
                        (tape.sub(xc, cx), tape.sub(yc, cy))
                    }
                };
                let dx2 = tape.mul(dx, dx);
                let dy2 = tape.mul(dy, dy);
                let r2 = tape.add(dx2, dy2);
                let t = tape.mul(s, r2);
                let nt = tape.neg(t);
                let e = tape.exp(nt);
                let term = tape.mul(w, e);
                acc = tape.add(acc, term);
            }
            outs.push(acc);
        }
        Ok(outs)
    }

    pub fn record_on_tape(&self, tape: &mut Tape, x: &[TapeVar]) -> Result<Vec<TapeVar>> {
        let xv = [tape.value(x[0]), tape.value(x[1])];
        self.record_generic(tape, &xv, None, Some(x))
    }

    pub fn record_with_params(
        &self,
        tape: &mut Tape,
        x: &[f64],
        theta: &[TapeVar],
    ) -> Result<Vec<TapeVar>> {
        self.record_generic(tape, x, Some(theta), None)
    }
}
