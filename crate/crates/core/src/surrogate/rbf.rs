//! Inverse-multiquadric radial basis expansion with an affine tail,
//! f_k(x) = sum_i w_ki / sqrt(|x - c_i|^2 + sigma^2) + a_k + b_k . x.
//! Centers sit on a fixed uniform lattice and do not train.

use super::InitScheme;
use crate::ad::{Tape, TapeVar};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Debug)]
pub struct RadialBasis {
    centers: Vec<[f64; 2]>,
    sigma: f64,
    out_dim: usize,
    /// Per output: center weights then [a, bx, by].
    params: Vec<f64>,
}

impl RadialBasis {
    pub fn with_centers(centers: Vec<[f64; 2]>, sigma: f64, out_dim: usize) -> Result<RadialBasis> {
        if centers.is_empty() || out_dim == 0 || !(sigma > 0.0) {
            return Err(Error::contract(format!(
                "bad radial basis: {} centers, sigma = {sigma}, out_dim = {out_dim}",
                centers.len()
            )));
        }
        let nc = centers.len();
        Ok(RadialBasis {
            centers,
            sigma,
            out_dim,
            params: vec![0.0; out_dim * (nc + 3)],
        })
    }

    /// Uniform lattice with spacing h filling [lo, hi): (hi - lo)/h centers
    /// per axis, matching the mesh-size counting of the comparison tables.
    pub fn from_span(lo: f64, hi: f64, h: f64, sigma: f64, out_dim: usize) -> Result<RadialBasis> {
        let n = ((hi - lo) / h).round() as usize;
        if n == 0 {
            return Err(Error::contract("empty radial basis lattice"));
        }
        let mut centers = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                centers.push([lo + ix as f64 * h, lo + iy as f64 * h]);
            }
        }
        RadialBasis::with_centers(centers, sigma, out_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    pub fn center_count(&self) -> usize {
        self.centers.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn block(&self, k: usize) -> (&[f64], &[f64]) {
        let nc = self.centers.len();
        let base = k * (nc + 3);
        (&self.params[base..base + nc], &self.params[base + nc..base + nc + 3])
    }

    pub fn evaluate(&self, x: &[f64], out: &mut [f64]) {
        let s2 = self.sigma * self.sigma;
        out.fill(0.0);
        // One pass over the centers feeds every output component.
        for (i, c) in self.centers.iter().enumerate() {
            let dx = x[0] - c[0];
            let dy = x[1] - c[1];
            let g = 1.0 / (dx * dx + dy * dy + s2).sqrt();
            for k in 0..self.out_dim {
                let (w, _) = self.block(k);
                out[k] += w[i] * g;
            }
        }
        for k in 0..self.out_dim {
            let (_, aff) = self.block(k);
            out[k] += aff[0] + aff[1] * x[0] + aff[2] * x[1];
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
        let s2 = self.sigma * self.sigma;
        let nc = self.centers.len();
        out.fill(0.0);
        let mut gx = 0.0;
        let mut gy = 0.0;
        let want_input = grad_input.is_some();
        for (i, c) in self.centers.iter().enumerate() {
            let dx = x[0] - c[0];
            let dy = x[1] - c[1];
            let g = 1.0 / (dx * dx + dy * dy + s2).sqrt();
            let g3 = g * g * g;
            for k in 0..self.out_dim {
                let base = k * (nc + 3);
                let w = self.params[base + i];
                out[k] += w * g;
                if let Some(gp) = grad_params.as_deref_mut() {
                    gp[base + i] += seed[k] * g;
                }
                if want_input {
                    let f = seed[k] * w * g3;
                    gx -= f * dx;
                    gy -= f * dy;
                }
            }
        }
        for k in 0..self.out_dim {
            let base = k * (nc + 3) + nc;
            let aff = &self.params[base..base + 3];
            out[k] += aff[0] + aff[1] * x[0] + aff[2] * x[1];
            gx += seed[k] * aff[1];
            gy += seed[k] * aff[2];
            if let Some(gp) = grad_params.as_deref_mut() {
                gp[base] += seed[k];
                gp[base + 1] += seed[k] * x[0];
                gp[base + 2] += seed[k] * x[1];
            }
        }
        if let Some(gi) = grad_input {
            gi[0] = gx;
            gi[1] = gy;
        }
    }

    pub fn parameter_vector(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn load_parameters(&mut self, v: &[f64]) {
        self.params.copy_from_slice(v);
    }

    pub fn initialize(&mut self, scheme: &InitScheme) -> Result<()> {
        match scheme {
            InitScheme::Zeros => self.params.fill(0.0),
            InitScheme::Gaussian { mean, std, seed } => {
                let mut rng = ChaCha12Rng::seed_from_u64(*seed);
                let dist = Normal::new(*mean, *std)
                    .map_err(|e| Error::contract(format!("bad gaussian init: {e}")))?;
                for v in self.params.iter_mut() {
                    *v = dist.sample(&mut rng);
                }
            }
            _ => return Err(Error::contract("radial basis supports zeros or gaussian init")),
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
        let nc = self.centers.len();
        let s2 = self.sigma * self.sigma;
        // Kernel values as tape nodes (live in x when x_vars given).
        let mut kernels = Vec::with_capacity(nc);
        for c in &self.centers {
            let g = match x_vars {
                Some(xv) => {
                    let dx = tape.add_const(xv[0], -c[0]);
                    let dy = tape.add_const(xv[1], -c[1]);
                    let dx2 = tape.mul(dx, dx);
                    let dy2 = tape.mul(dy, dy);
                    let r2 = tape.add(dx2, dy2);
                    let arg = tape.add_const(r2, s2);
                    let root = tape.sqrt(arg)?;
                    let one = tape.constant(1.0);
                    tape.div(one, root)?
                }
                None => {
                    let dx = x[0] - c[0];
                    let dy = x[1] - c[1];
                    tape.constant(1.0 / (dx * dx + dy * dy + s2).sqrt())
                }
            };
            kernels.push(g);
        }
        let mut outs = Vec::with_capacity(self.out_dim);
        for k in 0..self.out_dim {
            let base = k * (nc + 3);
            let ws: Vec<TapeVar> = match theta {
                Some(th) => th[base..base + nc].to_vec(),
                None => self.params[base..base + nc]
                    .iter()
                    .map(|&w| tape.constant(w))
                    .collect(),
            };
            let mut acc = tape.dot(&ws, &kernels)?;
            let (a, bx, by) = match theta {
                Some(th) => (th[base + nc], th[base + nc + 1], th[base + nc + 2]),
                None => (
                    tape.constant(self.params[base + nc]),
                    tape.constant(self.params[base + nc + 1]),
                    tape.constant(self.params[base + nc + 2]),
                ),
            };
            acc = tape.add(acc, a);
            let (xt, yt) = match x_vars {
                Some(xv) => (xv[0], xv[1]),
                None => (tape.constant(x[0]), tape.constant(x[1])),
            };
            let bxx = tape.mul(bx, xt);
            let byy = tape.mul(by, yt);
            acc = tape.add(acc, bxx);
            acc = tape.add(acc, byy);
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
