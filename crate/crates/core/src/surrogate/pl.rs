//! Piecewise linear interpolant on a uniform square lattice, each cell split
//! along the lower-left to upper-right diagonal. Nodal values are the
//! parameters, one grid per output component.

use super::InitScheme;
use crate::ad::{Tape, TapeVar};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Debug)]
pub struct PiecewiseLinear {
    lo: f64,
    h: f64,
    /// Nodes per axis; the triangulated square spans [lo, lo + (n-1) h].
    n: usize,
    out_dim: usize,
    /// Per output component, node (ix, iy) at index iy * n + ix.
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn with_nodes(lo: f64, h: f64, n: usize, out_dim: usize) -> Result<PiecewiseLinear> {
        if n < 2 || out_dim == 0 || !(h > 0.0) {
            return Err(Error::contract(format!(
                "bad piecewise-linear grid: n = {n}, h = {h}, out_dim = {out_dim}"
            )));
        }
        Ok(PiecewiseLinear {
            lo,
            h,
            n,
            out_dim,
            values: vec![0.0; out_dim * n * n],
        })
    }

    /// Lattice with spacing `h` filling [lo, hi): (hi - lo)/h nodes per axis,
    /// the mesh-size counting used by the comparison tables (h = 2 on
    /// [0, 20]^2 gives 100 nodes per output).
    pub fn from_span(lo: f64, hi: f64, h: f64, out_dim: usize) -> Result<PiecewiseLinear> {
        let n = ((hi - lo) / h).round() as usize;
        PiecewiseLinear::with_nodes(lo, h, n, out_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    pub fn nodes_per_output(&self) -> usize {
        self.n * self.n
    }

    pub fn parameter_count(&self) -> usize {
        self.out_dim * self.n * self.n
    }

    /// (origin, spacing, nodes per axis), enough to rebuild the lattice.
    pub fn grid(&self) -> (f64, f64, usize) {
        (self.lo, self.h, self.n)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.lo, self.lo + (self.n - 1) as f64 * self.h)
    }

    pub fn node_value_mut(&mut self, comp: usize, ix: usize, iy: usize) -> &mut f64 {
        &mut self.values[comp * self.n * self.n + iy * self.n + ix]
    }

    pub fn node_coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.h
    }

    /// Cell and barycentric data for a query; errors outside the lattice.
    /// Points on a cell diagonal resolve to the lower triangle.
    fn locate(&self, x: &[f64]) -> Result<CellPoint> {
        let (lo, hi) = self.span();
        for &c in x {
            if !(lo..=hi).contains(&c) {
                return Err(Error::domain(
                    "piecewise-linear eval",
                    format!("query {x:?} outside grid square [{lo}, {hi}]^2"),
                ));
            }
        }
        let max_cell = self.n - 2;
        let fx = (x[0] - self.lo) / self.h;
        let fy = (x[1] - self.lo) / self.h;
        let ix = (fx.floor() as usize).min(max_cell);
        let iy = (fy.floor() as usize).min(max_cell);
        let s = fx - ix as f64;
        let t = fy - iy as f64;
        Ok(CellPoint { ix, iy, s, t })
    }

    /// Node indices and interpolation weights for the triangle containing the
    /// point, along with the (constant) gradient factors per unit s/t.
    fn triangle(&self, p: &CellPoint) -> [(usize, f64, f64, f64); 3] {
        let base = p.iy * self.n + p.ix;
        let (n00, n10, n01, n11) = (base, base + 1, base + self.n, base + self.n + 1);
        if p.s >= p.t {
            // Lower triangle (0,0)-(1,0)-(1,1): w = (1-s, s-t, t),
            // value = v00 + (v10-v00) s + (v11-v10) t.
            [
                (n00, 1.0 - p.s, -1.0, 0.0),
                (n10, p.s - p.t, 1.0, -1.0),
                (n11, p.t, 0.0, 1.0),
            ]
        } else {
            // Upper triangle (0,0)-(1,1)-(0,1): w = (1-t, s, t-s).
            [
                (n00, 1.0 - p.t, 0.0, -1.0),
                (n11, p.s, 1.0, 0.0),
                (n01, p.t - p.s, -1.0, 1.0),
            ]
        }
    }

    pub fn evaluate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.locate(x)?;
        let tri = self.triangle(&p);
        let nn = self.n * self.n;
        for k in 0..self.out_dim {
            let vals = &self.values[k * nn..(k + 1) * nn];
            out[k] = tri.iter().map(|&(id, w, _, _)| w * vals[id]).sum();
        }
        Ok(())
    }

    pub fn vjp(
        &self,
        x: &[f64],
        seed: &[f64],
        out: &mut [f64],
        grad_input: Option<&mut [f64]>,
        mut grad_params: Option<&mut [f64]>,
    ) -> Result<()> {
        let p = self.locate(x)?;
        let tri = self.triangle(&p);
        let nn = self.n * self.n;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for k in 0..self.out_dim {
            let vals = &self.values[k * nn..(k + 1) * nn];
            let mut v = 0.0;
            let mut ds = 0.0;
            let mut dt = 0.0;
            for &(id, w, fs, ft) in &tri {
                v += w * vals[id];
                ds += fs * vals[id];
                dt += ft * vals[id];
            }
            out[k] = v;
            gx += seed[k] * ds / self.h;
            gy += seed[k] * dt / self.h;
            if let Some(gp) = grad_params.as_deref_mut() {
                for &(id, w, _, _) in &tri {
                    gp[k * nn + id] += seed[k] * w;
                }
            }
        }
        if let Some(gi) = grad_input {
            gi[0] = gx;
            gi[1] = gy;
        }
        Ok(())
    }

    pub fn parameter_vector(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn load_parameters(&mut self, v: &[f64]) {
        self.values.copy_from_slice(v);
    }

    pub fn initialize(&mut self, scheme: &InitScheme) -> Result<()> {
        match scheme {
            InitScheme::Zeros => self.values.fill(0.0),
            InitScheme::Gaussian { mean, std, seed } => {
                let mut rng = ChaCha12Rng::seed_from_u64(*seed);
                let dist = Normal::new(*mean, *std)
                    .map_err(|e| Error::contract(format!("bad gaussian init: {e}")))?;
                for v in self.values.iter_mut() {
                    *v = dist.sample(&mut rng);
                }
            }
            _ => {
                return Err(Error::contract(
                    "piecewise-linear models support zeros or gaussian init",
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
        let p = self.locate(x)?;
        let tri = self.triangle(&p);
        let nn = self.n * self.n;
        let mut outs = Vec::with_capacity(self.out_dim);
        for k in 0..self.out_dim {
            // value = sum_w w_i v_i with w affine in (s, t); rebuild the same
            // expression from tape vars so derivatives flow to whichever side
            // is live.
            let mut acc = tape.constant(0.0);
            for &(id, w, fs, ft) in &tri {
                let v = match theta {
                    Some(th) => th[k * nn + id],
                    None => tape.constant(self.values[k * nn + id]),
                };
                let wvar = match x_vars {
                    Some(xv) => {
                        // w = w0 + fs * (x - x0)/h + ft * (y - y0)/h around the
                        // query point.
                        let sx = tape.scale(xv[0], fs / self.h);
                        let sy = tape.scale(xv[1], ft / self.h);
                        let lin = tape.add(sx, sy);
                        let w0 = w - (fs * x[0] + ft * x[1]) / self.h;
                        tape.add_const(lin, w0)
                    }
                    None => tape.constant(w),
                };
                let term = tape.mul(wvar, v);
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

struct CellPoint {
    ix: usize,
    iy: usize,
    s: f64,
    t: f64,
}
