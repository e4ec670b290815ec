//! Reverse-mode automatic differentiation on a write-once tape.
//!
//! Scalar operations append nodes to a Wengert list with their local partials
//! precomputed; two composite records (dot product, dense linear solve) keep
//! vector work off the per-node path. The backward sweep walks node ids in
//! descending order, which fixes the accumulation order and makes gradients
//! bit-reproducible run to run. Backward is read-only over the tape: it can
//! be repeated, and a longer expression can be recorded afterwards.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Handle to a recorded scalar. Cheap to copy; only valid for the tape that
/// produced it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TapeVar(u32);

impl TapeVar {
    pub fn id(self) -> usize {
        self.0 as usize
    }
}

enum Op {
    /// Differentiable input.
    Leaf,
    /// Recorded constant; receives no adjoint.
    Const,
    Un { a: u32, da: f64 },
    Bin { a: u32, b: u32, da: f64, db: f64 },
    Dot { rec: u32 },
    SolveOut { rec: u32, comp: u32 },
}

struct Node {
    value: f64,
    op: Op,
}

struct DotRecord {
    xs: Vec<u32>,
    ys: Vec<u32>,
}

struct SolveRecord {
    n: usize,
    /// Row-major ids of the matrix entries.
    a_ids: Vec<u32>,
    b_ids: Vec<u32>,
    a_vals: Vec<f64>,
    /// Forward solution, kept for the adjoint rule.
    u: Vec<f64>,
    first_out: u32,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    dots: Vec<DotRecord>,
    solves: Vec<SolveRecord>,
}

/// Adjoints from one backward sweep, indexed by tape variable.
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    /// d(output)/d(var). Meaningful for leaves; interior nodes report the
    /// adjoint that flowed through them.
    pub fn wrt(&self, v: TapeVar) -> f64 {
        self.adj[v.id()]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recordings but keeps allocations for reuse in hot loops.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.dots.clear();
        self.solves.clear();
    }

    pub fn value(&self, v: TapeVar) -> f64 {
        self.nodes[v.id()].value
    }

    fn push(&mut self, value: f64, op: Op) -> TapeVar {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { value, op });
        TapeVar(id)
    }

    /// Differentiable input variable.
    pub fn var(&mut self, value: f64) -> TapeVar {
        self.push(value, Op::Leaf)
    }

    pub fn vars(&mut self, values: &[f64]) -> Vec<TapeVar> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Constant: participates in values, receives no adjoint.
    pub fn constant(&mut self, value: f64) -> TapeVar {
        self.push(value, Op::Const)
    }

    pub fn add(&mut self, a: TapeVar, b: TapeVar) -> TapeVar {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Bin { a: a.0, b: b.0, da: 1.0, db: 1.0 })
    }

    pub fn sub(&mut self, a: TapeVar, b: TapeVar) -> TapeVar {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Bin { a: a.0, b: b.0, da: 1.0, db: -1.0 })
    }

    pub fn mul(&mut self, a: TapeVar, b: TapeVar) -> TapeVar {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(va * vb, Op::Bin { a: a.0, b: b.0, da: vb, db: va })
    }

    pub fn div(&mut self, a: TapeVar, b: TapeVar) -> Result<TapeVar> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb == 0.0 {
            return Err(Error::domain_at("div", self.nodes.len(), "division by zero"));
        }
        Ok(self.push(
            va / vb,
            Op::Bin { a: a.0, b: b.0, da: 1.0 / vb, db: -va / (vb * vb) },
        ))
    }

    pub fn neg(&mut self, a: TapeVar) -> TapeVar {
        let v = -self.value(a);
        self.push(v, Op::Un { a: a.0, da: -1.0 })
    }

    pub fn scale(&mut self, a: TapeVar, c: f64) -> TapeVar {
        let v = c * self.value(a);
        self.push(v, Op::Un { a: a.0, da: c })
    }

    pub fn add_const(&mut self, a: TapeVar, c: f64) -> TapeVar {
        let v = self.value(a) + c;
        self.push(v, Op::Un { a: a.0, da: 1.0 })
    }

    pub fn powi(&mut self, a: TapeVar, k: i32) -> TapeVar {
        let va = self.value(a);
        let v = va.powi(k);
        let da = if k == 0 { 0.0 } else { f64::from(k) * va.powi(k - 1) };
        self.push(v, Op::Un { a: a.0, da })
    }

    /// a^c for constant real exponent; requires a > 0 unless c is integral.
    pub fn powf(&mut self, a: TapeVar, c: f64) -> Result<TapeVar> {
        let va = self.value(a);
        if va <= 0.0 && c.fract() != 0.0 {
            return Err(Error::domain_at(
                "powf",
                self.nodes.len(),
                format!("base {va} with non-integral exponent {c}"),
            ));
        }
        let v = va.powf(c);
        Ok(self.push(v, Op::Un { a: a.0, da: c * va.powf(c - 1.0) }))
    }

    /// a^b with both on tape; requires a > 0.
    pub fn pow(&mut self, a: TapeVar, b: TapeVar) -> Result<TapeVar> {
        let (va, vb) = (self.value(a), self.value(b));
        if va <= 0.0 {
            return Err(Error::domain_at(
                "pow",
                self.nodes.len(),
                format!("non-positive base {va}"),
            ));
        }
        let v = va.powf(vb);
        Ok(self.push(
            v,
            Op::Bin { a: a.0, b: b.0, da: vb * va.powf(vb - 1.0), db: v * va.ln() },
        ))
    }

    pub fn exp(&mut self, a: TapeVar) -> TapeVar {
        let v = self.value(a).exp();
        self.push(v, Op::Un { a: a.0, da: v })
    }

    pub fn ln(&mut self, a: TapeVar) -> Result<TapeVar> {
        let va = self.value(a);
        if va <= 0.0 {
            return Err(Error::domain_at(
                "ln",
                self.nodes.len(),
                format!("non-positive argument {va}"),
            ));
        }
        Ok(self.push(va.ln(), Op::Un { a: a.0, da: 1.0 / va }))
    }

    pub fn sqrt(&mut self, a: TapeVar) -> Result<TapeVar> {
        let va = self.value(a);
        if va < 0.0 {
            return Err(Error::domain_at(
                "sqrt",
                self.nodes.len(),
                format!("negative argument {va}"),
            ));
        }
        let v = va.sqrt();
        // Partial blows up at exactly zero; treat as domain edge.
        if v == 0.0 {
            return Err(Error::domain_at("sqrt", self.nodes.len(), "zero argument has no finite derivative"));
        }
        Ok(self.push(v, Op::Un { a: a.0, da: 0.5 / v }))
    }

    pub fn tanh(&mut self, a: TapeVar) -> TapeVar {
        let v = self.value(a).tanh();
        self.push(v, Op::Un { a: a.0, da: 1.0 - v * v })
    }

    pub fn relu(&mut self, a: TapeVar) -> TapeVar {
        let va = self.value(a);
        // Subgradient 0 at the kink.
        let (v, da) = if va > 0.0 { (va, 1.0) } else { (0.0, 0.0) };
        self.push(v, Op::Un { a: a.0, da })
    }

    pub fn leaky_relu(&mut self, a: TapeVar, coef: f64) -> TapeVar {
        let va = self.value(a);
        let (v, da) = if va > 0.0 { (va, 1.0) } else { (coef * va, coef) };
        self.push(v, Op::Un { a: a.0, da })
    }

    pub fn elu(&mut self, a: TapeVar) -> TapeVar {
        let va = self.value(a);
        let (v, da) = if va > 0.0 {
            (va, 1.0)
        } else {
            let e = va.exp();
            (e - 1.0, e)
        };
        self.push(v, Op::Un { a: a.0, da })
    }

    pub fn selu(&mut self, a: TapeVar) -> TapeVar {
        const ALPHA: f64 = 1.6732632423543772;
        const LAMBDA: f64 = 1.0507009873554805;
        let va = self.value(a);
        let (v, da) = if va > 0.0 {
            (LAMBDA * va, LAMBDA)
        } else {
            let e = va.exp();
            (LAMBDA * ALPHA * (e - 1.0), LAMBDA * ALPHA * e)
        };
        self.push(v, Op::Un { a: a.0, da })
    }

    /// Ties resolve to the first argument, deterministically.
    pub fn max(&mut self, a: TapeVar, b: TapeVar) -> TapeVar {
        let (va, vb) = (self.value(a), self.value(b));
        if va >= vb {
            self.push(va, Op::Bin { a: a.0, b: b.0, da: 1.0, db: 0.0 })
        } else {
            self.push(vb, Op::Bin { a: a.0, b: b.0, da: 0.0, db: 1.0 })
        }
    }

    pub fn min(&mut self, a: TapeVar, b: TapeVar) -> TapeVar {
        let (va, vb) = (self.value(a), self.value(b));
        if va <= vb {
            self.push(va, Op::Bin { a: a.0, b: b.0, da: 1.0, db: 0.0 })
        } else {
            self.push(vb, Op::Bin { a: a.0, b: b.0, da: 0.0, db: 1.0 })
        }
    }

    pub fn sum(&mut self, xs: &[TapeVar]) -> TapeVar {
        match xs.len() {
            0 => self.constant(0.0),
            1 => xs[0],
            _ => {
                let mut acc = self.add(xs[0], xs[1]);
                for &x in &xs[2..] {
                    acc = self.add(acc, x);
                }
                acc
            }
        }
    }

    /// Inner product as one record instead of a chain of scalar nodes.
    pub fn dot(&mut self, xs: &[TapeVar], ys: &[TapeVar]) -> Result<TapeVar> {
        if xs.len() != ys.len() {
            return Err(Error::contract(format!(
                "dot length mismatch: {} vs {}",
                xs.len(),
                ys.len()
            )));
        }
        let v: f64 = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| self.value(x) * self.value(y))
            .sum();
        let rec = self.dots.len() as u32;
        self.dots.push(DotRecord {
            xs: xs.iter().map(|v| v.0).collect(),
            ys: ys.iter().map(|v| v.0).collect(),
        });
        Ok(self.push(v, Op::Dot { rec }))
    }

    /// y = M x for a row-major matrix of tape entries.
    pub fn matvec(&mut self, m: &[TapeVar], x: &[TapeVar]) -> Result<Vec<TapeVar>> {
        let n = x.len();
        if n == 0 || m.len() % n != 0 {
            return Err(Error::contract(format!(
                "matvec shape mismatch: {} entries vs {} columns",
                m.len(),
                n
            )));
        }
        (0..m.len() / n)
            .map(|i| self.dot(&m[i * n..(i + 1) * n], x))
            .collect()
    }

    /// u solving A u = b, with the adjoint rule b_adj = A^-T u_adj,
    /// A_adj = -(A^-T u_adj) u^T applied on the backward sweep.
    pub fn solve(&mut self, a: &[TapeVar], b: &[TapeVar]) -> Result<Vec<TapeVar>> {
        let n = b.len();
        if a.len() != n * n {
            return Err(Error::contract(format!(
                "solve shape mismatch: {} matrix entries for n = {n}",
                a.len()
            )));
        }
        let a_vals: Vec<f64> = a.iter().map(|&v| self.value(v)).collect();
        let mat = DMatrix::from_row_slice(n, n, &a_vals);
        let rhs = DVector::from_iterator(n, b.iter().map(|&v| self.value(v)));
        let lu = mat.lu();
        let u = lu.solve(&rhs).ok_or(Error::singular("tape solve"))?;
        let rec = self.solves.len() as u32;
        let first_out = self.nodes.len() as u32;
        self.solves.push(SolveRecord {
            n,
            a_ids: a.iter().map(|v| v.0).collect(),
            b_ids: b.iter().map(|v| v.0).collect(),
            a_vals,
            u: u.as_slice().to_vec(),
            first_out,
        });
        Ok((0..n)
            .map(|comp| {
                self.push(
                    self.solves[rec as usize].u[comp],
                    Op::SolveOut { rec, comp: comp as u32 },
                )
            })
            .collect())
    }

    /// Adjoints of `output` with respect to every recorded node. Read-only
    /// over the tape; may be called repeatedly or from several outputs.
    pub fn backward(&self, output: TapeVar) -> Result<Gradients> {
        let mut adj = vec![0.0; self.nodes.len()];
        adj[output.id()] = 1.0;
        let mut solve_bufs: Vec<Option<Vec<f64>>> = vec![None; self.solves.len()];
        for id in (0..=output.id()).rev() {
            let g = adj[id];
            match &self.nodes[id].op {
                Op::Leaf | Op::Const => {}
                Op::Un { a, da } => {
                    if g != 0.0 {
                        adj[*a as usize] += g * da;
                    }
                }
                Op::Bin { a, b, da, db } => {
                    if g != 0.0 {
                        adj[*a as usize] += g * da;
                        adj[*b as usize] += g * db;
                    }
                }
                Op::Dot { rec } => {
                    if g != 0.0 {
                        let d = &self.dots[*rec as usize];
                        for k in 0..d.xs.len() {
                            let (xi, yi) = (d.xs[k] as usize, d.ys[k] as usize);
                            let (vx, vy) = (self.nodes[xi].value, self.nodes[yi].value);
                            adj[xi] += g * vy;
                            adj[yi] += g * vx;
                        }
                    }
                }
                Op::SolveOut { rec, comp } => {
                    let r = *rec as usize;
                    let s = &self.solves[r];
                    let buf =
                        solve_bufs[r].get_or_insert_with(|| vec![0.0; s.n]);
                    buf[*comp as usize] = g;
                    // Outputs were pushed contiguously, so the lowest id is
                    // reached last on the descending sweep: all adjoints of
                    // this record are now collected.
                    if id as u32 == s.first_out {
                        let at = DMatrix::from_row_slice(s.n, s.n, &s.a_vals).transpose();
                        let ubar = DVector::from_column_slice(buf);
                        let w = at
                            .lu()
                            .solve(&ubar)
                            .ok_or(Error::singular("tape solve adjoint"))?;
                        for j in 0..s.n {
                            adj[s.b_ids[j] as usize] += w[j];
                        }
                        for i in 0..s.n {
                            let wi = w[i];
                            if wi != 0.0 {
                                for j in 0..s.n {
                                    adj[s.a_ids[i * s.n + j] as usize] -= wi * s.u[j];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { adj })
    }
}

/// Central finite difference convenience for gradient validation.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.var(3.0);
        let y = t.mul(x, x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x), 6.0);
    }

    #[test]
    fn tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.var(0.0);
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x), 1.0);
    }

    #[test]
    fn tanh_of_scaled_input() {
        // d/dx tanh(2x) at x = 1 is 2 (1 - tanh(2)^2).
        let mut t = Tape::new();
        let x = t.var(1.0);
        let x2 = t.scale(x, 2.0);
        let y = t.tanh(x2);
        let g = t.backward(y).unwrap();
        assert_relative_eq!(g.wrt(x), 0.14130164970632887, max_relative = 1e-15);
    }

    #[test]
    fn product_gradients() {
        let mut t = Tape::new();
        let a = t.var(2.0);
        let b = t.var(3.0);
        let y = t.mul(a, b);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(a), 3.0);
        assert_eq!(g.wrt(b), 2.0);
    }

    #[test]
    fn solve_diagonal_adjoint() {
        // A = diag(2, 4), b = (2, 4), output = u0 + u1.
        // dOutput/db = A^-T (1,1) = (0.5, 0.25).
        let mut t = Tape::new();
        let a00 = t.var(2.0);
        let a11 = t.var(4.0);
        let z0 = t.constant(0.0);
        let z1 = t.constant(0.0);
        let b = t.vars(&[2.0, 4.0]);
        let u = t.solve(&[a00, z0, z1, a11], &b).unwrap();
        assert_relative_eq!(t.value(u[0]), 1.0, max_relative = 1e-15);
        let s = t.add(u[0], u[1]);
        let g = t.backward(s).unwrap();
        assert_relative_eq!(g.wrt(b[0]), 0.5, max_relative = 1e-14);
        assert_relative_eq!(g.wrt(b[1]), 0.25, max_relative = 1e-14);
        // dOutput/dA00 = -w0 * u0 with w = A^-T (1,1), u0 = 1.
        assert_relative_eq!(g.wrt(a00), -0.5, max_relative = 1e-14);
        assert_relative_eq!(g.wrt(a11), -0.25, max_relative = 1e-14);
    }

    #[test]
    fn solve_generic_matches_fd() {
        let a_vals = [3.0, 1.0, -1.0, 2.5];
        let b_vals = [1.0, -2.0];
        let eval = |av: &[f64], bv: &[f64]| -> f64 {
            let mut t = Tape::new();
            let a: Vec<_> = av.iter().map(|&v| t.var(v)).collect();
            let b: Vec<_> = bv.iter().map(|&v| t.var(v)).collect();
            let u = t.solve(&a, &b).unwrap();
            let uu = t.dot(&u, &u).unwrap();
            t.value(uu)
        };
        let mut t = Tape::new();
        let a: Vec<_> = a_vals.iter().map(|&v| t.var(v)).collect();
        let b: Vec<_> = b_vals.iter().map(|&v| t.var(v)).collect();
        let u = t.solve(&a, &b).unwrap();
        let out = t.dot(&u, &u).unwrap();
        let g = t.backward(out).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let fd = central_diff(
                |x| {
                    let mut av = a_vals;
                    av[i] = x;
                    eval(&av, &b_vals)
                },
                a_vals[i],
                h,
            );
            assert_relative_eq!(g.wrt(a[i]), fd, max_relative = 1e-6);
        }
        for i in 0..2 {
            let fd = central_diff(
                |x| {
                    let mut bv = b_vals;
                    bv[i] = x;
                    eval(&a_vals, &bv)
                },
                b_vals[i],
                h,
            );
            assert_relative_eq!(g.wrt(b[i]), fd, max_relative = 1e-6);
        }
    }

    /// Composite expression exercising most of the op library.
    fn composite(t: &mut Tape, xs: &[TapeVar]) -> TapeVar {
        let a = t.tanh(xs[0]);
        let b = t.exp(xs[1]);
        let c = t.mul(a, b);
        let sq = t.mul(xs[2], xs[2]);
        let sh = t.add_const(sq, 1.0);
        let d = t.sqrt(sh).unwrap();
        let e = t.div(c, d).unwrap();
        let f = t.leaky_relu(xs[3], 0.2);
        let g = t.elu(xs[4]);
        let h = t.selu(xs[5]);
        let m = t.max(f, g);
        let s1 = t.add(m, h);
        let ln_arg = t.add_const(sq, 2.0);
        let l = t.ln(ln_arg).unwrap();
        let p = t.powf(ln_arg, 1.7).unwrap();
        let s2 = t.add(l, p);
        let s3 = t.add(s1, s2);
        let d1 = t.dot(&[xs[0], xs[1]], &[xs[2], xs[3]]).unwrap();
        let s4 = t.add(s3, d1);
        let t1 = t.sub(s4, e);
        let mn = t.min(xs[4], xs[5]);
        let t2 = t.mul(t1, t1);
        let t3 = t.add(t2, mn);
        t.add(t3, e)
    }

    #[test]
    fn composite_matches_fd_at_random_points() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..100 {
            let vals: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut t = Tape::new();
            let xs = t.vars(&vals);
            let y = composite(&mut t, &xs);
            let g = t.backward(y).unwrap();
            for i in 0..6 {
                // Step away from relu-family kinks to keep FD meaningful.
                if vals[i].abs() < 1e-3 {
                    continue;
                }
                let h = 1e-6 * vals[i].abs().max(1.0);
                let fd = central_diff(
                    |x| {
                        let mut v = vals.clone();
                        v[i] = x;
                        let mut t = Tape::new();
                        let xs = t.vars(&v);
                        let y = composite(&mut t, &xs);
                        t.value(y)
                    },
                    vals[i],
                    h,
                );
                let ad = g.wrt(xs[i]);
                let tol = 1e-6 * ad.abs().max(fd.abs()).max(1.0);
                assert!(
                    (ad - fd).abs() <= tol,
                    "component {i}: ad {ad} vs fd {fd} at {vals:?}"
                );
            }
        }
    }

    #[test]
    fn backward_is_linear_over_outputs() {
        let mut t = Tape::new();
        let xs = t.vars(&[0.3, -0.7, 1.2]);
        let f = {
            let a = t.tanh(xs[0]);
            let b = t.mul(a, xs[1]);
            t.add(b, xs[2])
        };
        let g = {
            let a = t.exp(xs[1]);
            let b = t.mul(a, xs[2]);
            t.mul(b, xs[0])
        };
        let fs = t.scale(f, 2.0);
        let gs = t.scale(g, -3.0);
        let comb = t.add(fs, gs);
        let gf = t.backward(f).unwrap();
        let gg = t.backward(g).unwrap();
        let gc = t.backward(comb).unwrap();
        for &x in &xs {
            assert_relative_eq!(
                gc.wrt(x),
                2.0 * gf.wrt(x) - 3.0 * gg.wrt(x),
                max_relative = 1e-12,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn backward_is_repeatable_bitwise() {
        let mut t = Tape::new();
        let xs = t.vars(&[0.4, 1.3, -0.2, 0.9, -1.1, 0.6]);
        let y = composite(&mut t, &xs);
        let g1 = t.backward(y).unwrap();
        let g2 = t.backward(y).unwrap();
        for &x in &xs {
            assert_eq!(g1.wrt(x).to_bits(), g2.wrt(x).to_bits());
        }
    }

    #[test]
    fn identical_recordings_give_identical_gradients() {
        let run = || {
            let mut t = Tape::new();
            let xs = t.vars(&[0.4, 1.3, -0.2, 0.9, -1.1, 0.6]);
            let y = composite(&mut t, &xs);
            let g = t.backward(y).unwrap();
            xs.iter().map(|&x| g.wrt(x).to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn domain_errors_carry_node_id() {
        let mut t = Tape::new();
        let x = t.var(0.0);
        let one = t.var(1.0);
        match t.div(one, x) {
            Err(Error::Domain { op: "div", at: Some(_), .. }) => {}
            other => panic!("expected domain error, got {other:?}"),
        }
        let neg = t.var(-1.0);
        assert!(matches!(t.ln(neg), Err(Error::Domain { op: "ln", .. })));
        assert!(matches!(t.sqrt(neg), Err(Error::Domain { op: "sqrt", .. })));
        assert!(matches!(t.pow(neg, one), Err(Error::Domain { op: "pow", .. })));
    }

    #[test]
    fn singular_solve_is_reported() {
        let mut t = Tape::new();
        let a = t.vars(&[1.0, 2.0, 2.0, 4.0]);
        let b = t.vars(&[1.0, 1.0]);
        assert!(matches!(t.solve(&a, &b), Err(Error::Singular { .. })));
    }

    #[test]
    fn recording_continues_after_backward() {
        let mut t = Tape::new();
        let x = t.var(2.0);
        let y = t.mul(x, x);
        let g1 = t.backward(y).unwrap();
        assert_eq!(g1.wrt(x), 4.0);
        let z = t.mul(y, x);
        let g2 = t.backward(z).unwrap();
        assert_eq!(g2.wrt(x), 12.0);
        // First result unaffected.
        assert_eq!(g1.wrt(x), 4.0);
    }

    #[test]
    fn matvec_matches_manual_rows() {
        let mut t = Tape::new();
        let m = t.vars(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = t.vars(&[0.5, -1.0]);
        let y = t.matvec(&m, &x).unwrap();
        assert_eq!(y.len(), 3);
        assert_relative_eq!(t.value(y[0]), 1.0 * 0.5 - 2.0, max_relative = 1e-15);
        assert_relative_eq!(t.value(y[2]), 5.0 * 0.5 - 6.0, max_relative = 1e-15);
        let s = t.sum(&y);
        let g = t.backward(s).unwrap();
        assert_relative_eq!(g.wrt(x[0]), 1.0 + 3.0 + 5.0, max_relative = 1e-15);
    }

    #[test]
    fn dot_with_repeated_variable() {
        // x . x must push adjoint twice through the same ids.
        let mut t = Tape::new();
        let x = t.vars(&[1.5, -2.0]);
        let y = t.dot(&x, &x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x[0]), 3.0);
        assert_eq!(g.wrt(x[1]), -4.0);
    }

    #[test]
    fn constants_absorb_no_gradient() {
        let mut t = Tape::new();
        let x = t.var(2.0);
        let c = t.constant(5.0);
        let y = t.mul(x, c);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x), 5.0);
        // The adjoint still reaches the constant node (it is d y / d c),
        // but a Const has no parents, so nothing propagates past it.
        assert_eq!(g.wrt(c), 2.0);
    }

    #[test]
    fn solve_then_reduce_matches_direct_solution() {
        // (bA + I) structure in miniature: scalar b scaling a matrix.
        let mut t = Tape::new();
        let b = t.var(2.0);
        let c1 = t.constant(3.0);
        let c0 = t.constant(0.0);
        let a00 = t.mul(b, c1);
        let a01 = c0;
        let a10 = c0;
        let a11 = t.add_const(b, 1.0);
        let rhs = t.vars(&[6.0, 9.0]);
        let u = t.solve(&[a00, a01, a10, a11], &rhs).unwrap();
        // u = (6/(3b), 9/(b+1)) = (1, 3) at b = 2.
        assert_relative_eq!(t.value(u[0]), 1.0, max_relative = 1e-15);
        assert_relative_eq!(t.value(u[1]), 3.0, max_relative = 1e-15);
        let s = t.add(u[0], u[1]);
        let g = t.backward(s).unwrap();
        // d/db [2/b + 9/(b+1)] = -2/b^2 - 9/(b+1)^2 = -0.5 - 1 = -1.5.
        assert_relative_eq!(g.wrt(b), -1.5, max_relative = 1e-13);
    }
}
