//! Constant symmetric 3x3 stiffness in Voigt form: strain [e11, e22, gamma12]
//! to stress [s11, s22, s12]. The six independent entries are the trainable
//! parameters, ordered [c11, c12, c13, c22, c23, c33].

use super::InitScheme;
use crate::ad::{Tape, TapeVar};
use crate::error::{Error, Result};
use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetricTensor3 {
    /// Upper triangle row-major: c11, c12, c13, c22, c23, c33.
    pub c: [f64; 6],
}

/// (row, col) of each packed entry.
const POS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

impl SymmetricTensor3 {
    pub fn new(c: [f64; 6]) -> SymmetricTensor3 {
        SymmetricTensor3 { c }
    }

    pub fn zero() -> SymmetricTensor3 {
        SymmetricTensor3 { c: [0.0; 6] }
    }

    /// Plane-stress isotropic stiffness with engineering shear strain.
    pub fn isotropic_plane_stress(e: f64, nu: f64) -> SymmetricTensor3 {
        let f = e / (1.0 - nu * nu);
        SymmetricTensor3 {
            c: [f, f * nu, 0.0, f, 0.0, f * (1.0 - nu) / 2.0],
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let c = &self.c;
        Matrix3::new(c[0], c[1], c[2], c[1], c[3], c[4], c[2], c[4], c[5])
    }

    pub fn from_matrix_symmetrized(m: &Matrix3<f64>) -> SymmetricTensor3 {
        let s = (m + m.transpose()) * 0.5;
        SymmetricTensor3 {
            c: [s[(0, 0)], s[(0, 1)], s[(0, 2)], s[(1, 1)], s[(1, 2)], s[(2, 2)]],
        }
    }

    /// Convex blend (1 - t) self + t other.
    pub fn lerp(&self, other: &SymmetricTensor3, t: f64) -> SymmetricTensor3 {
        let mut c = [0.0; 6];
        for i in 0..6 {
            c[i] = (1.0 - t) * self.c[i] + t * other.c[i];
        }
        SymmetricTensor3 { c }
    }

    pub fn is_spd(&self, tol: f64) -> bool {
        let eig = self.matrix().symmetric_eigen();
        eig.eigenvalues.iter().all(|&l| l > tol)
    }

    #[inline]
    pub fn apply(&self, e: &[f64; 3]) -> [f64; 3] {
        let c = &self.c;
        [
            c[0] * e[0] + c[1] * e[1] + c[2] * e[2],
            c[1] * e[0] + c[3] * e[1] + c[4] * e[2],
            c[2] * e[0] + c[4] * e[1] + c[5] * e[2],
        ]
    }

    pub fn evaluate(&self, x: &[f64], out: &mut [f64]) {
        let s = self.apply(&[x[0], x[1], x[2]]);
        out.copy_from_slice(&s);
    }

    pub fn vjp(
        &self,
        x: &[f64],
        seed: &[f64],
        out: &mut [f64],
        grad_input: Option<&mut [f64]>,
        grad_params: Option<&mut [f64]>,
    ) {
        self.evaluate(x, out);
        if let Some(gi) = grad_input {
            // d s / d e is the (symmetric) matrix itself.
            let m = self.matrix();
            for j in 0..3 {
                gi[j] = (0..3).map(|i| seed[i] * m[(i, j)]).sum();
            }
        }
        if let Some(gp) = grad_params {
            for (p, &(i, j)) in POS.iter().enumerate() {
                // c_ij feeds s_i via e_j and (off-diagonal) s_j via e_i.
                let mut g = seed[i] * x[j];
                if i != j {
                    g += seed[j] * x[i];
                }
                gp[p] += g;
            }
        }
    }

    pub fn parameter_vector(&self) -> Vec<f64> {
        self.c.to_vec()
    }

    pub fn load_parameters(&mut self, v: &[f64]) {
        self.c.copy_from_slice(v);
    }

    pub fn initialize(&mut self, scheme: &InitScheme) -> Result<()> {
        match scheme {
            InitScheme::Zeros => self.c = [0.0; 6],
            InitScheme::Gaussian { mean, std, seed } => {
                let mut rng = ChaCha12Rng::seed_from_u64(*seed);
                let dist = Normal::new(*mean, *std)
                    .map_err(|e| Error::contract(format!("bad gaussian init: {e}")))?;
                for c in self.c.iter_mut() {
                    *c = dist.sample(&mut rng);
                }
            }
            _ => return Err(Error::contract("tensor supports zeros or gaussian init")),
        }
        Ok(())
    }

    fn record_generic(
        &self,
        tape: &mut Tape,
        x: Option<&[TapeVar]>,
        xv: &[f64],
        theta: Option<&[TapeVar]>,
    ) -> Result<Vec<TapeVar>> {
        let entries: Vec<TapeVar> = match theta {
            Some(th) => th.to_vec(),
            None => self.c.iter().map(|&c| tape.constant(c)).collect(),
        };
        let xs: Vec<TapeVar> = match x {
            Some(v) => v.to_vec(),
            None => xv.iter().map(|&v| tape.constant(v)).collect(),
        };
        // Row-major full matrix from the packed entries.
        let full = [
            entries[0], entries[1], entries[2], entries[1], entries[3], entries[4], entries[2],
            entries[4], entries[5],
        ];
        tape.matvec(&full, &xs)
    }

    pub fn record_on_tape(&self, tape: &mut Tape, x: &[TapeVar]) -> Result<Vec<TapeVar>> {
        self.record_generic(tape, Some(x), &[], None)
    }

    pub fn record_with_params(
        &self,
        tape: &mut Tape,
        x: &[f64],
        theta: &[TapeVar],
    ) -> Result<Vec<TapeVar>> {
        self.record_generic(tape, None, x, Some(theta))
    }
}
