//! Forward solution with a trained or reference constitutive model: a
//! single linear solve for the plate, Newton with uniform load stepping
//! and step halving for the membrane. The tangent carries the surrogate's
//! input-Jacobian chain term, so convergence is quadratic near a root.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::membrane::{self, Material, MembraneMesh};
use crate::plate::{self, DofMap, MaterialField, QuadMesh};

#[cfg(test)]
mod tests;

#[derive(Clone, Debug)]
pub struct NewtonConfig {
    /// Residual tolerance relative to the external force norm.
    pub tol: f64,
    pub max_iters: usize,
    /// Uniform load increments tried first.
    pub load_steps: usize,
    /// Smallest admissible load increment as a fraction of the target span.
    pub min_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol: 1e-9,
            max_iters: 50,
            load_steps: 10,
            min_step: 1e-4,
        }
    }
}

impl NewtonConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.min_step > 0.0) {
            return Err(Error::contract("newton tolerances must be positive"));
        }
        if self.max_iters == 0 || self.load_steps == 0 {
            return Err(Error::contract("newton iteration counts must be positive"));
        }
        Ok(())
    }
}

/// A reduced nonlinear system R(u, p) = internal(u) - external(u, p).
pub trait ForwardSystem {
    fn dim(&self) -> usize;
    fn initial_state(&self) -> Vec<f64>;
    fn residual(&mut self, u: &[f64], p: f64) -> Result<Vec<f64>>;
    /// Residual together with its consistent state derivative.
    fn tangent(&mut self, u: &[f64], p: f64) -> Result<(Vec<f64>, DMatrix<f64>)>;
    fn external_force(&mut self, u: &[f64], p: f64) -> Result<Vec<f64>>;
    fn linear(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub state: Vec<f64>,
    /// Newton iterations summed over all load steps.
    pub newton_iters: usize,
    pub load_steps: usize,
    /// Residual norms of the iteration at the final load level, including
    /// the converged one.
    pub final_residuals: Vec<f64>,
    /// External force norm at the converged state.
    pub force_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn solve_lu(k: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let lu = k.lu();
    let b = DVector::from_column_slice(rhs);
    match lu.solve(&b) {
        Some(x) => Ok(x.as_slice().to_vec()),
        None => {
            let u = lu.u();
            let mut lo = f64::INFINITY;
            let mut hi: f64 = 0.0;
            for i in 0..u.nrows().min(u.ncols()) {
                let d = u[(i, i)].abs();
                lo = lo.min(d);
                hi = hi.max(d);
            }
            let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            Err(Error::singular_with("newton tangent", cond))
        }
    }
}

struct NewtonOutcome {
    u: Vec<f64>,
    iters: usize,
    residuals: Vec<f64>,
    force_norm: f64,
}

fn newton(
    sys: &mut dyn ForwardSystem,
    u0: &[f64],
    p: f64,
    cfg: &NewtonConfig,
) -> Result<NewtonOutcome> {
    let mut u = u0.to_vec();
    let mut residuals = Vec::new();
    for it in 0..cfg.max_iters {
        let (r, k) = sys.tangent(&u, p)?;
        let fnorm = norm(&sys.external_force(&u, p)?);
        let rnorm = norm(&r);
        residuals.push(rnorm);
        // absolute floor covers unloaded states where ‖F‖ vanishes
        let floor = 1e-13 * (1.0 + norm(&u));
        if rnorm <= cfg.tol * fnorm || rnorm <= floor {
            return Ok(NewtonOutcome {
                u,
                iters: it,
                residuals,
                force_norm: fnorm,
            });
        }
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let du = solve_lu(k, &neg_r)?;
        for (ui, di) in u.iter_mut().zip(&du) {
            *ui += di;
        }
    }
    Err(Error::NoConvergence {
        residual: *residuals.last().unwrap_or(&f64::NAN),
        load: p,
        iterations: cfg.max_iters,
    })
}

fn retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::Domain { .. } | Error::NoConvergence { .. } | Error::Singular { .. }
    )
}

/// Continue a solution branch from a converged state at `p_from` to
/// `p_to`, stepping the load uniformly and halving the increment when a
/// step fails to converge or leaves the admissible state domain.
pub fn continue_from(
    sys: &mut dyn ForwardSystem,
    u0: Vec<f64>,
    p_from: f64,
    p_to: f64,
    cfg: &NewtonConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    if u0.len() != sys.dim() {
        return Err(Error::contract("initial state length mismatch"));
    }
    let span = p_to - p_from;
    let mut u = u0;
    let mut total_iters = 0;
    let mut steps = 0;
    // stepping exists for nonlinear continuation; a linear system reaches
    // the target in one exact correction, and collapsing the schedule makes
    // the result independent of the configured step count by construction
    if span == 0.0 || sys.linear() {
        let out = newton(sys, &u, p_to, cfg)?;
        return Ok(SolveReport {
            state: out.u,
            newton_iters: out.iters,
            load_steps: 1,
            final_residuals: out.residuals,
            force_norm: out.force_norm,
        });
    }
    let mut frac = 1.0 / cfg.load_steps as f64;
    let mut t = 0.0;
    loop {
        let t_next = (t + frac).min(1.0);
        let p = if t_next >= 1.0 {
            p_to
        } else {
            p_from + span * t_next
        };
        match newton(sys, &u, p, cfg) {
            Ok(out) => {
                u = out.u;
                total_iters += out.iters;
                steps += 1;
                t = t_next;
                if t >= 1.0 {
                    return Ok(SolveReport {
                        state: u,
                        newton_iters: total_iters,
                        load_steps: steps,
                        final_residuals: out.residuals,
                        force_norm: out.force_norm,
                    });
                }
            }
            Err(e) if retryable(&e) => {
                frac /= 2.0;
                if frac < cfg.min_step {
                    return Err(match e {
                        Error::NoConvergence {
                            residual,
                            iterations,
                            ..
                        } => Error::NoConvergence {
                            residual,
                            load: p,
                            iterations,
                        },
                        other => other,
                    });
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Solve from the system's reference state at zero load up to `p`.
pub fn solve(sys: &mut dyn ForwardSystem, p: f64, cfg: &NewtonConfig) -> Result<SolveReport> {
    let u0 = sys.initial_state();
    continue_from(sys, u0, 0.0, p, cfg)
}

/// Linear plate under the parabolic edge traction: stiffness and the unit
/// traction vector are assembled once, every query is exact in one
/// correction.
pub struct PlateSystem {
    k: DMatrix<f64>,
    f_unit: Vec<f64>,
}

impl PlateSystem {
    pub fn new(mesh: &QuadMesh, dofs: &DofMap, field: &MaterialField) -> Result<PlateSystem> {
        Ok(PlateSystem {
            k: plate::stiffness(mesh, dofs, field)?,
            f_unit: plate::external_force(mesh, dofs, 1.0),
        })
    }
}

impl ForwardSystem for PlateSystem {
    fn dim(&self) -> usize {
        self.f_unit.len()
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.f_unit.len()]
    }

    fn residual(&mut self, u: &[f64], p: f64) -> Result<Vec<f64>> {
        let uv = DVector::from_column_slice(u);
        let ku = &self.k * uv;
        Ok(ku
            .iter()
            .zip(&self.f_unit)
            .map(|(a, f)| a - p * f)
            .collect())
    }

    fn tangent(&mut self, u: &[f64], p: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
        Ok((self.residual(u, p)?, self.k.clone()))
    }

    fn external_force(&mut self, _u: &[f64], p: f64) -> Result<Vec<f64>> {
        Ok(self.f_unit.iter().map(|f| p * f).collect())
    }

    fn linear(&self) -> bool {
        true
    }
}

/// Membrane inflation problem with any constitutive source.
pub struct MembraneSystem<'a> {
    pub mesh: &'a MembraneMesh,
    pub material: &'a Material<'a>,
}

impl ForwardSystem for MembraneSystem<'_> {
    fn dim(&self) -> usize {
        self.mesh.free_count()
    }

    fn initial_state(&self) -> Vec<f64> {
        self.mesh.flat_state()
    }

    fn residual(&mut self, u: &[f64], p: f64) -> Result<Vec<f64>> {
        membrane::residual(self.mesh, self.material, u, p)
    }

    fn tangent(&mut self, u: &[f64], p: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
        membrane::tangent(self.mesh, self.material, u, p)
    }

    fn external_force(&mut self, u: &[f64], p: f64) -> Result<Vec<f64>> {
        membrane::follower_force(self.mesh, u, p)
    }
}
