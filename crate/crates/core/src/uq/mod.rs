//! Model-form uncertainty from per-gauss-point constitutive perturbations.
//!
//! The constitutive parameters are allowed to wander independently at every
//! quadrature point, but only along the one direction that moves the peak
//! stress: the normalized parameter gradient of the quantity of interest.
//! The reduced coordinate along that direction gets a variance fitted by
//! weighted least squares against the calibration residuals, and prediction
//! bands come from Monte-Carlo sampling of the linearized state response.
//! No forward solve is repeated after the base solve per load level.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::membrane::{self, Material, MembraneMesh};
use crate::plate::{DofMap, MaterialField, QuadMesh, Quadrature};
use crate::predict::{self, ForwardSystem, MembraneSystem, NewtonConfig, PlateSystem, SolveReport};
use crate::surrogate::{Scratch, SurrogateModel};

/// Sensitivity row-sums at or below this count as numerically zero and are
/// excluded from the variance fit.
pub const SENSITIVITY_FLOOR: f64 = 1e-14;

/// One quadrature point of the assembled balance residual. `rows[c]` lists
/// the (free dof, weight) scatter of model output c into the internal force;
/// weight / factor recovers the derivative of model input c with respect to
/// that dof. The ratio holds because inputs and outputs form work-conjugate
/// pairs under the same quadrature measure.
#[derive(Clone, Debug)]
pub struct StressPoint {
    pub id: usize,
    pub input: Vec<f64>,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub factor: f64,
}

/// A forward problem paired with the constitutive model whose parameters
/// carry the uncertainty.
pub enum UqCase<'a> {
    Plate {
        mesh: &'a QuadMesh,
        dofs: &'a DofMap,
        model: &'a SurrogateModel,
    },
    Membrane {
        mesh: &'a MembraneMesh,
        model: &'a SurrogateModel,
    },
}

impl UqCase<'_> {
    pub fn model(&self) -> &SurrogateModel {
        match self {
            UqCase::Plate { model, .. } => model,
            UqCase::Membrane { model, .. } => model,
        }
    }

    pub fn free_count(&self) -> usize {
        match self {
            UqCase::Plate { dofs, .. } => dofs.free_count(),
            UqCase::Membrane { mesh, .. } => mesh.free_count(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.model().parameter_count()
    }

    /// Converged state at load p, stepping from the unloaded configuration.
    pub fn solve(&self, p: f64, cfg: &NewtonConfig) -> Result<SolveReport> {
        match self {
            UqCase::Plate { mesh, dofs, model } => {
                let field = MaterialField::from_model(mesh, model)?;
                let mut sys = PlateSystem::new(mesh, dofs, &field)?;
                predict::solve(&mut sys, p, cfg)
            }
            UqCase::Membrane { mesh, model } => {
                let material = Material::Surrogate(model);
                let mut sys = MembraneSystem { mesh, material: &material };
                predict::solve(&mut sys, p, cfg)
            }
        }
    }

    /// Residual and tangent of the balance equation at (u, p).
    pub fn tangent(&self, u: &[f64], p: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
        match self {
            UqCase::Plate { mesh, dofs, model } => {
                let field = MaterialField::from_model(mesh, model)?;
                let mut sys = PlateSystem::new(mesh, dofs, &field)?;
                sys.tangent(u, p)
            }
            UqCase::Membrane { mesh, model } => {
                let material = Material::Surrogate(model);
                let mut sys = MembraneSystem { mesh, material: &material };
                sys.tangent(u, p)
            }
        }
    }

    /// Quadrature-point inputs and force scatter at the given state, in
    /// ascending point id order.
    pub fn stress_points(&self, u: &[f64]) -> Result<Vec<StressPoint>> {
        match self {
            UqCase::Plate { mesh, dofs, .. } => {
                let full = dofs.expand(u);
                let quad = Quadrature::for_mesh(mesh);
                let mut pts = Vec::with_capacity(mesh.gauss_count());
                for e in 0..mesh.element_count() {
                    let ed = mesh.element_dofs(e);
                    let mut ue = [0.0; 8];
                    for (a, &d) in ed.iter().enumerate() {
                        ue[a] = full[d];
                    }
                    for g in 0..4 {
                        let strain = quad.strain(g, &ue);
                        let b = quad.b_rows(g);
                        let mut rows = vec![Vec::with_capacity(8); 3];
                        for (a, &d) in ed.iter().enumerate() {
                            if let Some(i) = dofs.index(d) {
                                for c in 0..3 {
                                    rows[c].push((i, b[c][a] * quad.weight));
                                }
                            }
                        }
                        pts.push(StressPoint {
                            id: 4 * e + g,
                            input: strain.to_vec(),
                            rows,
                            factor: quad.weight,
                        });
                    }
                }
                Ok(pts)
            }
            UqCase::Membrane { mesh, .. } => {
                let full = mesh.expand(u)?;
                Ok(membrane::gauss_points(mesh, &full)?
                    .into_iter()
                    .map(|pt| {
                        let gather = |entries: &[(Option<usize>, f64)]| {
                            entries
                                .iter()
                                .filter_map(|&(i, w)| i.map(|i| (i, w)))
                                .collect::<Vec<_>>()
                        };
                        StressPoint {
                            id: pt.id,
                            input: pt.input.to_vec(),
                            rows: vec![gather(&pt.meridian_rows), gather(&pt.hoop_rows)],
                            factor: pt.factor,
                        }
                    })
                    .collect())
            }
        }
    }

    /// Scalar quantity of interest of one model output vector, with its
    /// gradient. Plate: maximum principal stress. Membrane: larger of the
    /// two stress outputs, the first winning ties.
    fn qoi(&self, out: &[f64]) -> (f64, Vec<f64>) {
        match self {
            UqCase::Plate { .. } => {
                let mean = 0.5 * (out[0] + out[1]);
                let dev = 0.5 * (out[0] - out[1]);
                let radius = (dev * dev + out[2] * out[2]).sqrt();
                if radius > 0.0 {
                    let g = vec![
                        0.5 + dev / (2.0 * radius),
                        0.5 - dev / (2.0 * radius),
                        out[2] / radius,
                    ];
                    (mean + radius, g)
                } else {
                    // hydrostatic point: any subgradient works, pick the mean
                    (mean, vec![0.5, 0.5, 0.0])
                }
            }
            UqCase::Membrane { .. } => {
                if out[1] > out[0] {
                    (out[1], vec![0.0, 1.0])
                } else {
                    (out[0], vec![1.0, 0.0])
                }
            }
        }
    }
}

/// Quantity of interest over all quadrature points: the maximum and where it
/// sits. Ties keep the lowest point id.
pub fn qoi_value(case: &UqCase, u: &[f64]) -> Result<(f64, usize)> {
    let pts = case.stress_points(u)?;
    if pts.is_empty() {
        return Err(Error::contract("no quadrature points"));
    }
    let model = case.model();
    let mut out = vec![0.0; model.output_dim()];
    let mut best = f64::NEG_INFINITY;
    let mut best_id = 0;
    for pt in &pts {
        model.evaluate(&pt.input, &mut out)?;
        let (j, _) = case.qoi(&out);
        if !j.is_finite() {
            return Err(Error::domain_at("qoi evaluation", pt.id, "non-finite stress"));
        }
        if j > best {
            best = j;
            best_id = pt.id;
        }
    }
    Ok((best, best_id))
}

/// Peak stress and its total derivative with respect to the model
/// parameters, the implicit motion of the equilibrium state included.
#[derive(Clone, Debug)]
pub struct QoiGradient {
    pub value: f64,
    /// Quadrature point id of the argmax.
    pub point: usize,
    pub grad: Vec<f64>,
}

/// One-dimensional active subspace of the parameter space: the unit
/// direction along which the peak stress moves fastest.
#[derive(Clone, Debug)]
pub struct ActiveSubspace {
    pub direction: Vec<f64>,
    pub value: f64,
}

impl ActiveSubspace {
    pub fn from_gradient(qg: &QoiGradient) -> Result<ActiveSubspace> {
        Ok(ActiveSubspace {
            direction: active_direction(&qg.grad)?,
            value: qg.value,
        })
    }
}

/// Normalize a parameter gradient into a direction. The scale of the
/// quantity of interest drops out here.
pub fn active_direction(grad: &[f64]) -> Result<Vec<f64>> {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(Error::contract("qoi gradient has no direction"));
    }
    Ok(grad.iter().map(|g| g / norm).collect())
}

/// Total parameter gradient of the peak stress at a converged state.
///
/// Chain rule through the balance equation: with j the stress functional and
/// R(u, theta) = 0, dJ/dtheta = dj/dtheta - (dR/dtheta)^T w where the adjoint
/// solves K^T w = dj/du. Both dj/du and dR/dtheta come from the stress-point
/// scatter, so no second assembly pass is needed.
pub fn qoi_gradient(case: &UqCase, u: &[f64], p: f64) -> Result<QoiGradient> {
    let pts = case.stress_points(u)?;
    if pts.is_empty() {
        return Err(Error::contract("no quadrature points"));
    }
    let model = case.model();
    let mut scratch = Scratch::default();
    let mut out = vec![0.0; model.output_dim()];

    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0;
    for (i, pt) in pts.iter().enumerate() {
        model.evaluate(&pt.input, &mut out)?;
        let (j, _) = case.qoi(&out);
        if !j.is_finite() {
            return Err(Error::domain_at("qoi evaluation", pt.id, "non-finite stress"));
        }
        if j > best {
            best = j;
            best_idx = i;
        }
    }

    let pt = &pts[best_idx];
    model.evaluate(&pt.input, &mut out)?;
    let (value, seed) = case.qoi(&out);

    let m = model.parameter_count();
    let mut grad = vec![0.0; m];
    let mut grad_input = vec![0.0; model.input_dim()];
    model.vjp(
        &mut scratch,
        &pt.input,
        &seed,
        &mut out,
        Some(&mut grad_input),
        Some(&mut grad),
    )?;

    // dj/du through the frozen kinematic map at the argmax point
    let mut dj_du = DVector::zeros(case.free_count());
    for (k, gk) in grad_input.iter().enumerate() {
        for &(row, w) in &pt.rows[k] {
            dj_du[row] += gk * w / pt.factor;
        }
    }

    let (_, k) = case.tangent(u, p)?;
    let w_adj = k
        .transpose()
        .lu()
        .solve(&dj_du)
        .ok_or_else(|| Error::singular("qoi adjoint"))?;

    // vjp accumulates into the parameter buffer, so one shared buffer
    // collects the whole implicit sum across points
    let mut z = vec![0.0; model.output_dim()];
    let mut implicit = vec![0.0; m];
    for pt in &pts {
        let mut any = false;
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = pt.rows[c].iter().map(|&(row, w)| w_adj[row] * w).sum();
            any |= *zc != 0.0;
        }
        if !any {
            continue;
        }
        model.vjp(&mut scratch, &pt.input, &z, &mut out, None, Some(&mut implicit))?;
    }
    for (g, d) in grad.iter_mut().zip(&implicit) {
        *g -= d;
    }

    Ok(QoiGradient { value, point: pt.id, grad })
}

/// State derivative with respect to the reduced coordinates: column g is
/// -K^-1 dR/dtheta_g W, the response to moving the parameters along W at
/// quadrature point g only. One factorization serves every column.
pub fn state_sensitivity(
    case: &UqCase,
    u: &[f64],
    p: f64,
    direction: &[f64],
) -> Result<DMatrix<f64>> {
    let model = case.model();
    if direction.len() != model.parameter_count() {
        return Err(Error::contract("direction length does not match the parameter count"));
    }
    let pts = case.stress_points(u)?;
    let n = case.free_count();
    let mut s = DMatrix::zeros(n, pts.len());

    let (_, k) = case.tangent(u, p)?;
    let lu = k.lu();
    let mut scratch = Scratch::default();
    let mut out = vec![0.0; model.output_dim()];
    let mut seed = vec![0.0; model.output_dim()];
    let mut gp = vec![0.0; model.parameter_count()];

    for (col, pt) in pts.iter().enumerate() {
        let mut rhs = DVector::zeros(n);
        let mut any = false;
        for c in 0..model.output_dim() {
            seed.iter_mut().for_each(|v| *v = 0.0);
            seed[c] = 1.0;
            // vjp accumulates; this call needs the bare row
            gp.fill(0.0);
            model.vjp(&mut scratch, &pt.input, &seed, &mut out, None, Some(&mut gp))?;
            let d: f64 = gp.iter().zip(direction).map(|(a, b)| a * b).sum();
            if d == 0.0 {
                continue;
            }
            any = true;
            for &(row, w) in &pt.rows[c] {
                rhs[row] -= d * w;
            }
        }
        if !any {
            continue;
        }
        let colv = lu
            .solve(&rhs)
            .ok_or_else(|| Error::singular("state sensitivity"))?;
        s.set_column(col, &colv);
    }
    Ok(s)
}

/// Calibration residual of one load case and the sensitivity it is
/// explained by.
pub struct VarianceCase {
    /// prediction minus observation over the free dofs
    pub delta: Vec<f64>,
    pub sensitivity: DMatrix<f64>,
}

fn variance_impl(cases: &[VarianceCase], noise: Option<&[Vec<f64>]>) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::contract("no variance cases"));
    }
    if let Some(ns) = noise {
        if ns.len() != cases.len() {
            return Err(Error::contract("one noise vector per load case is required"));
        }
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (i, vc) in cases.iter().enumerate() {
        let n = vc.sensitivity.nrows();
        if vc.delta.len() != n {
            return Err(Error::contract("residual length does not match the sensitivity rows"));
        }
        let noise_i = noise.map(|ns| &ns[i]);
        if let Some(e2) = noise_i {
            if e2.len() != n {
                return Err(Error::contract("noise length does not match the sensitivity rows"));
            }
            if e2.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::contract("measurement variances must be nonnegative"));
            }
        }
        for j in 0..n {
            let c: f64 = vc.sensitivity.row(j).iter().map(|v| v * v).sum();
            if c <= SENSITIVITY_FLOOR {
                continue;
            }
            let mut num = vc.delta[j] * vc.delta[j];
            if let Some(e2) = noise_i {
                num += e2[j];
            }
            sum += num / c;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::NoInformation);
    }
    Ok((sum / used as f64).max(0.0))
}

/// Closed-form weighted least squares for the reduced-coordinate variance:
/// the mean of delta_j^2 / c_j over entries whose sensitivity row-sum c_j
/// exceeds the floor. Exact minimizer of the 1/c^2-weighted residual fit.
pub fn estimate_variance(cases: &[VarianceCase]) -> Result<f64> {
    variance_impl(cases, None)
}

/// Same fit with known measurement-error variances added to the squared
/// residuals, one vector per load case. Dropping the noise term
/// under-estimates the model-form variance.
pub fn estimate_variance_noisy(cases: &[VarianceCase], noise: &[Vec<f64>]) -> Result<f64> {
    variance_impl(cases, Some(noise))
}

/// Nearest-rank quantile of an ascending-sorted slice.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Prediction with Monte-Carlo confidence bands.
pub struct UqReport {
    pub sigma_lambda: f64,
    /// converged free-dof state at the queried load
    pub prediction: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

/// Monte-Carlo bands for the state at load p. One base solve, one
/// sensitivity pass, then every sample is a matrix-vector product with
/// i.i.d. N(0, sigma_lambda) draws per quadrature point; the empirical 5%
/// and 95% quantiles per free dof form the band.
pub fn confidence_bands(
    case: &UqCase,
    p: f64,
    sigma_lambda: f64,
    samples: usize,
    seed: u64,
    cfg: &NewtonConfig,
) -> Result<UqReport> {
    if !(sigma_lambda >= 0.0) || !sigma_lambda.is_finite() {
        return Err(Error::contract("sigma_lambda must be a nonnegative number"));
    }
    if samples == 0 {
        return Err(Error::contract("at least one sample is required"));
    }
    let base = case.solve(p, cfg)?;
    let u = base.state;
    let n = u.len();

    if sigma_lambda == 0.0 {
        return Ok(UqReport {
            sigma_lambda,
            q05: u.clone(),
            q95: u.clone(),
            prediction: u,
            samples,
            seed,
        });
    }

    let qg = qoi_gradient(case, &u, p)?;
    let w = active_direction(&qg.grad)?;
    let s = state_sensitivity(case, &u, p, &w)?;
    let g = s.ncols();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_lambda.sqrt())
        .map_err(|_| Error::contract("sigma_lambda must be a nonnegative number"))?;

    let mut station = vec![vec![0.0f64; samples]; n];
    let mut lam = DVector::zeros(g);
    for si in 0..samples {
        for v in lam.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        let du = &s * &lam;
        for j in 0..n {
            station[j][si] = u[j] + du[j];
        }
    }

    let mut q05 = Vec::with_capacity(n);
    let mut q95 = Vec::with_capacity(n);
    for st in station.iter_mut() {
        st.sort_by(|a, b| a.total_cmp(b));
        q05.push(empirical_quantile(st, 0.05));
        q95.push(empirical_quantile(st, 0.95));
    }

    Ok(UqReport { sigma_lambda, prediction: u, q05, q95, samples, seed })
}

/// One calibration observation: converged free-dof state measured at a load.
pub struct LoadCase {
    pub load: f64,
    pub observed: Vec<f64>,
}

/// Residual and sensitivity of one calibration load, each load using its own
/// active direction.
pub fn variance_case(case: &UqCase, lc: &LoadCase, cfg: &NewtonConfig) -> Result<VarianceCase> {
    if lc.observed.len() != case.free_count() {
        return Err(Error::contract("observation length does not match the free dof count"));
    }
    let report = case.solve(lc.load, cfg)?;
    let qg = qoi_gradient(case, &report.state, lc.load)?;
    let w = active_direction(&qg.grad)?;
    let s = state_sensitivity(case, &report.state, lc.load, &w)?;
    let delta = report
        .state
        .iter()
        .zip(&lc.observed)
        .map(|(a, b)| a - b)
        .collect();
    Ok(VarianceCase { delta, sensitivity: s })
}

/// Reduced-coordinate variance fitted against a set of calibration loads.
pub fn calibration_variance(case: &UqCase, data: &[LoadCase], cfg: &NewtonConfig) -> Result<f64> {
    let cases = data
        .iter()
        .map(|lc| variance_case(case, lc, cfg))
        .collect::<Result<Vec<_>>>()?;
    estimate_variance(&cases)
}

#[cfg(test)]
mod tests;
