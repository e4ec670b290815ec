//! One-dimensional Poisson problems on [0,1]: strong-form finite-difference
//! and Galerkin residuals for coefficient identification, the scalar-matrix
//! smoke problem, the mesh-size convergence study, and the activation/width
//! sweep.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::ad::Tape;
use crate::calibrate::{minimize, DesignLoss, Objective, TrainConfig, TrainResult};
use crate::error::{Error, Result};
use crate::surrogate::{Activation, FullyConnectedNet, InitScheme, SurrogateModel};

#[derive(Clone, Copy, Debug)]
pub struct Grid1D {
    n_e: usize,
}

impl Grid1D {
    pub fn new(n_e: usize) -> Result<Grid1D> {
        if n_e < 2 {
            return Err(Error::contract(format!("grid needs >= 2 elements, got {n_e}")));
        }
        Ok(Grid1D { n_e })
    }

    pub fn elements(&self) -> usize {
        self.n_e
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_e as f64
    }

    /// Node i as i/N_e directly; no accumulated spacing error.
    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n_e as f64
    }

    /// Midpoint of element e (1-based, spanning [x_{e-1}, x_e]).
    pub fn midpoint(&self, e: usize) -> f64 {
        (e as f64 - 0.5) / self.n_e as f64
    }

    pub fn node_count(&self) -> usize {
        self.n_e + 1
    }

    pub fn interior_count(&self) -> usize {
        self.n_e - 1
    }
}

/// Two-point boundary problem data: coefficient equation residuals are built
/// against this source and these Dirichlet values.
pub struct Poisson1D {
    pub grid: Grid1D,
    pub u_left: f64,
    pub u_right: f64,
    source: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Poisson1D {
    pub fn new(
        n_e: usize,
        u_left: f64,
        u_right: f64,
        source: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Poisson1D> {
        Ok(Poisson1D {
            grid: Grid1D::new(n_e)?,
            u_left,
            u_right,
            source: Box::new(source),
        })
    }

    /// The benchmark identification problem: kappa = 1/(1+x^2),
    /// u = x(1-x), f = -2/(1+x^2).
    pub fn benchmark(n_e: usize) -> Result<Poisson1D> {
        Poisson1D::new(n_e, 0.0, 0.0, |x| -2.0 * exact_kappa(x))
    }

    pub fn source(&self, x: f64) -> f64 {
        (self.source)(x)
    }

    /// Exact benchmark data sampled at the nodes.
    pub fn benchmark_data(&self) -> Vec<f64> {
        (0..self.grid.node_count())
            .map(|i| {
                let x = self.grid.node(i);
                x * (1.0 - x)
            })
            .collect()
    }
}

pub fn exact_kappa(x: f64) -> f64 {
    1.0 / (1.0 + x * x)
}

/// Pointwise coefficient: either a closed form or a trained surrogate.
pub trait Coefficient {
    fn kappa(&self, x: f64) -> Result<f64>;
}

impl<F: Fn(f64) -> f64> Coefficient for F {
    fn kappa(&self, x: f64) -> Result<f64> {
        Ok(self(x))
    }
}

impl Coefficient for SurrogateModel {
    fn kappa(&self, x: f64) -> Result<f64> {
        if self.input_dim() != 1 || self.output_dim() != 1 {
            return Err(Error::contract(
                "1d coefficient surrogate must map one input to one output",
            ));
        }
        let mut out = [0.0];
        self.evaluate(&[x], &mut out)?;
        Ok(out[0])
    }
}

/// Which discrete form backs the residual.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Form {
    /// Strong form collocated at nodes via central second differences.
    FiniteDifference,
    /// Hat-function weak form with one-point (midpoint) quadrature.
    Galerkin,
}

impl Form {
    pub fn parse(s: &str) -> Result<Form> {
        match s {
            "fd" => Ok(Form::FiniteDifference),
            "fem" => Ok(Form::Galerkin),
            other => Err(Error::contract(format!("unknown form '{other}' (fd|fem)"))),
        }
    }
}

fn check_u(problem: &Poisson1D, u: &[f64]) -> Result<()> {
    if u.len() != problem.grid.node_count() {
        return Err(Error::contract(format!(
            "state has {} entries, grid wants {}",
            u.len(),
            problem.grid.node_count()
        )));
    }
    Ok(())
}

/// Collocation residual at interior node i: kappa(x_i) d2u_i - f(x_i), with
/// d2u the central second difference.
pub fn residual_fd(problem: &Poisson1D, u: &[f64], kappa: &impl Coefficient) -> Result<Vec<f64>> {
    check_u(problem, u)?;
    let g = &problem.grid;
    let h2 = g.h() * g.h();
    let mut r = Vec::with_capacity(g.interior_count());
    for i in 1..g.node_count() - 1 {
        let x = g.node(i);
        let d2 = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / h2;
        r.push(kappa.kappa(x)? * d2 - problem.source(x));
    }
    Ok(r)
}

/// Weak-form residual at interior node j: both the bilinear form and the
/// load use one Gauss point per element, so kappa and f enter at element
/// midpoints only.
pub fn residual_fem(problem: &Poisson1D, u: &[f64], kappa: &impl Coefficient) -> Result<Vec<f64>> {
    check_u(problem, u)?;
    let g = &problem.grid;
    let h = g.h();
    let mut r = Vec::with_capacity(g.interior_count());
    for j in 1..g.node_count() - 1 {
        let km = kappa.kappa(g.midpoint(j))?;
        let kp = kappa.kappa(g.midpoint(j + 1))?;
        let a = km * (u[j] - u[j - 1]) / h - kp * (u[j + 1] - u[j]) / h;
        let load = h * (problem.source(g.midpoint(j)) + problem.source(g.midpoint(j + 1))) / 2.0;
        r.push(a - load);
    }
    Ok(r)
}

pub fn residual(
    problem: &Poisson1D,
    u: &[f64],
    kappa: &impl Coefficient,
    form: Form,
) -> Result<Vec<f64>> {
    match form {
        Form::FiniteDifference => residual_fd(problem, u, kappa),
        Form::Galerkin => residual_fem(problem, u, kappa),
    }
}

/// Training loss over fixed data: the residual is linear in the sampled
/// coefficient values, so it lowers to one scatter row per interior node.
pub fn design(
    problem: &Poisson1D,
    u: &[f64],
    model: SurrogateModel,
    form: Form,
) -> Result<DesignLoss> {
    check_u(problem, u)?;
    if model.input_dim() != 1 || model.output_dim() != 1 {
        return Err(Error::contract("coefficient surrogate must be scalar"));
    }
    let g = &problem.grid;
    let h = g.h();
    let mut loss = DesignLoss::new(model);
    match form {
        Form::FiniteDifference => {
            let h2 = h * h;
            let offset: Vec<f64> = (1..g.node_count() - 1)
                .map(|i| -problem.source(g.node(i)))
                .collect();
            loss.begin_observation(&offset);
            for i in 1..g.node_count() - 1 {
                let d2 = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / h2;
                loss.add_point(&[g.node(i)], &[vec![(i - 1, d2)]])?;
            }
        }
        Form::Galerkin => {
            let offset: Vec<f64> = (1..g.node_count() - 1)
                .map(|j| {
                    -h * (problem.source(g.midpoint(j)) + problem.source(g.midpoint(j + 1))) / 2.0
                })
                .collect();
            loss.begin_observation(&offset);
            // Element e's midpoint value scales its slope jump into the two
            // adjacent nodal equations.
            for e in 1..=g.elements() {
                let du = (u[e] - u[e - 1]) / h;
                let mut scatter = Vec::new();
                if e < g.elements() {
                    scatter.push((e - 1, du));
                }
                if e >= 2 {
                    scatter.push((e - 2, -du));
                }
                loss.add_point(&[g.midpoint(e)], &[scatter])?;
            }
        }
    }
    Ok(loss)
}

/// Sum of squared residuals for a fixed coefficient; the quantity the
/// trainer minimizes, evaluated without the trainer.
pub fn residual_loss(
    problem: &Poisson1D,
    u: &[f64],
    kappa: &impl Coefficient,
    form: Form,
) -> Result<f64> {
    Ok(residual(problem, u, kappa, form)?.iter().map(|r| r * r).sum())
}

/// Direct forward solve with a known coefficient (both forms assemble a
/// tridiagonal system over interior nodes).
pub fn solve_forward(problem: &Poisson1D, kappa: &impl Coefficient, form: Form) -> Result<Vec<f64>> {
    let g = &problem.grid;
    let n = g.interior_count();
    let h = g.h();
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    match form {
        Form::FiniteDifference => {
            let h2 = h * h;
            for i in 1..=n {
                let k = kappa.kappa(g.node(i))?;
                let row = i - 1;
                mat[(row, row)] = -2.0 * k / h2;
                rhs[row] = problem.source(g.node(i));
                if i > 1 {
                    mat[(row, row - 1)] = k / h2;
                } else {
                    rhs[row] -= k / h2 * problem.u_left;
                }
                if i < n {
                    mat[(row, row + 1)] = k / h2;
                } else {
                    rhs[row] -= k / h2 * problem.u_right;
                }
            }
        }
        Form::Galerkin => {
            for j in 1..=n {
                let km = kappa.kappa(g.midpoint(j))?;
                let kp = kappa.kappa(g.midpoint(j + 1))?;
                let row = j - 1;
                mat[(row, row)] = (km + kp) / h;
                rhs[row] =
                    h * (problem.source(g.midpoint(j)) + problem.source(g.midpoint(j + 1))) / 2.0;
                if j > 1 {
                    mat[(row, row - 1)] = -km / h;
                } else {
                    rhs[row] += km / h * problem.u_left;
                }
                if j < n {
                    mat[(row, row + 1)] = -kp / h;
                } else {
                    rhs[row] += kp / h * problem.u_right;
                }
            }
        }
    }
    let lu = mat.lu();
    let sol = lu.solve(&rhs).ok_or(Error::singular("1d forward solve"))?;
    let mut u = Vec::with_capacity(g.node_count());
    u.push(problem.u_left);
    u.extend_from_slice(sol.as_slice());
    u.push(problem.u_right);
    Ok(u)
}

/// Data-correlation diagnostic at interior nodes:
/// |u_i'(x) u_k''(x) - u_k'(x) u_i''(x)| with central-difference derivatives.
pub fn data_correlation(u_i: &[f64], u_k: &[f64], grid: &Grid1D) -> Result<Vec<f64>> {
    if u_i.len() != grid.node_count() || u_k.len() != grid.node_count() {
        return Err(Error::contract("correlation inputs must be nodal vectors"));
    }
    let h = grid.h();
    let mut gamma = Vec::with_capacity(grid.interior_count());
    for j in 1..grid.node_count() - 1 {
        let d1_i = (u_i[j + 1] - u_i[j - 1]) / (2.0 * h);
        let d2_i = (u_i[j + 1] - 2.0 * u_i[j] + u_i[j - 1]) / (h * h);
        let d1_k = (u_k[j + 1] - u_k[j - 1]) / (2.0 * h);
        let d2_k = (u_k[j + 1] - 2.0 * u_k[j] + u_k[j - 1]) / (h * h);
        gamma.push((d1_i * d2_k - d1_k * d2_i).abs());
    }
    Ok(gamma)
}

// ---------------------------------------------------------------------------
// Scalar-coefficient smoke problem: (bA + I) u = f on 101 nodes, A the
// negated second-difference matrix, observed u(0.5) = 1.

pub const SCALAR_B_NODES: usize = 101;

fn scalar_b_source(x: f64) -> f64 {
    8.0 + 4.0 * x - 4.0 * x * x
}

/// Forward solve of (bA + I) u = f for the interior nodes (zero Dirichlet
/// boundary). Returns the full nodal vector.
pub fn scalar_b_solve(b: f64) -> Result<Vec<f64>> {
    let n = SCALAR_B_NODES - 2;
    let h = 1.0 / (SCALAR_B_NODES - 1) as f64;
    let h2 = h * h;
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..n {
        mat[(i, i)] = b * 2.0 / h2 + 1.0;
        if i > 0 {
            mat[(i, i - 1)] = -b / h2;
        }
        if i + 1 < n {
            mat[(i, i + 1)] = -b / h2;
        }
        rhs[i] = scalar_b_source((i + 1) as f64 * h);
    }
    let sol = mat.lu().solve(&rhs).ok_or(Error::singular("scalar-b solve"))?;
    let mut u = vec![0.0];
    u.extend_from_slice(sol.as_slice());
    u.push(0.0);
    Ok(u)
}

/// Loss (u_mid(b) - 1)^2 with the solve recorded on the tape so the gradient
/// flows through the linear system.
struct ScalarBObjective {
    tape: Tape,
}

impl Objective for ScalarBObjective {
    fn dim(&self) -> usize {
        1
    }

    fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let n = SCALAR_B_NODES - 2;
        let h = 1.0 / (SCALAR_B_NODES - 1) as f64;
        let h2 = h * h;
        let tape = &mut self.tape;
        tape.reset();
        let b = tape.var(theta[0]);
        let zero = tape.constant(0.0);
        let diag = {
            let t = tape.scale(b, 2.0 / h2);
            tape.add_const(t, 1.0)
        };
        let off = tape.scale(b, -1.0 / h2);
        let mut a = vec![zero; n * n];
        for i in 0..n {
            a[i * n + i] = diag;
            if i > 0 {
                a[i * n + i - 1] = off;
            }
            if i + 1 < n {
                a[i * n + i + 1] = off;
            }
        }
        let rhs: Vec<_> = (0..n)
            .map(|i| tape.constant(scalar_b_source((i + 1) as f64 * h)))
            .collect();
        let u = tape.solve(&a, &rhs)?;
        // Node 50 of 101 is x = 0.5; interior index 49.
        let mid = u[(SCALAR_B_NODES - 1) / 2 - 1];
        let d = tape.add_const(mid, -1.0);
        let loss = tape.mul(d, d);
        let g = tape.backward(loss)?;
        grad[0] = g.wrt(b);
        Ok(tape.value(loss))
    }
}

/// Estimate the scalar coefficient from the single mid-span observation.
pub fn calibrate_scalar_b(b0: f64, cfg: &TrainConfig) -> Result<TrainResult> {
    let mut obj = ScalarBObjective { tape: Tape::new() };
    minimize(&mut obj, &[b0], cfg, None)
}

// ---------------------------------------------------------------------------
// Convergence study and architecture sweep.

/// Fresh coefficient net: `hidden` hidden layers of `width` neurons.
pub fn kappa_net(width: usize, hidden: usize, activation: Activation, seed: u64) -> Result<SurrogateModel> {
    let mut widths = vec![1];
    widths.extend(std::iter::repeat(width).take(hidden));
    widths.push(1);
    let mut model = SurrogateModel::Net(FullyConnectedNet::new(&widths, activation)?);
    model.initialize(&InitScheme::ScaledUniform { seed })?;
    Ok(model)
}

/// Uniform test points used to score every trained coefficient; one fixed
/// draw is shared across the whole study.
pub fn test_points(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen_range(0.0..1.0)).collect()
}

pub const TEST_POINT_SEED: u64 = 42;
pub const TEST_POINT_COUNT: usize = 1000;

/// Root-mean-square distance between a trained coefficient and the true one
/// over the given points.
pub fn kappa_rms_error(model: &SurrogateModel, points: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for &x in points {
        let d = model.kappa(x)? - exact_kappa(x);
        acc += d * d;
    }
    Ok((acc / points.len() as f64).sqrt())
}

#[derive(Clone, Debug)]
pub struct StudyRow {
    pub n_e: usize,
    pub seed: u64,
    pub e_theta: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

/// Train one coefficient net on the benchmark data for one mesh.
pub fn train_benchmark(
    n_e: usize,
    model: SurrogateModel,
    cfg: &TrainConfig,
    form: Form,
) -> Result<(SurrogateModel, TrainResult)> {
    let problem = Poisson1D::benchmark(n_e)?;
    let u = problem.benchmark_data();
    let mut loss = design(&problem, &u, model, form)?;
    let theta0 = loss.model().parameter_vector();
    let result = minimize(&mut loss, &theta0, cfg, None)?;
    let mut model = loss.into_model();
    model.load_parameters(&result.theta)?;
    Ok((model, result))
}

/// Mesh-size sweep: one row per (element count, seed).
pub fn convergence_study(
    n_e_list: &[usize],
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<Vec<StudyRow>> {
    let points = test_points(TEST_POINT_COUNT, TEST_POINT_SEED);
    let mut rows = Vec::new();
    for &n_e in n_e_list {
        for &seed in seeds {
            let net = kappa_net(20, 3, Activation::Tanh, seed)?;
            let (model, result) = train_benchmark(n_e, net, cfg, Form::FiniteDifference)?;
            rows.push(StudyRow {
                n_e,
                seed,
                e_theta: kappa_rms_error(&model, &points)?,
                final_loss: result.loss,
                iterations: result.iterations,
            });
        }
    }
    Ok(rows)
}

pub fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub activation: Activation,
    pub width: usize,
    pub hidden: usize,
    pub mean: f64,
    pub std: f64,
}

/// Architecture sweep at a fixed mesh: mean and standard deviation of the
/// test error over seeds, per (activation, width, depth) cell.
pub fn activation_sweep(
    activations: &[Activation],
    widths: &[usize],
    depths: &[usize],
    n_e: usize,
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    let points = test_points(TEST_POINT_COUNT, TEST_POINT_SEED);
    let mut rows = Vec::new();
    for &act in activations {
        for &width in widths {
            for &hidden in depths {
                let mut errs = Vec::with_capacity(seeds.len());
                for &seed in seeds {
                    let net = kappa_net(width, hidden, act, seed)?;
                    let (model, _) = train_benchmark(n_e, net, cfg, Form::FiniteDifference)?;
                    errs.push(kappa_rms_error(&model, &points)?);
                }
                let n = errs.len() as f64;
                let mean = errs.iter().sum::<f64>() / n;
                let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
                rows.push(SweepRow {
                    activation: act,
                    width,
                    hidden,
                    mean,
                    std: var.sqrt(),
                });
            }
        }
    }
    Ok(rows)
}
