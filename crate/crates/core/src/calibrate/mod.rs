//! Trainer for indirect-observation losses: a batched sum-of-squares design
//! loss over surrogate outputs at fixed inputs, minimized by limited-memory
//! BFGS with a strong Wolfe line search (bound-constrained variant via
//! gradient projection).

mod lbfgs;

pub use lbfgs::{minimize, minimize_bounded};

use crate::error::{Error, Result};
use crate::surrogate::{Scratch, SurrogateModel};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub max_iters: usize,
    /// Stop when the gradient infinity norm drops below this.
    pub grad_tol: f64,
    /// Stop when |f_old - f_new| <= tol * max(|f_old|, |f_new|). Deliberately
    /// has no absolute floor so quadratic recoveries run down to the floating
    /// point floor of the loss itself.
    pub rel_obj_tol: f64,
    pub memory: usize,
    /// Cap on objective evaluations (None = unlimited). Monitor callbacks are
    /// not counted.
    pub call_budget: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    fn with_iters(max_iters: usize) -> TrainConfig {
        TrainConfig {
            max_iters,
            grad_tol: 1e-12,
            rel_obj_tol: 1e-12,
            memory: 10,
            call_budget: None,
            seed: 0,
        }
    }

    /// Stiffness-tensor recovery runs.
    pub fn plate() -> TrainConfig {
        TrainConfig::with_iters(5000)
    }

    /// Membrane surrogate training runs.
    pub fn membrane() -> TrainConfig {
        TrainConfig::with_iters(20_000)
    }

    /// 1D mesh-size sweep runs.
    pub fn convergence() -> TrainConfig {
        TrainConfig::with_iters(15_000)
    }

    /// Model-family comparison runs: capped by objective calls, not
    /// iterations.
    pub fn comparison() -> TrainConfig {
        let mut cfg = TrainConfig::with_iters(usize::MAX);
        cfg.call_budget = Some(15_000);
        cfg
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum StopReason {
    ConvergedGrad,
    ConvergedObj,
    MaxIter,
    Budget,
    LineSearchFailure,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    /// Train loss at theta0 and after every accepted step.
    pub trace: Vec<f64>,
    /// Monitor values aligned with `trace`, when a monitor was supplied.
    pub test_trace: Option<Vec<f64>>,
    pub reason: StopReason,
    pub iterations: usize,
    pub obj_calls: usize,
}

/// Differentiable scalar objective. `value_and_grad` must be deterministic in
/// `theta`.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// Value-only path; default recomputes the gradient into a scratch buffer.
    fn value(&mut self, theta: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; self.dim()];
        self.value_and_grad(theta, &mut g)
    }
}

struct ObsBlock {
    rows: std::ops::Range<usize>,
    points: std::ops::Range<usize>,
}

/// Sum-of-squares loss sum_i || A_i s(theta) + c_i ||^2 where s stacks the
/// surrogate outputs at fixed input points, A_i is a constant sparse scatter
/// of those outputs into observation i's residual rows, and c_i collects all
/// theta-independent terms (typically minus the external force). Every
/// training loss in the crate has this shape, so no element assembly happens
/// inside the optimizer loop.
pub struct DesignLoss {
    model: SurrogateModel,
    blocks: Vec<ObsBlock>,
    /// Flat point coordinates, stride = model input dim.
    points: Vec<f64>,
    /// Scatter entries (block-local row, weight), CSR-indexed per (point,
    /// output component).
    entries: Vec<(u32, f64)>,
    starts: Vec<u32>,
    offsets: Vec<f64>,
    residual: Vec<f64>,
    out_buf: Vec<f64>,
    seed_buf: Vec<f64>,
    scratch: Scratch,
}

impl DesignLoss {
    pub fn new(model: SurrogateModel) -> DesignLoss {
        let out_dim = model.output_dim();
        DesignLoss {
            model,
            blocks: Vec::new(),
            points: Vec::new(),
            entries: Vec::new(),
            starts: vec![0],
            offsets: Vec::new(),
            residual: Vec::new(),
            out_buf: vec![0.0; out_dim],
            seed_buf: vec![0.0; out_dim],
            scratch: Scratch::default(),
        }
    }

    /// Open a new observation block; `offset` fixes its row count. Until the
    /// next call, added points scatter into this block.
    pub fn begin_observation(&mut self, offset: &[f64]) {
        let row_start = self.offsets.len();
        let point_start = self.points.len() / self.model.input_dim().max(1);
        self.offsets.extend_from_slice(offset);
        self.blocks.push(ObsBlock {
            rows: row_start..self.offsets.len(),
            points: point_start..point_start,
        });
        if self.residual.len() < offset.len() {
            self.residual.resize(offset.len(), 0.0);
        }
    }

    /// Add a surrogate evaluation point to the current block. `scatter[k]`
    /// lists (block-local row, weight) pairs receiving output component k.
    pub fn add_point(&mut self, x: &[f64], scatter: &[Vec<(usize, f64)>]) -> Result<()> {
        let block = self
            .blocks
            .last_mut()
            .ok_or_else(|| Error::contract("add_point before begin_observation"))?;
        if x.len() != self.model.input_dim() {
            return Err(Error::contract("design point dimension mismatch"));
        }
        if scatter.len() != self.model.output_dim() {
            return Err(Error::contract("design scatter arity mismatch"));
        }
        let rows = block.rows.len();
        for per_output in scatter {
            for &(row, w) in per_output {
                if row >= rows {
                    return Err(Error::contract(format!(
                        "scatter row {row} outside observation with {rows} rows"
                    )));
                }
                self.entries.push((row as u32, w));
            }
            self.starts.push(self.entries.len() as u32);
        }
        self.points.extend_from_slice(x);
        block.points.end += 1;
        Ok(())
    }

    pub fn observation_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn point_count(&self) -> usize {
        self.blocks.iter().map(|b| b.points.len()).sum()
    }

    pub fn model(&self) -> &SurrogateModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut SurrogateModel {
        &mut self.model
    }

    pub fn into_model(self) -> SurrogateModel {
        self.model
    }

    /// Loss at the model's currently loaded parameters.
    pub fn current_value(&mut self) -> Result<f64> {
        let mut total = 0.0;
        for b in 0..self.blocks.len() {
            total += self.block_pass(b, None)?;
        }
        Ok(total)
    }

    /// One block: scatter outputs into the residual buffer, square-sum it,
    /// and when `grad` is given run the seeded reverse pass per point.
    fn block_pass(&mut self, b: usize, grad: Option<&mut [f64]>) -> Result<f64> {
        let in_dim = self.model.input_dim();
        let out_dim = self.model.output_dim();
        let (rows_range, points_range) = {
            let block = &self.blocks[b];
            (block.rows.clone(), block.points.clone())
        };
        let rows = rows_range.len();
        let r = &mut self.residual[..rows];
        r.copy_from_slice(&self.offsets[rows_range]);

        for p in points_range.clone() {
            let x = &self.points[p * in_dim..(p + 1) * in_dim];
            self.model.evaluate(x, &mut self.out_buf)?;
            for k in 0..out_dim {
                let e0 = self.starts[p * out_dim + k] as usize;
                let e1 = self.starts[p * out_dim + k + 1] as usize;
                for &(row, w) in &self.entries[e0..e1] {
                    r[row as usize] += w * self.out_buf[k];
                }
            }
        }
        let mut loss = 0.0;
        for &v in r.iter() {
            loss += v * v;
        }

        if let Some(grad) = grad {
            for p in points_range {
                let x = &self.points[p * in_dim..(p + 1) * in_dim];
                for k in 0..out_dim {
                    let e0 = self.starts[p * out_dim + k] as usize;
                    let e1 = self.starts[p * out_dim + k + 1] as usize;
                    let mut s = 0.0;
                    for &(row, w) in &self.entries[e0..e1] {
                        s += w * r[row as usize];
                    }
                    self.seed_buf[k] = 2.0 * s;
                }
                self.model.vjp(
                    &mut self.scratch,
                    x,
                    &self.seed_buf,
                    &mut self.out_buf,
                    None,
                    Some(grad),
                )?;
            }
        }
        Ok(loss)
    }
}

impl Objective for DesignLoss {
    fn dim(&self) -> usize {
        self.model.parameter_count()
    }

    fn value_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.model.load_parameters(theta)?;
        grad.fill(0.0);
        let mut total = 0.0;
        for b in 0..self.blocks.len() {
            total += self.block_pass(b, Some(grad))?;
        }
        Ok(total)
    }

    fn value(&mut self, theta: &[f64]) -> Result<f64> {
        self.model.load_parameters(theta)?;
        self.current_value()
    }
}
