//! Trainable material-model surrogates behind one dispatch type.
//!
//! All five families share the same calling surface: evaluate, fused
//! vector-Jacobian products (the training hot path), input Jacobians, flat
//! parameter round-trips, seeded initialization, and recording onto an
//! [`crate::ad::Tape`] for use inside solver tangents. The fused `vjp`
//! accumulates parameter gradients so batched losses can stream points
//! through without allocating.

mod checkpoint;
mod net;
mod pl;
mod rbf;
mod rbfn;
mod tensor;

pub use checkpoint::atomic_write;
pub use net::{Activation, FullyConnectedNet};
pub use pl::PiecewiseLinear;
pub use rbf::RadialBasis;
pub use rbfn::RadialBasisNet;
pub use tensor::SymmetricTensor3;

use crate::ad::{Tape, TapeVar};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub enum SurrogateModel {
    Net(FullyConnectedNet),
    PiecewiseLinear(PiecewiseLinear),
    RadialBasis(RadialBasis),
    RadialBasisNet(RadialBasisNet),
    Tensor(SymmetricTensor3),
}

/// Reusable buffers for the fused passes; one per worker loop.
#[derive(Default)]
pub struct Scratch {
    pub(crate) layers: Vec<Vec<f64>>,
    pub(crate) delta: Vec<f64>,
    pub(crate) delta2: Vec<f64>,
}

/// Seeded initialization schemes. Every scheme is deterministic in the seed.
#[derive(Clone, Debug)]
pub enum InitScheme {
    Zeros,
    /// Per-transition uniform in +-sqrt(6/(fan_in+fan_out)), zero biases.
    /// Net only.
    ScaledUniform { seed: u64 },
    Gaussian { mean: f64, std: f64, seed: u64 },
    /// Zero weights, unit shapes, centers uniform in [0,7]^2. RadialBasisNet
    /// only.
    RbfnDefault { seed: u64 },
}

impl SurrogateModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SurrogateModel::Net(_) => "net",
            SurrogateModel::PiecewiseLinear(_) => "pl",
            SurrogateModel::RadialBasis(_) => "rbf",
            SurrogateModel::RadialBasisNet(_) => "rbfn",
            SurrogateModel::Tensor(_) => "tensor",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SurrogateModel::Net(m) => m.input_dim(),
            SurrogateModel::PiecewiseLinear(_) => 2,
            SurrogateModel::RadialBasis(_) => 2,
            SurrogateModel::RadialBasisNet(_) => 2,
            SurrogateModel::Tensor(_) => 3,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SurrogateModel::Net(m) => m.output_dim(),
            SurrogateModel::PiecewiseLinear(m) => m.output_dim(),
            SurrogateModel::RadialBasis(m) => m.output_dim(),
            SurrogateModel::RadialBasisNet(m) => m.output_dim(),
            SurrogateModel::Tensor(_) => 3,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            SurrogateModel::Net(m) => m.parameter_count(),
            SurrogateModel::PiecewiseLinear(m) => m.parameter_count(),
            SurrogateModel::RadialBasis(m) => m.parameter_count(),
            SurrogateModel::RadialBasisNet(m) => m.parameter_count(),
            SurrogateModel::Tensor(_) => 6,
        }
    }

    /// Size column used in the comparison tables: parameters per output
    /// component for the gridded families (node or center count), 4n for the
    /// radial-basis net, total parameter count for the dense net.
    pub fn table_dof(&self) -> usize {
        match self {
            SurrogateModel::Net(m) => m.parameter_count(),
            SurrogateModel::PiecewiseLinear(m) => m.nodes_per_output(),
            SurrogateModel::RadialBasis(m) => m.center_count(),
            SurrogateModel::RadialBasisNet(m) => 4 * m.center_count(),
            SurrogateModel::Tensor(_) => 6,
        }
    }

    pub fn evaluate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_shapes(x.len(), out.len())?;
        match self {
            SurrogateModel::Net(m) => m.evaluate(x, out),
            SurrogateModel::PiecewiseLinear(m) => m.evaluate(x, out)?,
            SurrogateModel::RadialBasis(m) => m.evaluate(x, out),
            SurrogateModel::RadialBasisNet(m) => m.evaluate(x, out),
            SurrogateModel::Tensor(m) => m.evaluate(x, out),
        }
        Ok(())
    }

    pub fn eval_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.evaluate(x, &mut out)?;
        Ok(out)
    }

    /// Fused reverse pass. Writes outputs to `out`, overwrites `grad_input`
    /// with seed^T d out/d x when given, and accumulates seed^T d out/d theta
    /// into `grad_params` (caller zeroes between batches).
    pub fn vjp(
        &self,
        scratch: &mut Scratch,
        x: &[f64],
        seed: &[f64],
        out: &mut [f64],
        grad_input: Option<&mut [f64]>,
        grad_params: Option<&mut [f64]>,
    ) -> Result<()> {
        self.check_shapes(x.len(), out.len())?;
        if seed.len() != self.output_dim() {
            return Err(Error::contract("vjp seed length mismatch"));
        }
        if let Some(ref g) = grad_params {
            if g.len() != self.parameter_count() {
                return Err(Error::contract("vjp parameter gradient length mismatch"));
            }
        }
        match self {
            SurrogateModel::Net(m) => m.vjp(scratch, x, seed, out, grad_input, grad_params),
            SurrogateModel::PiecewiseLinear(m) => m.vjp(x, seed, out, grad_input, grad_params)?,
            SurrogateModel::RadialBasis(m) => m.vjp(x, seed, out, grad_input, grad_params),
            SurrogateModel::RadialBasisNet(m) => m.vjp(x, seed, out, grad_input, grad_params),
            SurrogateModel::Tensor(m) => m.vjp(x, seed, out, grad_input, grad_params),
        }
        Ok(())
    }

    /// Jacobian of outputs with respect to inputs, row-major out_dim x in_dim.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (od, id) = (self.output_dim(), self.input_dim());
        let mut jac = vec![0.0; od * id];
        let mut out = vec![0.0; od];
        let mut seed = vec![0.0; od];
        let mut scratch = Scratch::default();
        for k in 0..od {
            seed.iter_mut().for_each(|s| *s = 0.0);
            seed[k] = 1.0;
            self.vjp(
                &mut scratch,
                x,
                &seed,
                &mut out,
                Some(&mut jac[k * id..(k + 1) * id]),
                None,
            )?;
        }
        Ok(jac)
    }

    /// Flat parameter vector; layout is stable and matches `load_parameters`
    /// and the tape-recording order.
    pub fn parameter_vector(&self) -> Vec<f64> {
        match self {
            SurrogateModel::Net(m) => m.parameter_vector(),
            SurrogateModel::PiecewiseLinear(m) => m.parameter_vector(),
            SurrogateModel::RadialBasis(m) => m.parameter_vector(),
            SurrogateModel::RadialBasisNet(m) => m.parameter_vector(),
            SurrogateModel::Tensor(m) => m.parameter_vector(),
        }
    }

    pub fn load_parameters(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.parameter_count() {
            return Err(Error::contract(format!(
                "parameter vector length {} does not match model size {}",
                v.len(),
                self.parameter_count()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("non-finite parameter"));
        }
        match self {
            SurrogateModel::Net(m) => m.load_parameters(v),
            SurrogateModel::PiecewiseLinear(m) => m.load_parameters(v),
            SurrogateModel::RadialBasis(m) => m.load_parameters(v),
            SurrogateModel::RadialBasisNet(m) => m.load_parameters(v),
            SurrogateModel::Tensor(m) => m.load_parameters(v),
        }
        Ok(())
    }

    pub fn initialize(&mut self, scheme: &InitScheme) -> Result<()> {
        match self {
            SurrogateModel::Net(m) => m.initialize(scheme),
            SurrogateModel::PiecewiseLinear(m) => m.initialize(scheme),
            SurrogateModel::RadialBasis(m) => m.initialize(scheme),
            SurrogateModel::RadialBasisNet(m) => m.initialize(scheme),
            SurrogateModel::Tensor(m) => m.initialize(scheme),
        }
    }

    /// Componentwise lower bounds when the family has constrained parameters
    /// (shape parameters of the radial-basis net); None otherwise.
    pub fn lower_bounds(&self) -> Option<Vec<f64>> {
        match self {
            SurrogateModel::RadialBasisNet(m) => Some(m.lower_bounds()),
            _ => None,
        }
    }

    /// Record an evaluation with parameters baked in as constants; inputs are
    /// live tape variables. Used inside solver tangents.
    pub fn record_on_tape(&self, tape: &mut Tape, x: &[TapeVar]) -> Result<Vec<TapeVar>> {
        if x.len() != self.input_dim() {
            return Err(Error::contract("tape input arity mismatch"));
        }
        match self {
            SurrogateModel::Net(m) => m.record_on_tape(tape, x),
            SurrogateModel::PiecewiseLinear(m) => m.record_on_tape(tape, x),
            SurrogateModel::RadialBasis(m) => m.record_on_tape(tape, x),
            SurrogateModel::RadialBasisNet(m) => m.record_on_tape(tape, x),
            SurrogateModel::Tensor(m) => m.record_on_tape(tape, x),
        }
    }

    /// Record an evaluation at a fixed input with parameters as live tape
    /// variables, ordered exactly like `parameter_vector`.
    pub fn record_with_params(
        &self,
        tape: &mut Tape,
        x: &[f64],
        theta: &[TapeVar],
    ) -> Result<Vec<TapeVar>> {
        if x.len() != self.input_dim() {
            return Err(Error::contract("tape input arity mismatch"));
        }
        if theta.len() != self.parameter_count() {
            return Err(Error::contract("tape parameter arity mismatch"));
        }
        match self {
            SurrogateModel::Net(m) => m.record_with_params(tape, x, theta),
            SurrogateModel::PiecewiseLinear(m) => m.record_with_params(tape, x, theta),
            SurrogateModel::RadialBasis(m) => m.record_with_params(tape, x, theta),
            SurrogateModel::RadialBasisNet(m) => m.record_with_params(tape, x, theta),
            SurrogateModel::Tensor(m) => m.record_with_params(tape, x, theta),
        }
    }

    pub fn to_text(&self) -> String {
        checkpoint::to_text(self)
    }

    pub fn from_text(text: &str) -> Result<SurrogateModel> {
        checkpoint::from_text(text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<SurrogateModel> {
        let text = std::fs::read_to_string(path)?;
        SurrogateModel::from_text(&text)
    }

    fn check_shapes(&self, xin: usize, xout: usize) -> Result<()> {
        if xin != self.input_dim() || xout != self.output_dim() {
            return Err(Error::contract(format!(
                "shape mismatch: got input {xin}/output {xout}, model wants {}/{}",
                self.input_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
