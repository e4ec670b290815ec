//! Fully connected feed-forward net. Hidden transitions carry biases; the
//! output transition is a pure linear map, so widths [2,20,20,2] carry
//! 60 + 420 + 40 = 520 parameters.

use super::{InitScheme, Scratch};
use crate::ad::{Tape, TapeVar};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Tanh,
    Relu,
    Elu,
    Selu,
    /// Slope 0.2 on the negative side.
    LeakyRelu,
}

pub const LEAKY_SLOPE: f64 = 0.2;
const SELU_ALPHA: f64 = 1.6732632423543772;
const SELU_LAMBDA: f64 = 1.0507009873554805;

impl Activation {
    pub fn parse(s: &str) -> Result<Activation> {
        Ok(match s {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "elu" => Activation::Elu,
            "selu" => Activation::Selu,
            "leaky_relu" => Activation::LeakyRelu,
            other => return Err(Error::contract(format!("unknown activation {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Selu => "selu",
            Activation::LeakyRelu => "leaky_relu",
        }
    }

    /// Value and derivative in one call.
    #[inline]
    pub fn apply(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    let e = x.exp();
                    (e - 1.0, e)
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    (SELU_LAMBDA * x, SELU_LAMBDA)
                } else {
                    let e = x.exp();
                    (SELU_LAMBDA * SELU_ALPHA * (e - 1.0), SELU_LAMBDA * SELU_ALPHA * e)
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (LEAKY_SLOPE * x, LEAKY_SLOPE)
                }
            }
        }
    }

    fn record(self, tape: &mut Tape, x: TapeVar) -> TapeVar {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Elu => tape.elu(x),
            Activation::Selu => tape.selu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FullyConnectedNet {
    widths: Vec<usize>,
    activation: Activation,
    /// Per transition, row-major out x in.
    weights: Vec<Vec<f64>>,
    /// Hidden transitions only; the output layer is bias-free.
    biases: Vec<Vec<f64>>,
}

impl FullyConnectedNet {
    /// `widths` lists every layer including input and output, e.g.
    /// [1, 20, 20, 20, 1].
    pub fn new(widths: &[usize], activation: Activation) -> Result<FullyConnectedNet> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::contract(format!("bad net widths {widths:?}")));
        }
        let transitions = widths.len() - 1;
        let weights = (0..transitions)
            .map(|l| vec![0.0; widths[l] * widths[l + 1]])
            .collect();
        let biases = (0..transitions.saturating_sub(1))
            .map(|l| vec![0.0; widths[l + 1]])
            .collect();
        Ok(FullyConnectedNet {
            widths: widths.to_vec(),
            activation,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn transitions(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn parameter_count(&self) -> usize {
        let t = self.transitions();
        (0..t)
            .map(|l| {
                let wb = self.widths[l] * self.widths[l + 1];
                if l + 1 < t {
                    wb + self.widths[l + 1]
                } else {
                    wb
                }
            })
            .sum()
    }

    pub fn evaluate(&self, x: &[f64], out: &mut [f64]) {
        let mut scratch = Scratch::default();
        self.forward(&mut scratch, x);
        out.copy_from_slice(scratch.layers.last().unwrap());
    }

    /// Forward pass keeping post-activation values per layer in the scratch;
    /// slot l of `scratch.layers` holds layer l's outputs (slot 0 is x) and
    /// `scratch.delta/delta2` are backward workspaces.
    fn forward(&self, scratch: &mut Scratch, x: &[f64]) {
        let t = self.transitions();
        scratch.layers.resize(t + 1, Vec::new());
        scratch.layers[0].clear();
        scratch.layers[0].extend_from_slice(x);
        for l in 0..t {
            let (nin, nout) = (self.widths[l], self.widths[l + 1]);
            let w = &self.weights[l];
            let (prev, rest) = scratch.layers.split_at_mut(l + 1);
            let src = &prev[l];
            let dst = &mut rest[0];
            dst.clear();
            dst.resize(nout, 0.0);
            let last = l + 1 == t;
            for i in 0..nout {
                let row = &w[i * nin..(i + 1) * nin];
                let mut acc = if last { 0.0 } else { self.biases[l][i] };
                for j in 0..nin {
                    acc += row[j] * src[j];
                }
                dst[i] = if last { acc } else { self.activation.apply(acc).0 };
            }
        }
    }

    /// Fused reverse pass. The forward is recomputed here so callers do not
    /// have to keep model/input pairing invariants; activation derivatives
    /// are recovered from stored post-activation values where possible
    /// (tanh' = 1 - t^2), otherwise from the pre-activation which we rebuild
    /// on the fly per layer.
    pub fn vjp(
        &self,
        scratch: &mut Scratch,
        x: &[f64],
        seed: &[f64],
        out: &mut [f64],
        grad_input: Option<&mut [f64]>,
        mut grad_params: Option<&mut [f64]>,
    ) {
        let t = self.transitions();
        self.forward(scratch, x);
        out.copy_from_slice(scratch.layers.last().unwrap());

        // Parameter offsets per transition in the flat layout.
        let mut offsets = Vec::with_capacity(t);
        let mut off = 0usize;
        for l in 0..t {
            offsets.push(off);
            off += self.widths[l] * self.widths[l + 1];
            if l + 1 < t {
                off += self.widths[l + 1];
            }
        }

        // delta holds d loss / d (post-activation of current layer).
        scratch.delta.clear();
        scratch.delta.extend_from_slice(seed);
        for l in (0..t).rev() {
            let (nin, nout) = (self.widths[l], self.widths[l + 1]);
            let w = &self.weights[l];
            let src = &scratch.layers[l];
            let last = l + 1 == t;

            // Convert delta to d loss / d (pre-activation).
            if !last {
                let act = &scratch.layers[l + 1];
                match self.activation {
                    Activation::Tanh => {
                        for i in 0..nout {
                            scratch.delta[i] *= 1.0 - act[i] * act[i];
                        }
                    }
                    _ => {
                        // Rebuild pre-activations for the kinky families.
                        for i in 0..nout {
                            let row = &w[i * nin..(i + 1) * nin];
                            let mut acc = self.biases[l][i];
                            for j in 0..nin {
                                acc += row[j] * src[j];
                            }
                            scratch.delta[i] *= self.activation.apply(acc).1;
                        }
                    }
                }
            }

            if let Some(gp) = grad_params.as_deref_mut() {
                let base = offsets[l];
                for i in 0..nout {
                    let di = scratch.delta[i];
                    if di != 0.0 {
                        let grow = &mut gp[base + i * nin..base + (i + 1) * nin];
                        for j in 0..nin {
                            grow[j] += di * src[j];
                        }
                    }
                }
                if !last {
                    let bbase = base + nin * nout;
                    for i in 0..nout {
                        gp[bbase + i] += scratch.delta[i];
                    }
                }
            }

            // Propagate to the previous layer (or the input on l = 0).
            scratch.delta2.clear();
            scratch.delta2.resize(nin, 0.0);
            for i in 0..nout {
                let di = scratch.delta[i];
                if di != 0.0 {
                    let row = &w[i * nin..(i + 1) * nin];
                    for j in 0..nin {
                        scratch.delta2[j] += di * row[j];
                    }
                }
            }
            std::mem::swap(&mut scratch.delta, &mut scratch.delta2);
        }
        if let Some(gi) = grad_input {
            gi.copy_from_slice(&scratch.delta);
        }
    }

    pub fn parameter_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        let t = self.transitions();
        for l in 0..t {
            v.extend_from_slice(&self.weights[l]);
            if l + 1 < t {
                v.extend_from_slice(&self.biases[l]);
            }
        }
        v
    }

    pub fn load_parameters(&mut self, v: &[f64]) {
        let t = self.transitions();
        let mut off = 0;
        for l in 0..t {
            let nw = self.weights[l].len();
            self.weights[l].copy_from_slice(&v[off..off + nw]);
            off += nw;
            if l + 1 < t {
                let nb = self.biases[l].len();
                self.biases[l].copy_from_slice(&v[off..off + nb]);
                off += nb;
            }
        }
    }

    pub fn initialize(&mut self, scheme: &InitScheme) -> Result<()> {
        match scheme {
            InitScheme::Zeros => {
                self.weights.iter_mut().for_each(|w| w.fill(0.0));
                self.biases.iter_mut().for_each(|b| b.fill(0.0));
            }
            InitScheme::ScaledUniform { seed } => {
                let mut rng = ChaCha12Rng::seed_from_u64(*seed);
                for l in 0..self.transitions() {
                    let bound = (6.0 / (self.widths[l] + self.widths[l + 1]) as f64).sqrt();
                    for w in self.weights[l].iter_mut() {
                        *w = rng.gen_range(-bound..bound);
                    }
                }
                self.biases.iter_mut().for_each(|b| b.fill(0.0));
            }
            InitScheme::Gaussian { mean, std, seed } => {
                let mut rng = ChaCha12Rng::seed_from_u64(*seed);
                let dist = Normal::new(*mean, *std)
                    .map_err(|e| Error::contract(format!("bad gaussian init: {e}")))?;
                for l in 0..self.transitions() {
                    for w in self.weights[l].iter_mut() {
                        *w = dist.sample(&mut rng);
                    }
                    if l + 1 < self.transitions() {
                        for b in self.biases[l].iter_mut() {
                            *b = dist.sample(&mut rng);
                        }
                    }
                }
            }
            InitScheme::RbfnDefault { .. } => {
                return Err(Error::contract("rbfn default init applies to rbfn models only"));
            }
        }
        Ok(())
    }

    fn record_generic(
        &self,
        tape: &mut Tape,
        x: &[TapeVar],
        theta: Option<&[TapeVar]>,
    ) -> Result<Vec<TapeVar>> {
        let t = self.transitions();
        let mut cur: Vec<TapeVar> = x.to_vec();
        let mut off = 0usize;
        for l in 0..t {
            let (nin, nout) = (self.widths[l], self.widths[l + 1]);
            let last = l + 1 == t;
            let mut next = Vec::with_capacity(nout);
            for i in 0..nout {
                let row: Vec<TapeVar> = match theta {
                    Some(th) => th[off + i * nin..off + (i + 1) * nin].to_vec(),
                    None => self.weights[l][i * nin..(i + 1) * nin]
                        .iter()
                        .map(|&w| tape.constant(w))
                        .collect(),
                };
                let mut acc = tape.dot(&row, &cur)?;
                if !last {
                    let b = match theta {
                        Some(th) => th[off + nin * nout + i],
                        None => tape.constant(self.biases[l][i]),
                    };
                    acc = tape.add(acc, b);
                    acc = self.activation.record(tape, acc);
                }
                next.push(acc);
            }
            off += nin * nout;
            if !last {
                off += nout;
            }
            cur = next;
        }
        Ok(cur)
    }

    pub fn record_on_tape(&self, tape: &mut Tape, x: &[TapeVar]) -> Result<Vec<TapeVar>> {
        self.record_generic(tape, x, None)
    }

    pub fn record_with_params(
        &self,
        tape: &mut Tape,
        x: &[f64],
        theta: &[TapeVar],
    ) -> Result<Vec<TapeVar>> {
        let xv: Vec<TapeVar> = x.iter().map(|&v| tape.constant(v)).collect();
        self.record_generic(tape, &xv, Some(theta))
    }
}
