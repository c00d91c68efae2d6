//! Small dense networks with a flat parameter vector and hand-written
//! backpropagation, plus the two optimizers used by the learners.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Layer widths from input to output, the hidden nonlinearity and the
/// nonlinearity applied to the last layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Topology {
    pub fn new(input: usize, hidden_widths: &[usize], output: usize) -> Self {
        let mut sizes = Vec::with_capacity(hidden_widths.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden_widths);
        sizes.push(output);
        Self {
            sizes,
            hidden: Activation::Relu,
            output: Activation::Identity,
        }
    }

    pub fn with_output(mut self, output: Activation) -> Self {
        self.output = output;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "bad layer sizes {:?}",
                self.sizes
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Dense feed-forward network. Parameters are stored layer by layer, each
/// layer as a row-major `out × in` weight block followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpDoc", into = "MlpDoc")]
pub struct Mlp {
    topology: Topology,
    params: Vec<f64>,
}

/// Post-activation outputs of every layer for one batch, input included.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    layers: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.layers
            .last()
            .expect("tape has at least the input layer")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpDoc {
    topology: Topology,
    params: Vec<f64>,
}

impl TryFrom<MlpDoc> for Mlp {
    type Error = Error;

    fn try_from(doc: MlpDoc) -> Result<Self> {
        Mlp::from_params(doc.topology, doc.params)
    }
}

impl From<Mlp> for MlpDoc {
    fn from(m: Mlp) -> Self {
        MlpDoc {
            topology: m.topology,
            params: m.params,
        }
    }
}

impl Mlp {
    /// Uniform fan-in initialization (`±1/√fan_in`), zero biases.
    pub fn new<R: Rng + ?Sized>(topology: Topology, rng: &mut R) -> Result<Self> {
        topology.validate()?;
        let mut params = Vec::with_capacity(topology.n_params());
        for w in topology.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self { topology, params })
    }

    pub fn from_params(topology: Topology, params: Vec<f64>) -> Result<Self> {
        topology.validate()?;
        if params.len() != topology.n_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                topology.n_params(),
                params.len()
            )));
        }
        Ok(Self { topology, params })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn n_inputs(&self) -> usize {
        self.topology.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.topology.sizes.last().expect("validated")
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.topology.sizes.len() {
            self.topology.output
        } else {
            self.topology.hidden
        }
    }

    /// Forward pass over `batch` row-major inputs, keeping every layer.
    pub fn forward_tape(&self, input: &[f64], batch: usize) -> Tape {
        assert_eq!(input.len(), batch * self.n_inputs(), "input shape");
        let mut layers = Vec::with_capacity(self.topology.sizes.len());
        layers.push(input.to_vec());
        let mut offset = 0;
        for (l, w) in self.topology.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let act = self.activation(l);
            let prev = layers.last().expect("non-empty");
            let mut out = vec![0.0; batch * n_out];
            for b in 0..batch {
                let x = &prev[b * n_in..(b + 1) * n_in];
                let y = &mut out[b * n_out..(b + 1) * n_out];
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let dot: f64 = row.iter().zip(x).map(|(w, x)| w * x).sum();
                    *yo = act.apply(dot + biases[o]);
                }
            }
            layers.push(out);
        }
        Tape { batch, layers }
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Vec<f64> {
        self.forward_tape(input, batch)
            .layers
            .pop()
            .expect("non-empty")
    }

    /// Backpropagates `grad_output` (d loss / d output, batch-major) through
    /// the recorded pass. Parameter gradients are added into `grad_params`;
    /// the gradient with respect to the input is returned.
    pub fn backward(&self, tape: &Tape, grad_output: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        assert_eq!(
            grad_params.len(),
            self.params.len(),
            "gradient buffer shape"
        );
        assert_eq!(
            grad_output.len(),
            tape.output().len(),
            "output gradient shape"
        );
        let batch = tape.batch;
        let n_layers = self.topology.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.topology.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = grad_output.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.topology.sizes[l], self.topology.sizes[l + 1]);
            let act = self.activation(l);
            let out = &tape.layers[l + 1];
            for (d, y) in delta.iter_mut().zip(out) {
                *d *= act.derivative_from_output(*y);
            }
            let x = &tape.layers[l];
            let start = offsets[l];
            let weights = &self.params[start..start + n_in * n_out];
            let (gw, gb) =
                grad_params[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut next = vec![0.0; batch * n_in];
            for b in 0..batch {
                let xb = &x[b * n_in..(b + 1) * n_in];
                let db = &delta[b * n_out..(b + 1) * n_out];
                let nb = &mut next[b * n_in..(b + 1) * n_in];
                for (o, &d) in db.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let grow = &mut gw[o * n_in..(o + 1) * n_in];
                    let wrow = &weights[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        grow[i] += d * xb[i];
                        nb[i] += d * wrow[i];
                    }
                }
            }
            delta = next;
        }
        delta
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// `self ← τ·source + (1 − τ)·self`, parameter-wise.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        assert_eq!(
            self.topology, source.topology,
            "soft update between different topologies"
        );
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
}

/// Adaptive-moment gradient descent:
///
/// ```text
/// m ← β₁m + (1 − β₁)g        v ← β₂v + (1 − β₂)g²
/// θ ← θ − lr · (m / (1 − β₁ᵗ)) / (√(v / (1 − β₂ᵗ)) + ε)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter shape");
        assert_eq!(grad.len(), self.m.len(), "optimizer/gradient shape");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Plain gradient descent, `θ ← θ − lr·g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, params: &mut [f64], grad: &[f64]) {
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= self.lr * g;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(Sgd),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(n_params, lr)),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd { lr }),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Adam(a) => a.step(params, grad),
            Optimizer::Sgd(s) => s.step(params, grad),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Adam(a) => a.lr = lr,
            Optimizer::Sgd(s) => s.lr = lr,
        }
    }
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
