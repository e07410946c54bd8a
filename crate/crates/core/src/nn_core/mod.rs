//! A small dense-network stack: fully connected layers with hand-written
//! backward passes, ReLU, a logit-space Bernoulli loss and Adam.
//!
//! Parameters live in `f64` while training; checkpoints store them as `f32`.

mod checkpoint;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, LayerBlob, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Row-major `batch × features` matrix.
pub type Tensor2 = Array2<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub name: String,
    /// `in × out`
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub grad_weights: Array2<f64>,
    pub grad_biases: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(name: impl Into<String>, inputs: usize, outputs: usize) -> Self {
        Self {
            name: name.into(),
            weights: Array2::zeros((inputs, outputs)),
            biases: Array1::zeros(outputs),
            grad_weights: Array2::zeros((inputs, outputs)),
            grad_biases: Array1::zeros(outputs),
        }
    }

    /// Kaiming-style uniform init, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn kaiming_uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(name, inputs, outputs);
        let bound = (6.0 / inputs.max(1) as f64).sqrt();
        layer
            .weights
            .mapv_inplace(|_| rng.random_range(-bound..bound));
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.ncols() != self.inputs() {
            return Err(Error::Shape {
                context: "dense forward",
                left: x.shape().to_vec(),
                right: self.weights.shape().to_vec(),
            });
        }
        Ok(x.dot(&self.weights) + &self.biases)
    }

    /// Accumulates `xᵀ·dy` and the column sums of `dy`; returns `dy·Wᵀ`.
    pub fn backward(&mut self, x: &Tensor2, dy: &Tensor2) -> Result<Tensor2> {
        if x.nrows() != dy.nrows() || x.ncols() != self.inputs() || dy.ncols() != self.outputs() {
            return Err(Error::Shape {
                context: "dense backward",
                left: x.shape().to_vec(),
                right: dy.shape().to_vec(),
            });
        }
        ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, &mut self.grad_weights);
        self.grad_biases += &dy.sum_axis(Axis(0));
        Ok(dy.dot(&self.weights.t()))
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_biases.fill(0.0);
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        self.weights.mapv_inplace(|w| w as f32 as f64);
        self.biases.mapv_inplace(|b| b as f32 as f64);
    }

    pub fn params_mut(&mut self) -> [Param<'_>; 2] {
        let name = self.name.as_str();
        [
            Param {
                name: format!("{name}.weights"),
                value: self.weights.as_slice_mut().expect("standard layout"),
                grad: self.grad_weights.as_slice().expect("standard layout"),
            },
            Param {
                name: format!("{name}.biases"),
                value: self.biases.as_slice_mut().expect("standard layout"),
                grad: self.grad_biases.as_slice().expect("standard layout"),
            },
        ]
    }
}

pub fn relu_forward(x: &Tensor2) -> Tensor2 {
    x.mapv(|v| v.max(0.0))
}

/// Masks `dy` by `x > 0`; the derivative at zero is taken as zero.
pub fn relu_backward(x: &Tensor2, dy: &Tensor2) -> Tensor2 {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Per-example Bernoulli negative log-likelihood from logits, and its
/// gradient `σ(l) - t` with respect to the logits.
pub fn bernoulli_nll_logits(logits: &Tensor2, targets: &Tensor2) -> Result<(Array1<f64>, Tensor2)> {
    if logits.shape() != targets.shape() {
        return Err(Error::Shape {
            context: "bernoulli loss",
            left: logits.shape().to_vec(),
            right: targets.shape().to_vec(),
        });
    }
    if let Some((index, &value)) = targets
        .iter()
        .enumerate()
        .find(|(_, &t)| t != 0.0 && t != 1.0)
    {
        return Err(Error::InvalidTarget { index, value });
    }
    let mut loss = Array1::zeros(logits.nrows());
    let mut grad = Array2::zeros(logits.raw_dim());
    for (((row_l, row_t), mut row_g), out) in logits
        .rows()
        .into_iter()
        .zip(targets.rows())
        .zip(grad.rows_mut())
        .zip(loss.iter_mut())
    {
        let mut acc = 0.0;
        for ((&l, &t), g) in row_l.iter().zip(row_t.iter()).zip(row_g.iter_mut()) {
            // -[t ln σ(l) + (1-t) ln(1-σ(l))] = max(l,0) - l t + ln(1 + e^{-|l|})
            acc += l.max(0.0) - l * t + (-l.abs()).exp().ln_1p();
            *g = sigmoid(l) - t;
        }
        *out = acc;
    }
    Ok((loss, grad))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// A multilayer perceptron with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Tensor2>,
    /// Pre-activation output of every layer but the last.
    hidden_pre: Vec<Tensor2>,
}

impl Mlp {
    /// Builds `widths[0] → widths[1] → … → widths[last]`.
    pub fn new<R: Rng + ?Sized>(prefix: &str, widths: &[usize], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::kaiming_uniform(format!("{prefix}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::outputs)
    }

    pub fn forward(&self, x: &Tensor2) -> Result<(Tensor2, MlpTrace)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden_pre = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h)?;
            check_finite(&pre, &layer.name)?;
            inputs.push(h);
            if i == last {
                return Ok((pre, MlpTrace { inputs, hidden_pre }));
            }
            h = relu_forward(&pre);
            hidden_pre.push(pre);
        }
        unreachable!("an Mlp has at least one layer")
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h)?;
            check_finite(&pre, &layer.name)?;
            h = if i == last { pre } else { relu_forward(&pre) };
        }
        Ok(h)
    }

    pub fn backward(&mut self, trace: &MlpTrace, dout: &Tensor2) -> Result<Tensor2> {
        let mut grad = dout.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                grad = relu_backward(&trace.hidden_pre[i], &grad);
            }
            grad = self.layers[i].backward(&trace.inputs[i], &grad)?;
        }
        Ok(grad)
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(DenseLayer::zero_grad);
    }
}

fn check_finite(t: &Tensor2, name: &str) -> Result<()> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!(
            "non-finite activation out of layer {name}"
        )))
    }
}

/// A named parameter buffer and its gradient.
pub struct Param<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for an ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update over `params`, which must be passed in the
/// same order on every call.
pub fn adam_step(params: &mut [Param<'_>], state: &mut OptimizerState) -> Result<()> {
    for p in params.iter() {
        if p.value.len() != p.grad.len() {
            return Err(Error::Shape {
                context: "adam",
                left: vec![p.value.len()],
                right: vec![p.grad.len()],
            });
        }
        if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient in {} at index {i}",
                p.name
            )));
        }
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len()
        || state
            .first
            .iter()
            .zip(params.iter())
            .any(|(m, p)| m.len() != p.value.len())
    {
        return Err(Error::Shape {
            context: "adam state",
            left: state.first.iter().map(Vec::len).collect(),
            right: params.iter().map(|p| p.value.len()).collect(),
        });
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    for ((p, m), v) in params
        .iter_mut()
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((w, &g), mi), vi) in p
            .value
            .iter_mut()
            .zip(p.grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *w -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
    Ok(())
}
