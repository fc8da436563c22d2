//! Fully connected network over a flat parameter vector.
//!
//! Layer `l` maps `dims[l] → dims[l+1]`. Its parameters occupy one contiguous
//! block of `params`: a row-major `dims[l] × dims[l+1]` weight matrix followed
//! by `dims[l+1]` biases, so a batch forward is `Z = X·W + b`. Hidden layers
//! apply their activation; the output layer is linear.
//!
//! Two call styles are supported. [`MlpModel::forward`] / [`MlpModel::backward`]
//! keep the activation cache inside the model and accumulate into `grads`.
//! [`MlpModel::forward_traced`] / [`MlpModel::backward_traced`] hand the cache
//! back to the caller and work through `&self`, which is what frozen models
//! (a trained noise predictor guiding a policy) need.

use std::fmt;
use std::str::FromStr;

use super::matrix::{accumulate_t_matmul, matmul_weights, matmul_weights_t};
use super::{Matrix, Rng};
use crate::error::{Error, Result};

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    LeakyRelu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    /// Derivative given the pre-activation `z` and the output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::LeakyRelu => "leaky_relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer; `layer_inputs[0]` is the network input.
    layer_inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    hidden_pre: Vec<Matrix>,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.layer_inputs[0].rows()
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    grads: Vec<f64>,
    cache: Option<Trace>,
}

/// Networks compare equal when architecture and parameters match; gradient
/// buffers and cached activations are ignored.
impl PartialEq for MlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims && self.activations == other.activations && self.params == other.params
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl MlpModel {
    /// Zero-initialised network. `activations` holds one tag per hidden layer.
    pub fn zeros(layer_dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::config("an MLP needs at least an input and an output dim"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::config("layer dims must be positive"));
        }
        if activations.len() != layer_dims.len() - 2 {
            return Err(Error::config(format!(
                "{} hidden layers but {} activation tags",
                layer_dims.len() - 2,
                activations.len()
            )));
        }
        let n = param_count(layer_dims);
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; n],
            grads: vec![0.0; n],
            cache: None,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new(layer_dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        let mut model = Self::zeros(layer_dims, activations)?;
        let mut offset = 0;
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut model.params[offset..offset + fan_in * fan_out] {
                *p = rng.uniform_in(-limit, limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(model)
    }

    /// `hidden` widths between `input` and `output`, all sharing one activation.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        Self::new(&dims, &vec![activation; hidden.len()], rng)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Split access for optimizers.
    pub fn params_and_grads_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.params, &mut self.grads)
    }

    /// Parameter-block offsets of layer `l`: (weights start, biases start, end).
    fn layer_span(&self, l: usize) -> (usize, usize, usize) {
        let start = param_count(&self.layer_dims[..=l]);
        let (i, o) = (self.layer_dims[l], self.layer_dims[l + 1]);
        (start, start + i * o, start + i * o + o)
    }

    /// Weight block (row-major `in × out`) of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let (w, b, _) = self.layer_span(l);
        &self.params[w..b]
    }

    /// Bias vector of layer `l`.
    pub fn biases(&self, l: usize) -> &[f64] {
        let (_, b, e) = self.layer_span(l);
        &self.params[b..e]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (w, b, _) = self.layer_span(l);
        &mut self.params[w..b]
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b, e) = self.layer_span(l);
        &mut self.params[b..e]
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects {} input columns, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        Ok(())
    }

    fn run(&self, input: &Matrix, mut trace: Option<&mut Trace>) -> Result<Matrix> {
        self.check_input(input)?;
        let layers = self.num_layers();
        let mut h = input.clone();
        for l in 0..layers {
            let out_dim = self.layer_dims[l + 1];
            let mut z = matmul_weights(&h, self.weights(l), out_dim);
            z.add_row_broadcast(self.biases(l))?;
            let next = if l + 1 < layers {
                let act = self.activations[l];
                let y = z.map(|v| act.apply(v));
                if let Some(t) = trace.as_deref_mut() {
                    t.hidden_pre.push(z);
                }
                y
            } else {
                z
            };
            if let Some(t) = trace.as_deref_mut() {
                t.layer_inputs.push(h);
            }
            h = next;
        }
        Ok(h)
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        self.run(input, None)
    }

    /// Forward pass returning the activation trace to the caller.
    pub fn forward_traced(&self, input: &Matrix) -> Result<(Matrix, Trace)> {
        let mut trace = Trace {
            layer_inputs: Vec::with_capacity(self.num_layers()),
            hidden_pre: Vec::with_capacity(self.num_layers().saturating_sub(1)),
        };
        let out = self.run(input, Some(&mut trace))?;
        Ok((out, trace))
    }

    /// Backward pass through a recorded trace. Parameter gradients are added to
    /// `param_grads` when given; the gradient w.r.t. the input is returned.
    pub fn backward_traced(
        &self,
        trace: &Trace,
        grad_output: &Matrix,
        mut param_grads: Option<&mut [f64]>,
    ) -> Result<Matrix> {
        let batch = trace.batch_size();
        grad_output.ensure_shape(batch, self.output_dim(), "upstream gradient")?;
        if let Some(g) = param_grads.as_deref() {
            if g.len() != self.params.len() {
                return Err(Error::shape("gradient buffer length differs from params"));
            }
        }
        let mut delta = grad_output.clone();
        for l in (0..self.num_layers()).rev() {
            if l + 1 < self.num_layers() {
                // delta currently holds dL/dy for hidden layer l; move to dL/dz
                let act = self.activations[l];
                let z = &trace.hidden_pre[l];
                let y = &trace.layer_inputs[l + 1];
                for ((d, &zv), &yv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()).zip(y.as_slice()) {
                    *d *= act.derivative(zv, yv);
                }
            }
            if let Some(g) = param_grads.as_deref_mut() {
                let (w, b, e) = self.layer_span(l);
                accumulate_t_matmul(&trace.layer_inputs[l], &delta, &mut g[w..b]);
                for (gb, s) in g[b..e].iter_mut().zip(delta.col_sums()) {
                    *gb += s;
                }
            }
            delta = matmul_weights_t(&delta, self.weights(l), self.layer_dims[l]);
        }
        Ok(delta)
    }

    /// Forward pass that caches activations for [`MlpModel::backward`].
    pub fn forward(&mut self, input: &Matrix) -> Result<Matrix> {
        let (out, trace) = self.forward_traced(input)?;
        self.cache = Some(trace);
        Ok(out)
    }

    /// Accumulates dLoss/dParams into `grads` and returns dLoss/dInput.
    /// Consumes the cache of the preceding [`MlpModel::forward`].
    pub fn backward(&mut self, grad_output: &Matrix) -> Result<Matrix> {
        let trace = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let mut grads = std::mem::take(&mut self.grads);
        let result = self.backward_traced(&trace, grad_output, Some(&mut grads));
        self.grads = grads;
        result
    }
}

/// Free-function form of [`MlpModel::forward`].
pub fn mlp_forward(model: &mut MlpModel, input: &Matrix) -> Result<Matrix> {
    model.forward(input)
}

/// Free-function form of [`MlpModel::backward`].
pub fn mlp_backward(model: &mut MlpModel, loss_grad_wrt_output: &Matrix) -> Result<Matrix> {
    model.backward(loss_grad_wrt_output)
}
