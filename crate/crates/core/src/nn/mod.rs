//! Dense feed-forward networks with explicit parameter storage and analytic
//! gradients. Everything learnable in the crate (policy, critics, dynamics
//! models) is a [`DenseNet`].

mod adam;
pub mod gradcheck;

pub use adam::AdamState;
pub use gradcheck::{gradient_check, ScalarLoss, SquaredError};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, MeeeError, Result};
use crate::random::rng_from_seed;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation's output.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Output-layer activation. Only identity is needed: every head that must be
/// bounded (log-variances, log-stds, squashed actions) is transformed by its
/// owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputActivation {
    #[default]
    Identity,
}

/// Weights and biases of one affine layer.
///
/// `weights` is stored input-major: entry `(j, i)` connecting input `j` to
/// output `i` lives at `j * fan_out + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![T::zero(); fan_in * fan_out],
            biases: vec![T::zero(); fan_out],
        }
    }

    #[inline]
    pub fn weight(&self, input: usize, output: usize) -> T {
        self.weights[input * self.fan_out + output]
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|x| x.is_finite())
    }
}

/// Per-layer parameter gradients, shaped exactly like a network's
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.fan_in, l.fan_out))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|x| *x *= factor);
        }
    }

    /// Layer-by-layer flattening, weights before biases.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|x| x.is_zero()))
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
/// `activations[0]` is the input and `activations[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub activations: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().expect("trace always holds the input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    layer_sizes: Vec<usize>,
    layers: Vec<LayerParams<T>>,
    hidden_activation: Activation,
    output_activation: OutputActivation,
}

impl<T: Scalar> DenseNet<T> {
    /// Builds a network with every parameter drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` using a generator seeded with `seed`.
    pub fn new(layer_sizes: &[usize], hidden_activation: Activation, seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = rng_from_seed(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = || T::of(rng.random_range(-bound..=bound));
                let weights = (0..fan_in * fan_out).map(|_| draw()).collect();
                let biases = (0..fan_out).map(|_| draw()).collect();
                LayerParams {
                    fan_in,
                    fan_out,
                    weights,
                    biases,
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            hidden_activation,
            output_activation: OutputActivation::Identity,
        })
    }

    /// Builds a network from explicit parameters.
    pub fn from_layers(layers: Vec<LayerParams<T>>, hidden_activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(MeeeError::InvalidArgument("network needs at least one layer".into()));
        }
        let mut sizes = vec![layers[0].fan_in];
        for (idx, l) in layers.iter().enumerate() {
            check_dim("layer fan_in", *sizes.last().unwrap(), l.fan_in)?;
            check_dim("layer weights", l.fan_in * l.fan_out, l.weights.len())?;
            check_dim("layer biases", l.fan_out, l.biases.len())?;
            if !l.is_finite() {
                return Err(MeeeError::NonFinite(format!("parameters of layer {idx}")));
            }
            sizes.push(l.fan_out);
        }
        validate_sizes(&sizes)?;
        Ok(Self {
            layer_sizes: sizes,
            layers,
            hidden_activation,
            output_activation: OutputActivation::Identity,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        check_dim("flat parameter vector", self.num_params(), flat.len())?;
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(LayerParams::is_finite)
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut x = input.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            x = self.apply_layer(idx, layer, &x);
        }
        Ok(x)
    }

    /// Forward pass that records every layer output for [`Self::backward_trace`].
    pub fn forward_trace(&self, input: &[T]) -> Result<Trace<T>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (idx, layer) in self.layers.iter().enumerate() {
            let next = self.apply_layer(idx, layer, activations.last().unwrap());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    #[inline]
    fn apply_layer(&self, idx: usize, layer: &LayerParams<T>, x: &[T]) -> Vec<T> {
        let mut out = layer.biases.clone();
        for (j, &xj) in x.iter().enumerate() {
            let row = &layer.weights[j * layer.fan_out..(j + 1) * layer.fan_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * xj;
            }
        }
        if idx + 1 < self.layers.len() {
            for o in &mut out {
                *o = self.hidden_activation.apply(*o);
            }
        }
        out
    }

    /// Gradients of `<upstream, forward(input)>` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, input: &[T], upstream: &[T]) -> Result<(Gradients<T>, Vec<T>)> {
        let trace = self.forward_trace(input)?;
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_trace(&trace, upstream, Some(&mut grads), true)?;
        Ok((grads, input_grad.expect("input gradient requested")))
    }

    /// Backward pass over a recorded trace. Parameter gradients are
    /// *accumulated* into `grads` when given; the input gradient is returned
    /// when `want_input` is set.
    pub fn backward_trace(
        &self,
        trace: &Trace<T>,
        upstream: &[T],
        mut grads: Option<&mut Gradients<T>>,
        want_input: bool,
    ) -> Result<Option<Vec<T>>> {
        check_dim("upstream gradient", self.output_dim(), upstream.len())?;
        check_dim("trace depth", self.layers.len() + 1, trace.activations.len())?;
        let last = self.layers.len() - 1;
        let mut delta = upstream.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            if idx < last {
                for (d, &y) in delta.iter_mut().zip(&trace.activations[idx + 1]) {
                    *d *= self.hidden_activation.derivative_from_output(y);
                }
            }
            let x = &trace.activations[idx];
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g.layers[idx];
                for (j, &xj) in x.iter().enumerate() {
                    let row = &mut gl.weights[j * layer.fan_out..(j + 1) * layer.fan_out];
                    for (gw, &d) in row.iter_mut().zip(&delta) {
                        *gw += xj * d;
                    }
                }
                for (gb, &d) in gl.biases.iter_mut().zip(&delta) {
                    *gb += d;
                }
            }
            if idx > 0 || want_input {
                delta = (0..layer.fan_in)
                    .map(|j| {
                        let row = &layer.weights[j * layer.fan_out..(j + 1) * layer.fan_out];
                        row.iter().zip(&delta).map(|(&w, &d)| w * d).sum()
                    })
                    .collect();
            }
        }
        Ok(if want_input { Some(delta) } else { None })
    }

    /// Polyak averaging: `self <- rho * self + (1 - rho) * online`.
    pub fn soft_update_from(&mut self, online: &DenseNet<T>, rho: T) {
        let keep = T::one() - rho;
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (a, &b) in t.weights.iter_mut().zip(&o.weights) {
                *a = rho * *a + keep * b;
            }
            for (a, &b) in t.biases.iter_mut().zip(&o.biases) {
                *a = rho * *a + keep * b;
            }
        }
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(MeeeError::InvalidArgument(
            "layer_sizes needs an input and an output size".into(),
        ));
    }
    if sizes.contains(&0) {
        return Err(MeeeError::InvalidArgument(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

/// `[input, hidden; layers, output]`.
pub fn mlp_sizes(input: usize, hidden: usize, hidden_layers: usize, output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend(std::iter::repeat_n(hidden, hidden_layers));
    sizes.push(output);
    sizes
}
