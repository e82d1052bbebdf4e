use std::collections::BTreeMap;

use super::layers::{self, relu_backward, sigmoid_backward};
use super::{shape_err, ModelParameters, NnError, Tensor};

/// One stage of a feed-forward stack. Parametric layers refer to entries of
/// the network's [`ModelParameters`] by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv2d { kernels: String, bias: String },
    Dense { weights: String, bias: String },
    Relu,
    Sigmoid,
    Softmax,
    Flatten,
}

impl Layer {
    pub fn conv2d(prefix: &str) -> Self {
        Layer::Conv2d {
            kernels: format!("{prefix}.kernels"),
            bias: format!("{prefix}.bias"),
        }
    }

    pub fn dense(prefix: &str) -> Self {
        Layer::Dense {
            weights: format!("{prefix}.weights"),
            bias: format!("{prefix}.bias"),
        }
    }

    fn param_names(&self) -> Vec<&str> {
        match self {
            Layer::Conv2d { kernels, bias } => vec![kernels, bias],
            Layer::Dense { weights, bias } => vec![weights, bias],
            _ => Vec::new(),
        }
    }
}

/// Gradient buffers keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn insert(&mut self, name: &str, grad: Tensor) {
        self.by_name.insert(name.to_string(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.by_name.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.by_name
            .values()
            .all(|t| t.data().iter().all(|&v| v == 0.0))
    }

    /// Removes the buffer for `name`, or returns zeros if it is absent or
    /// has the wrong shape.
    fn take(&mut self, name: &str, shape: &[usize]) -> Tensor {
        match self.by_name.remove(name) {
            Some(t) if t.shape() == shape => t,
            _ => Tensor::zeros(shape),
        }
    }
}

/// Intermediates recorded by [`Network::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_inputs: Vec<Tensor>,
    output: Tensor,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn into_output(self) -> Tensor {
        self.output
    }

    /// Input seen by each layer, in stack order.
    pub fn layer_inputs(&self) -> &[Tensor] {
        &self.layer_inputs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    params: ModelParameters,
}

impl Network {
    pub fn new(layers: Vec<Layer>, params: ModelParameters) -> Result<Self, NnError> {
        for layer in &layers {
            for name in layer.param_names() {
                params.require(name)?;
            }
        }
        Ok(Self { layers, params })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParameters {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParameters {
        self.params
    }

    fn apply(&self, layer: &Layer, x: &Tensor) -> Result<Tensor, NnError> {
        match layer {
            Layer::Conv2d { kernels, bias } => {
                layers::conv2d_forward(x, self.params.require(kernels)?, self.params.require(bias)?)
            }
            Layer::Dense { weights, bias } => {
                layers::dense_forward(x, self.params.require(weights)?, self.params.require(bias)?)
            }
            Layer::Relu => Ok(layers::relu(x)),
            Layer::Sigmoid => Ok(layers::sigmoid(x)),
            Layer::Softmax => Ok(layers::softmax(x)),
            Layer::Flatten => x.clone().reshape(vec![x.len()]),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = self.apply(layer, &x)?;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<ForwardCache, NnError> {
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let y = self.apply(layer, &x)?;
            layer_inputs.push(x);
            x = y;
        }
        Ok(ForwardCache {
            layer_inputs,
            output: x,
        })
    }

    /// Back-propagates `upstream` (dL/d output) through the cached pass,
    /// adding parameter gradients into `grads`; returns dL/d input.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        upstream: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor, NnError> {
        if cache.layer_inputs.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        if upstream.shape() != cache.output.shape() {
            return Err(shape_err("backward upstream", cache.output.shape(), upstream.shape()));
        }
        let mut g = upstream.clone();
        for (layer, x) in self.layers.iter().zip(&cache.layer_inputs).rev() {
            g = match layer {
                Layer::Conv2d { kernels, bias } => {
                    let k = self.params.require(kernels)?;
                    let b = self.params.require(bias)?;
                    let mut gk = grads.take(kernels, k.shape());
                    let mut gb = grads.take(bias, b.shape());
                    let dx = layers::conv2d_backward(x, k, b, &g, gk.data_mut(), gb.data_mut());
                    grads.insert(kernels, gk);
                    grads.insert(bias, gb);
                    dx?
                }
                Layer::Dense { weights, bias } => {
                    let w = self.params.require(weights)?;
                    let b = self.params.require(bias)?;
                    let mut gw = grads.take(weights, w.shape());
                    let mut gb = grads.take(bias, b.shape());
                    let dx = layers::dense_backward(x, w, b, &g, gw.data_mut(), gb.data_mut());
                    grads.insert(weights, gw);
                    grads.insert(bias, gb);
                    dx?
                }
                Layer::Relu => relu_backward(x, &g),
                Layer::Sigmoid => sigmoid_backward(x, &g),
                Layer::Softmax => layers::softmax_backward(x, &g),
                Layer::Flatten => g.reshape(x.shape().to_vec())?,
            };
        }
        Ok(g)
    }

    /// Convenience wrapper: fresh gradients for a single example.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Tensor) -> Result<(Gradients, Tensor), NnError> {
        let mut grads = Gradients::default();
        let dx = self.backward_accumulate(cache, upstream, &mut grads)?;
        Ok((grads, dx))
    }
}
