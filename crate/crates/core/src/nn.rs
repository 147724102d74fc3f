//! Affine layers and the fully connected coefficient learner.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{axpy, dot, Parameter, Tensor};

/// Uniform fan-in initialization in `[-1/√fan_in, 1/√fan_in]`.
pub(crate) fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..=bound))
}

#[inline]
pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the rectified activation is inactive.
#[inline]
pub(crate) fn relu_backward(activated: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `y = W·x + b`, `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(id: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Parameter::new(
                format!("{id}.weight"),
                uniform_fan_in(&[outputs, inputs], inputs, rng),
            ),
            bias: Parameter::new(format!("{id}.bias"), Tensor::zeros([outputs])),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Sets weights and biases to zero.
    pub fn zero(&mut self) {
        self.weight.value.data_mut().fill(0.0);
        self.bias.value.data_mut().fill(0.0);
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n_in = self.inputs();
        let w = self.weight.value.data();
        self.bias
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(o, b)| b + dot(&w[o * n_in..(o + 1) * n_in], x))
            .collect()
    }

    /// Accumulates parameter gradients and, when asked, returns `dL/dx`.
    pub(crate) fn backward(&mut self, x: &[f64], grad_out: &[f64], want_input_grad: bool) -> Option<Vec<f64>> {
        let n_in = self.inputs();
        let dw = self.weight.grad.data_mut();
        for (o, &g) in grad_out.iter().enumerate() {
            if g != 0.0 {
                axpy(g, x, &mut dw[o * n_in..(o + 1) * n_in]);
            }
        }
        for (db, g) in self.bias.grad.data_mut().iter_mut().zip(grad_out) {
            *db += g;
        }
        want_input_grad.then(|| {
            let w = self.weight.value.data();
            let mut dx = vec![0.0; n_in];
            for (o, &g) in grad_out.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &w[o * n_in..(o + 1) * n_in], &mut dx);
                }
            }
            dx
        })
    }

    pub(crate) fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcConfig {
    pub layers: usize,
    pub units: usize,
}

impl Default for FcConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            units: 256,
        }
    }
}

/// Flatten-then-dense learner: the `[M × t]` window is read as one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

pub(crate) struct MlpCache {
    /// Input to each layer, then the final activation.
    activations: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(id: &str, inputs: usize, config: FcConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(config.layers);
        let mut width = inputs;
        for i in 0..config.layers {
            layers.push(Linear::new(&format!("{id}.fc{i}"), width, config.units, rng));
            width = config.units;
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, Linear::outputs)
    }

    pub(crate) fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut h = x.to_vec();
        for layer in &self.layers {
            let mut next = layer.forward(&h);
            relu_in_place(&mut next);
            activations.push(std::mem::replace(&mut h, next));
        }
        let out = h.clone();
        activations.push(h);
        (out, MlpCache { activations })
    }

    pub(crate) fn backward(&mut self, cache: &MlpCache, grad_out: &[f64]) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            relu_backward(&cache.activations[i + 1], &mut g);
            g = layer
                .backward(&cache.activations[i], &g, true)
                .expect("input grad requested");
        }
        g
    }

    pub(crate) fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
