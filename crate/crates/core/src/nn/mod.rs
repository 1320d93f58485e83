//! Dense feed-forward networks with exact backpropagation.
//!
//! Weights are stored input-major (`weights_t[i * out + o]` is the weight
//! from input `i` to output `o`). Forward and backward then walk contiguous
//! rows and can skip zero inputs outright, which matters a lot here: pursuit
//! observations are sparse binary windows and dropped message blocks are all
//! zeros. The checkpoint format still uses the conventional row-major
//! `out x in` layout.

mod adam;
mod checkpoint;
mod gradcheck;
mod grads;

pub use adam::AdamState;
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relu_margin, GRAD_CHECK_DELTA};
pub use grads::{Gradients, LayerGrad};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Linear,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Linear),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }
}

/// Builds a chain `dims[0] -> dims[1] -> ...` with `hidden` on every layer
/// but the last, which gets `last`.
pub fn chain(dims: &[usize], hidden: Activation, last: Activation) -> Vec<LayerSpec> {
    let n = dims.len().saturating_sub(1);
    (0..n)
        .map(|l| {
            let act = if l + 1 == n { last } else { hidden };
            LayerSpec::new(dims[l], dims[l + 1], act)
        })
        .collect()
}

/// One affine layer followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    input_dim: usize,
    output_dim: usize,
    activation: Activation,
    weights_t: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            input_dim: spec.input_dim,
            output_dim: spec.output_dim,
            activation: spec.activation,
            weights_t: vec![0.0; spec.input_dim * spec.output_dim],
            bias: vec![0.0; spec.output_dim],
        }
    }

    /// Build from a row-major `out x in` weight matrix.
    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let out = rows.len();
        let inp = rows.first().map_or(0, Vec::len);
        if out == 0 || inp == 0 || bias.len() != out || rows.iter().any(|r| r.len() != inp) {
            return Err(Error::Shape("ragged or empty weight matrix".into()));
        }
        let mut layer = Dense::zeros(LayerSpec::new(inp, out, activation));
        for (o, row) in rows.iter().enumerate() {
            for (i, &w) in row.iter().enumerate() {
                layer.set_weight(o, i, w);
            }
        }
        layer.bias = bias;
        Ok(layer)
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::new(self.input_dim, self.output_dim, self.activation)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights_t[inp * self.output_dim + out]
    }

    #[inline]
    pub fn set_weight(&mut self, out: usize, inp: usize, w: f64) {
        self.weights_t[inp * self.output_dim + out] = w;
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub(crate) fn weights_t(&self) -> &[f64] {
        &self.weights_t
    }

    pub(crate) fn weights_t_mut(&mut self) -> &mut [f64] {
        &mut self.weights_t
    }

    /// Pre-activation `W x + b`.
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let out = self.output_dim;
        let mut z = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights_t[i * out..(i + 1) * out];
            for (zo, &w) in z.iter_mut().zip(row) {
                *zo += xi * w;
            }
        }
        z
    }
}

/// Per-layer values recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }

    pub fn preactivations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_chain(specs)?;
        let mut rng = rng::seeded(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                let mut layer = Dense::zeros(spec);
                let limit = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
                for o in 0..spec.output_dim {
                    for i in 0..spec.input_dim {
                        layer.set_weight(o, i, rng.random_range(-limit..limit));
                    }
                }
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(Dense::spec).collect();
        validate_chain(&specs)?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Dense::spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights_t.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights_t.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// Forward pass returning the output and everything backward needs.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for layer in &self.layers {
            let z = layer.affine(activations.last().unwrap());
            let y: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            activations.push(y);
        }
        let out = activations.last().unwrap().clone();
        Ok((out, ForwardCache { activations, pre }))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = self.layers[0].affine(x);
        let act = self.layers[0].activation;
        a.iter_mut().for_each(|v| *v = act.apply(*v));
        for layer in &self.layers[1..] {
            let mut z = layer.affine(&a);
            z.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            a = z;
        }
        Ok(a)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients::zeros_like(self)
    }

    /// Exact gradients of a scalar loss whose gradient with respect to the
    /// network output is `d_output`. Also returns the input gradient so
    /// composite networks can chain.
    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = self.zero_gradients();
        let dx = self.backward_into(cache, d_output, &mut grads, true)?;
        Ok((grads, dx.expect("input gradient requested")))
    }

    /// Accumulating backward pass: adds into `grads`, and computes the input
    /// gradient only when `want_input_grad` is set.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        d_output: &[f64],
        grads: &mut Gradients,
        want_input_grad: bool,
    ) -> Result<Option<Vec<f64>>> {
        self.check_cache(cache)?;
        if d_output.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient has {} entries, network has {} outputs",
                d_output.len(),
                self.output_dim()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient buffer does not match network".into()));
        }
        let mut delta = d_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let out = layer.output_dim;
            let y = &cache.activations[l + 1];
            for (d, &yo) in delta.iter_mut().zip(y) {
                *d *= layer.activation.derivative(yo);
            }
            let g = &mut grads.layers[l];
            for (gb, &d) in g.bias.iter_mut().zip(&delta) {
                *gb += d;
            }
            let x = &cache.activations[l];
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut g.weights_t[i * out..(i + 1) * out];
                for (gw, &d) in row.iter_mut().zip(&delta) {
                    *gw += xi * d;
                }
            }
            if l == 0 && !want_input_grad {
                return Ok(None);
            }
            let mut dx = vec![0.0; layer.input_dim];
            for (i, dxi) in dx.iter_mut().enumerate() {
                let row = &layer.weights_t[i * out..(i + 1) * out];
                *dxi = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
            }
            delta = dx;
        }
        Ok(Some(delta))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let ok = cache.activations.len() == self.layers.len() + 1
            && self
                .layers
                .iter()
                .enumerate()
                .all(|(l, layer)| {
                    cache.activations[l].len() == layer.input_dim
                        && cache.activations[l + 1].len() == layer.output_dim
                });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("stale forward cache".into()))
        }
    }

    /// Flat parameter access (per layer: weights in storage order, then biases).
    pub(crate) fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights_t.len();
            if k < nw {
                return &mut layer.weights_t[k];
            }
            k -= nw;
            if k < layer.bias.len() {
                return &mut layer.bias[k];
            }
            k -= layer.bias.len();
        }
        panic!("parameter index out of range")
    }
}

fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Shape("network needs at least one layer".into()));
    }
    for (l, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::Shape(format!("layer {l} has a zero dimension")));
        }
        if l > 0 && specs[l - 1].output_dim != s.input_dim {
            return Err(Error::Shape(format!(
                "layer {} outputs {} but layer {l} expects {}",
                l - 1,
                specs[l - 1].output_dim,
                s.input_dim
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in net.layers() {
            let mut next = vec![0.0; layer.output_dim()];
            for (o, n) in next.iter_mut().enumerate() {
                let mut z = layer.bias()[o];
                for (i, xi) in a.iter().enumerate() {
                    z += layer.weight(o, i) * xi;
                }
                *n = match layer.activation() {
                    Activation::Relu => z.max(0.0),
                    Activation::Linear => z,
                    Activation::Tanh => z.tanh(),
                };
            }
            a = next;
        }
        a
    }

    #[test]
    fn init_is_deterministic() {
        let specs = [LayerSpec::new(2, 3, Activation::Relu)];
        assert_eq!(Mlp::new(&specs, 7).unwrap(), Mlp::new(&specs, 7).unwrap());
        assert_ne!(Mlp::new(&specs, 7).unwrap(), Mlp::new(&specs, 8).unwrap());
    }

    #[test]
    fn init_shapes_and_biases() {
        let net = Mlp::new(&chain(&[147, 64, 48], Activation::Relu, Activation::Relu), 1).unwrap();
        assert_eq!(net.layers()[0].spec(), LayerSpec::new(147, 64, Activation::Relu));
        assert_eq!(net.layers()[1].spec(), LayerSpec::new(64, 48, Activation::Relu));
        assert!(net.layers().iter().all(|l| l.bias().iter().all(|&b| b == 0.0)));
        let limit = (6.0f64 / (147.0 + 64.0)).sqrt();
        let l0 = &net.layers()[0];
        assert!(l0.weights_t().iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn init_weight_mean_is_centred() {
        // 10^4 weights of one 100x100 layer; uniform(-a, a) has sigma = a/sqrt(3).
        let net = Mlp::new(&[LayerSpec::new(100, 100, Activation::Linear)], 11).unwrap();
        let w = net.layers()[0].weights_t();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sigma = (6.0f64 / 200.0).sqrt() / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * sigma / 100.0, "mean {mean}");
    }

    #[test]
    fn rejects_broken_chains() {
        let specs = [
            LayerSpec::new(2, 3, Activation::Relu),
            LayerSpec::new(4, 1, Activation::Linear),
        ];
        assert!(matches!(Mlp::new(&specs, 0), Err(Error::Shape(_))));
        assert!(Mlp::new(&[], 0).is_err());
        assert!(Mlp::new(&[LayerSpec::new(0, 1, Activation::Relu)], 0).is_err());
    }

    #[test]
    fn identity_and_relu_examples() {
        let id = Mlp::from_layers(vec![Dense::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Linear,
        )
        .unwrap()])
        .unwrap();
        assert_eq!(id.forward(&[1.0, 2.0]).unwrap().0, vec![1.0, 2.0]);

        let neg = Mlp::from_layers(vec![
            Dense::from_rows(&[vec![-1.0]], vec![0.0], Activation::Relu).unwrap(),
        ])
        .unwrap();
        assert_eq!(neg.forward(&[3.0]).unwrap().0, vec![0.0]);
    }

    #[test]
    fn forward_matches_nested_loop_oracle() {
        let net = Mlp::new(&chain(&[147, 64, 48], Activation::Relu, Activation::Relu), 3).unwrap();
        let mut r = rng::seeded(5);
        let x: Vec<f64> = (0..147).map(|_| r.random_range(-1.0..1.0)).collect();
        let (y, _) = net.forward(&x).unwrap();
        let expect = naive_forward(&net, &x);
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        assert_eq!(net.predict(&x).unwrap(), y);
    }

    #[test]
    fn forward_errors() {
        let net = Mlp::new(&[LayerSpec::new(2, 1, Activation::Linear)], 0).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape(_))));
        assert!(matches!(net.forward(&[1.0, f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let net = Mlp::from_layers(vec![
            Dense::from_rows(&[vec![0.7]], vec![0.1], Activation::Linear).unwrap(),
        ])
        .unwrap();
        let (_, cache) = net.forward(&[2.5]).unwrap();
        let (g, dx) = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.layers[0].weights_t, vec![2.5]);
        assert_eq!(g.layers[0].bias, vec![1.0]);
        assert_eq!(dx, vec![0.7]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = Mlp::new(&chain(&[5, 4, 3], Activation::Relu, Activation::Linear), 2).unwrap();
        let (_, cache) = net.forward(&[0.1, -0.2, 0.3, 0.4, -0.5]).unwrap();
        let (g, dx) = net.backward(&cache, &[0.0; 3]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let a = Mlp::new(&chain(&[3, 4, 2], Activation::Relu, Activation::Linear), 0).unwrap();
        let b = Mlp::new(&chain(&[3, 5, 2], Activation::Relu, Activation::Linear), 0).unwrap();
        let (_, cache) = a.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(b.backward(&cache, &[1.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_shapes_are_conserved() {
        let net = Mlp::new(&chain(&[6, 5, 4, 3], Activation::Tanh, Activation::Linear), 9).unwrap();
        let before = net.specs();
        let (_, cache) = net.forward(&[0.3; 6]).unwrap();
        let (g, dx) = net.backward(&cache, &[1.0, -1.0, 0.5]).unwrap();
        assert_eq!(net.specs(), before);
        assert_eq!(dx.len(), 6);
        for (lg, layer) in g.layers.iter().zip(net.layers()) {
            assert_eq!(lg.weights_t.len(), layer.input_dim() * layer.output_dim());
            assert_eq!(lg.bias.len(), layer.output_dim());
        }
    }
}
