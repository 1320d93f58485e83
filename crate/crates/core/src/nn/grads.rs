use super::Mlp;
use crate::error::{Error, Result};

/// Gradient of one layer, same storage layout as the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights_t: Vec<f64>,
    pub bias: Vec<f64>,
}

/// d(loss)/d(parameter) for every parameter of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weights_t: vec![0.0; l.weights_t().len()],
                    bias: vec![0.0; l.bias().len()],
                })
                .collect(),
        }
    }

    /// Gradient with respect to weight `(out, inp)` of layer `layer`.
    pub fn weight(&self, net: &Mlp, layer: usize, out: usize, inp: usize) -> f64 {
        self.layers[layer].weights_t[inp * net.layers()[layer].output_dim() + out]
    }

    pub fn is_congruent(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers().len()
            && self.layers.iter().zip(net.layers()).all(|(g, l)| {
                g.weights_t.len() == l.weights_t().len() && g.bias.len() == l.bias().len()
            })
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layer counts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights_t.len() != b.weights_t.len() || a.bias.len() != b.bias.len() {
                return Err(Error::Shape("gradient layer shapes differ".into()));
            }
            a.weights_t.iter_mut().zip(&b.weights_t).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.values_mut().for_each(|v| *v *= s);
    }

    pub fn fill_zero(&mut self) {
        self.values_mut().for_each(|v| *v = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights_t.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat iteration in the same order as the network's parameters.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights_t.iter().chain(&l.bias).copied())
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights_t.iter_mut().chain(l.bias.iter_mut()))
    }
}
