use super::{Gradients, Mlp};
use crate::error::{Error, Result};

/// Adam moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Gradients,
    v: Gradients,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        Self::with_betas(net, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(net: &Mlp, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `net` along `-grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.is_congruent(net) || !self.m.is_congruent(net) {
            return Err(Error::Shape("gradients do not match network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((layer, g), m), v) in net
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m.layers)
            .zip(&mut self.v.layers)
        {
            update(layer.weights_t_mut(), &g.weights_t, &mut m.weights_t, &mut v.weights_t, lr, b1, b2, eps, c1, c2);
            update(layer.bias_mut(), &g.bias, &mut m.bias, &mut v.bias, lr, b1, b2, eps, c1, c2);
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn update(
    params: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for (((p, &gi), mi), vi) in params.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = b1 * *mi + (1.0 - b1) * gi;
        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
