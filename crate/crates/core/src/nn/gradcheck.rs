use super::{Activation, Mlp};

/// Step used for central differences.
pub const GRAD_CHECK_DELTA: f64 = 1e-5;

/// Magnitudes below this are compared absolutely rather than relatively,
/// since relative error is meaningless for gradients that are nearly zero.
const MAGNITUDE_FLOOR: f64 = 1e-3;

/// Worst relative disagreement between [`Mlp::backward`] and central finite
/// differences of `loss = <d_output, net(x)>`, over every parameter and
/// every input coordinate.
pub fn grad_check(net: &Mlp, x: &[f64], d_output: &[f64]) -> f64 {
    let loss = |n: &Mlp, x: &[f64]| -> f64 {
        let y = n.predict(x).expect("grad_check input matches network");
        y.iter().zip(d_output).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = net.forward(x).expect("grad_check input matches network");
    let (grads, dx) = net.backward(&cache, d_output).expect("grad_check output gradient matches network");

    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for (k, analytic) in grads.values().enumerate() {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + GRAD_CHECK_DELTA;
        let up = loss(&probe, x);
        *probe.param_mut(k) = orig - GRAD_CHECK_DELTA;
        let down = loss(&probe, x);
        *probe.param_mut(k) = orig;
        worst = worst.max(relative_error(analytic, (up - down) / (2.0 * GRAD_CHECK_DELTA)));
    }
    let mut xp = x.to_vec();
    for (i, &analytic) in dx.iter().enumerate() {
        let orig = xp[i];
        xp[i] = orig + GRAD_CHECK_DELTA;
        let up = loss(net, &xp);
        xp[i] = orig - GRAD_CHECK_DELTA;
        let down = loss(net, &xp);
        xp[i] = orig;
        worst = worst.max(relative_error(analytic, (up - down) / (2.0 * GRAD_CHECK_DELTA)));
    }
    worst
}

pub(crate) fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(MAGNITUDE_FLOOR)
}

/// Smallest `|pre-activation|` over all relu units for input `x`. Finite
/// differences are only valid when this is comfortably above the step.
pub fn relu_margin(net: &Mlp, x: &[f64]) -> f64 {
    let (_, cache) = match net.forward(x) {
        Ok(v) => v,
        Err(_) => return 0.0,
    };
    net.layers()
        .iter()
        .zip(cache.preactivations())
        .filter(|(l, _)| l.activation() == Activation::Relu)
        .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{chain, Dense};
    use crate::rng;
    use rand::Rng as _;

    fn kink_free_input(net: &Mlp, rng: &mut crate::rng::Rng) -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            if relu_margin(net, &x) >= 1e-3 {
                return x;
            }
        }
    }

    #[test]
    fn identity_net_is_exact() {
        let id = Mlp::from_layers(vec![Dense::from_rows(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Linear,
        )
        .unwrap()])
        .unwrap();
        assert!(grad_check(&id, &[0.3, -0.4], &[1.0, 2.0]) < 1e-9);
    }

    #[test]
    fn random_nets_match_central_differences() {
        let mut r = rng::seeded(21);
        for (seed, act) in [(1, Activation::Relu), (2, Activation::Tanh), (3, Activation::Linear)] {
            let net = Mlp::new(&chain(&[7, 6, 5, 3], act, Activation::Linear), seed).unwrap();
            let x = kink_free_input(&net, &mut r);
            let d: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            let err = grad_check(&net, &x, &d);
            assert!(err < 1e-6, "{act:?}: {err}");
        }
    }

    #[test]
    fn deep_relu_net() {
        let mut r = rng::seeded(4);
        let net = Mlp::new(&chain(&[10, 16, 16, 4], Activation::Relu, Activation::Linear), 9).unwrap();
        let x = kink_free_input(&net, &mut r);
        assert!(grad_check(&net, &x, &[1.0, -0.5, 0.25, 2.0]) < 1e-4);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        assert!(relative_error(1.0, 1.1) > 0.05);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
    }
}
