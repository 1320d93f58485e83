//! Finite-difference verification of every network topology the crate builds.

use rand::seq::index;
use rand::Rng;

use crate::autoenc::Autoencoder;
use crate::ddpg::{actor, Action, Critic};
use crate::dqn::{AgentMode, QNet, QNetSizes};
use crate::envs::{NavConfig, PursuitConfig, WaterConfig};
use crate::masking::BlockLayout;
use crate::nn::{grad_check, relu_margin, Gradients, Mlp, GRAD_CHECK_DELTA};
use crate::parallel;
use crate::rng::{self, Rng as ChaCha};

/// Pass threshold on the maximum relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Networks with more parameters than this are checked on a random subset.
const FULL_CHECK_LIMIT: usize = 60_000;
const SAMPLED: usize = 6_000;
const MIN_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub params: usize,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

fn uniform(n: usize, rng: &mut ChaCha) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random input whose relu units all sit at least `MIN_MARGIN` from the kink.
fn kink_free(nets: &[&Mlp], dims: &[usize], rng: &mut ChaCha) -> Vec<Vec<f64>> {
    for _ in 0..10_000 {
        let xs: Vec<Vec<f64>> = dims.iter().map(|&d| uniform(d, rng)).collect();
        if nets.iter().zip(&xs).all(|(n, x)| relu_margin(n, x) >= MIN_MARGIN) {
            return xs;
        }
    }
    panic!("no kink-free input found");
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Checks one network; large ones on a random parameter subset plus every input.
fn check_net(name: &str, net: &Mlp, seed: u64) -> GradCheckReport {
    let mut r = rng::seeded(seed);
    let x = kink_free(&[net], &[net.input_dim()], &mut r).remove(0);
    let dout = uniform(net.output_dim(), &mut r);
    let params = net.param_count();
    if params <= FULL_CHECK_LIMIT {
        return GradCheckReport {
            name: name.into(),
            params,
            checked: params + net.input_dim(),
            max_rel_error: grad_check(net, &x, &dout),
        };
    }
    let loss = |n: &Mlp, x: &[f64]| -> f64 { n.predict(x).unwrap().iter().zip(&dout).map(|(a, b)| a * b).sum() };
    let (_, cache) = net.forward(&x).unwrap();
    let (grads, dx) = net.backward(&cache, &dout).unwrap();
    let analytic: Vec<f64> = grads.values().collect();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for k in index::sample(&mut r, params, SAMPLED) {
        let orig = *probe.param_mut(k);
        *probe.param_mut(k) = orig + GRAD_CHECK_DELTA;
        let up = loss(&probe, &x);
        *probe.param_mut(k) = orig - GRAD_CHECK_DELTA;
        let down = loss(&probe, &x);
        *probe.param_mut(k) = orig;
        worst = worst.max(relative(analytic[k], (up - down) / (2.0 * GRAD_CHECK_DELTA)));
    }
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + GRAD_CHECK_DELTA;
        let up = loss(net, &xp);
        xp[i] = x[i] - GRAD_CHECK_DELTA;
        let down = loss(net, &xp);
        xp[i] = x[i];
        worst = worst.max(relative(dx[i], (up - down) / (2.0 * GRAD_CHECK_DELTA)));
    }
    GradCheckReport {
        name: name.into(),
        params,
        checked: SAMPLED + x.len(),
        max_rel_error: worst,
    }
}

/// Central differences of a composite model's scalar `loss` against its
/// analytic per-subnet gradients, on up to `SAMPLED` parameters per subnet.
fn check_composite<M: Clone>(
    name: &str,
    model: &M,
    subnets: fn(&mut M) -> Vec<&mut Mlp>,
    loss: impl Fn(&M) -> f64,
    analytic: &[Gradients],
    seed: u64,
) -> GradCheckReport {
    let mut r = rng::seeded(seed);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let (mut params, mut checked) = (0, 0);
    for (s, g) in analytic.iter().enumerate() {
        let values: Vec<f64> = g.values().collect();
        params += values.len();
        let picks: Vec<usize> = if values.len() <= SAMPLED {
            (0..values.len()).collect()
        } else {
            index::sample(&mut r, values.len(), SAMPLED).into_vec()
        };
        checked += picks.len();
        for k in picks {
            let orig = *subnets(&mut probe)[s].param_mut(k);
            *subnets(&mut probe)[s].param_mut(k) = orig + GRAD_CHECK_DELTA;
            let up = loss(&probe);
            *subnets(&mut probe)[s].param_mut(k) = orig - GRAD_CHECK_DELTA;
            let down = loss(&probe);
            *subnets(&mut probe)[s].param_mut(k) = orig;
            worst = worst.max(relative(values[k], (up - down) / (2.0 * GRAD_CHECK_DELTA)));
        }
    }
    GradCheckReport {
        name: name.into(),
        params,
        checked,
        max_rel_error: worst,
    }
}

fn qnet_composite(name: &str, mode: AgentMode, layout: BlockLayout, sizes: &QNetSizes, seed: u64) -> GradCheckReport {
    let mut r = rng::seeded(seed);
    let q = QNet::new(mode, layout.clone(), sizes, 5, seed).unwrap();
    let (x, dq) = loop {
        let x = uniform(layout.total_dim(), &mut r);
        let ok = match q.subnets().as_slice() {
            [f, g, h] => {
                let own = layout.own().range();
                let mut hin = f.predict(&x[own.clone()]).unwrap();
                hin.extend(g.predict(&x[own.end..]).unwrap());
                relu_margin(f, &x[own]) >= MIN_MARGIN
                    && relu_margin(g, &x[layout.own().len..]) >= MIN_MARGIN
                    && relu_margin(h, &hin) >= MIN_MARGIN
            }
            [c] if mode == AgentMode::Fdc => relu_margin(c, &x[layout.own().range()]) >= MIN_MARGIN,
            [c] => relu_margin(c, &x) >= MIN_MARGIN,
            _ => unreachable!(),
        };
        if ok {
            break (x, uniform(5, &mut r));
        }
    };
    let (_, cache) = q.forward(&x).unwrap();
    let mut grads = q.zero_gradients();
    q.backward(&cache, &dq, &mut grads).unwrap();
    let loss = |m: &QNet| -> f64 { m.q_values(&x).unwrap().iter().zip(&dq).map(|(a, b)| a * b).sum() };
    check_composite(name, &q, |m: &mut QNet| m.subnets_mut(), loss, &grads, seed)
}

fn critic_inputs(c: &Critic, r: &mut ChaCha) -> (Vec<f64>, Action, Vec<Action>) {
    let n = c.n_agents();
    let x = uniform(n * c.obs_dim(), r);
    let own = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
    let others = (1..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
    (x, own, others)
}

/// Critic end to end, including the own-action gradient.
fn critic_composite(name: &str, critic: &Critic, seed: u64) -> Vec<GradCheckReport> {
    let mut r = rng::seeded(seed);
    // relu margins depend on the joint input; resample until every unit is clear
    let (x, own, others, grads, da) = loop {
        let (x, own, others) = critic_inputs(critic, &mut r);
        let (_, cache) = critic.forward(&x, own, &others).unwrap();
        let mut grads = critic.zero_gradients();
        let da = critic.backward(&cache, 1.0, &mut grads).unwrap();
        let ok = critic_margin(critic, &x, own, &others) >= MIN_MARGIN;
        if ok {
            break (x, own, others, grads, da);
        }
    };
    let value = |c: &Critic, a: Action| c.value(&x, a, &others).unwrap();
    let mut report = check_composite(name, critic, |c: &mut Critic| c.subnets_mut(), |c| value(c, own), &grads, seed);
    for k in 0..2 {
        let mut up = own;
        up[k] += GRAD_CHECK_DELTA;
        let mut dn = own;
        dn[k] -= GRAD_CHECK_DELTA;
        let fd = (value(critic, up) - value(critic, dn)) / (2.0 * GRAD_CHECK_DELTA);
        report.max_rel_error = report.max_rel_error.max(relative(da[k], fd));
        report.checked += 1;
    }
    vec![report]
}

/// Smallest relu pre-activation magnitude anywhere in the critic for one input.
fn critic_margin(c: &Critic, x: &[f64], own: Action, others: &[Action]) -> f64 {
    let d = c.obs_dim();
    let nets = c.subnets();
    let mut in1 = x[..d].to_vec();
    in1.extend(own);
    if nets.len() == 1 {
        let mut input = x.to_vec();
        input.extend(own);
        input.extend(others.iter().flatten());
        return relu_margin(nets[0], &input);
    }
    let h1 = nets[0].predict(&in1).unwrap();
    let mut in2 = h1;
    in2.extend(own);
    let mut hin = nets[1].predict(&in2).unwrap();
    let mut m = relu_margin(nets[0], &in1).min(relu_margin(nets[1], &in2));
    if nets.len() == 4 {
        let mut gin = x[d..].to_vec();
        gin.extend(others.iter().flatten());
        m = m.min(relu_margin(nets[2], &gin));
        hin.extend(nets[2].predict(&gin).unwrap());
    }
    m.min(relu_margin(nets[nets.len() - 1], &hin))
}

/// Actor chained through a central critic: d Q(x, mu(o)) / d actor parameters.
fn actor_through_critic(seed: u64) -> GradCheckReport {
    let obs = WaterConfig::small().obs_dim();
    let a = actor(obs, seed).unwrap();
    let critic = Critic::central(obs, 4, seed + 1).unwrap();
    let mut r = rng::seeded(seed);
    let (x, others, grads) = loop {
        let (x, _, others) = critic_inputs(&critic, &mut r);
        let o = &x[..obs];
        if relu_margin(&a, o) < MIN_MARGIN {
            continue;
        }
        let (mu, acache) = a.forward(o).unwrap();
        let own = [mu[0], mu[1]];
        if critic_margin(&critic, &x, own, &others) < MIN_MARGIN {
            continue;
        }
        let (_, ccache) = critic.forward(&x, own, &others).unwrap();
        let da = critic.backward(&ccache, 1.0, &mut critic.zero_gradients()).unwrap();
        let mut g = a.zero_gradients();
        a.backward_into(&acache, &da, &mut g, false).unwrap();
        break (x, others, g);
    };
    let loss = |m: &Mlp| -> f64 {
        let mu = m.predict(&x[..obs]).unwrap();
        critic.value(&x, [mu[0], mu[1]], &others).unwrap()
    };
    check_composite("actor through central critic", &a, |m: &mut Mlp| vec![m], loss, &[grads], seed)
}

fn autoencoder_composite(seed: u64) -> GradCheckReport {
    let ae = Autoencoder::new(PursuitConfig::small().obs_dim(), seed).unwrap();
    let mut r = rng::seeded(seed);
    let x = loop {
        let x = uniform(ae.encoder().input_dim(), &mut r);
        let z = ae.encode(&x).unwrap();
        if relu_margin(ae.encoder(), &x) >= MIN_MARGIN && relu_margin(ae.decoder(), &z) >= MIN_MARGIN {
            break x;
        }
    };
    let (z, ce) = ae.encoder().forward(&x).unwrap();
    let (y, cd) = ae.decoder().forward(&z).unwrap();
    let dy: Vec<f64> = y.iter().zip(&x).map(|(a, b)| 2.0 * (a - b) / x.len() as f64).collect();
    let (gd, dz) = ae.decoder().backward(&cd, &dy).unwrap();
    let (ge, _) = ae.encoder().backward(&ce, &dz).unwrap();
    let loss = |m: &Autoencoder| -> f64 {
        let y = m.reconstruct(&x).unwrap();
        y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
    };
    fn parts(m: &mut Autoencoder) -> Vec<&mut Mlp> {
        m.parts_mut()
    }
    check_composite("autoencoder reconstruction loss", &ae, parts, loss, &[ge, gd], seed)
}

enum Job {
    Net(String, Mlp),
    Composite(fn(u64) -> Vec<GradCheckReport>),
}

/// Every topology the learners, critics and autoencoder instantiate, at the
/// shipped environment sizes, plus end-to-end checks of the composites.
pub fn run_suite() -> Vec<GradCheckReport> {
    let mut jobs: Vec<Job> = Vec::new();
    let mut net = |name: String, m: Mlp| jobs.push(Job::Net(name, m));
    let pursuit_obs = PursuitConfig::default().obs_dim();
    let mut seed = 100;
    let mut next = || {
        seed += 1;
        seed
    };
    for (label, n, sizes) in [
        ("pursuit N=4", 4, QNetSizes::pursuit(4)),
        ("pursuit N=6", 6, QNetSizes::pursuit(6)),
        ("pursuit N=8", 8, QNetSizes::pursuit(8)),
        ("pursuit N=4 compressed", 4, QNetSizes::pursuit(4)),
        ("navigation N=4", 4, QNetSizes::navigation()),
        ("navigation N=8", 8, QNetSizes::navigation()),
    ] {
        let obs = if label.starts_with("nav") {
            NavConfig { n_agents: n, n_landmarks: n, ..NavConfig::default() }.obs_dim()
        } else {
            pursuit_obs
        };
        let msg = if label.ends_with("compressed") { crate::autoenc::CODE } else { obs };
        let layout = BlockLayout::for_agent(0, n, obs, msg).unwrap();
        let composite = QNet::new(AgentMode::DccMd(0.2), layout.clone(), &sizes, 5, next()).unwrap();
        for (part, m) in ["f", "g", "h"].iter().zip(composite.subnets()) {
            net(format!("{label} {part}"), m.clone());
        }
        let fdc = QNet::new(AgentMode::Fdc, layout.clone(), &sizes, 5, next()).unwrap();
        net(format!("{label} FDC chain"), fdc.subnets()[0].clone());
        let concat = QNet::new(AgentMode::ConcatMd(0.2), layout, &sizes, 5, next()).unwrap();
        net(format!("{label} concat chain"), concat.subnets()[0].clone());
    }
    for n in [4, 8] {
        let obs = WaterConfig::with_agents(n, 2).obs_dim();
        net(format!("waterworld N={n} actor"), actor(obs, next()).unwrap());
        let central = Critic::central(obs, n, next()).unwrap();
        for (part, m) in ["f1", "f2", "g", "h"].iter().zip(central.subnets()) {
            net(format!("waterworld N={n} critic {part}"), m.clone());
        }
        let concat = Critic::concat(obs, n, next()).unwrap();
        net(format!("waterworld N={n} concat critic"), concat.subnets()[0].clone());
    }
    let local = Critic::local(WaterConfig::small().obs_dim(), next()).unwrap();
    for (part, m) in ["f1", "f2", "h"].iter().zip(local.subnets()) {
        net(format!("waterworld local critic {part}"), m.clone());
    }
    let ae = Autoencoder::new(pursuit_obs, next()).unwrap();
    net("autoencoder encoder".into(), ae.encoder().clone());
    net("autoencoder decoder".into(), ae.decoder().clone());

    jobs.push(Job::Composite(|s| {
        let l = BlockLayout::for_agent(1, 4, 147, 147).unwrap();
        vec![
            qnet_composite("pursuit N=4 Q(o, m) end to end", AgentMode::DccMd(0.2), l.clone(), &QNetSizes::pursuit(4), s),
            qnet_composite("pursuit N=4 FDC Q(o) end to end", AgentMode::Fdc, l.clone(), &QNetSizes::pursuit(4), s + 1),
            qnet_composite("pursuit N=4 concat Q end to end", AgentMode::ConcatMd(0.2), l, &QNetSizes::pursuit(4), s + 2),
        ]
    }));
    jobs.push(Job::Composite(|s| {
        let obs = WaterConfig::small().obs_dim();
        let mut out = critic_composite("waterworld central critic end to end", &Critic::central(obs, 4, s).unwrap(), s);
        out.extend(critic_composite("waterworld local critic end to end", &Critic::local(obs, s + 1).unwrap(), s + 1));
        out.extend(critic_composite("waterworld concat critic end to end", &Critic::concat(obs, 4, s + 2).unwrap(), s + 2));
        out
    }));
    jobs.push(Job::Composite(|s| vec![actor_through_critic(s)]));
    jobs.push(Job::Composite(|s| vec![autoencoder_composite(s)]));

    let seeded: Vec<(u64, Job)> = jobs.into_iter().enumerate().map(|(k, j)| (1000 + k as u64, j)).collect();
    parallel::map(&seeded, |(s, job)| match job {
        Job::Net(name, m) => vec![check_net(name, m, *s)],
        Job::Composite(f) => f(*s),
    })
    .into_iter()
    .flatten()
    .collect()
}
