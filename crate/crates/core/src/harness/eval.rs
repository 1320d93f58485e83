//! Greedy evaluation, optionally with broken communication links.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use super::config::EnvConfig;
use crate::ddpg::act_ddpg;
use crate::dqn::DqnPolicy;
use crate::envs::{DiscreteEnv, MessageCodec, MultiAgentEnv, NavEnv, PursuitEnv, WaterEnv};
use crate::error::{check_prob, Error, Result};
use crate::nn::Mlp;
use crate::parallel;
use crate::replay::Obs;
use crate::rng::{self, Stream};

/// Which inter-agent links are down during evaluation. Links are symmetric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkFailure {
    None,
    /// A random half of the agent pairs, fixed for the whole evaluation.
    Half,
    All,
    /// Each pair independently down with probability `q`, redrawn every step.
    Prob(f64),
}

impl FromStr for LinkFailure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LinkFailure::None),
            "half" => Ok(LinkFailure::Half),
            "all" => Ok(LinkFailure::All),
            _ => {
                let q = s
                    .strip_prefix("prob:")
                    .and_then(|q| q.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("link failure `{s}`: expected none, half, all or prob:q")))?;
                check_prob(q)?;
                Ok(LinkFailure::Prob(q))
            }
        }
    }
}

impl fmt::Display for LinkFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkFailure::None => write!(f, "none"),
            LinkFailure::Half => write!(f, "half"),
            LinkFailure::All => write!(f, "all"),
            LinkFailure::Prob(q) => write!(f, "prob:{q}"),
        }
    }
}

/// Symmetric `n x n` table of broken links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Links {
    n: usize,
    down: Vec<bool>,
}

impl Links {
    pub fn all_up(n: usize) -> Self {
        Self { n, down: vec![false; n * n] }
    }

    pub fn is_down(&self, i: usize, j: usize) -> bool {
        self.down[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: bool) {
        self.down[i * self.n + j] = v;
        self.down[j * self.n + i] = v;
    }

    fn pairs(n: usize) -> Vec<(usize, usize)> {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }

    /// `floor(pairs / 2)` distinct pairs drawn uniformly.
    pub fn random_half<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let pairs = Self::pairs(n);
        let mut l = Self::all_up(n);
        for k in index::sample(rng, pairs.len(), pairs.len() / 2) {
            let (i, j) = pairs[k];
            l.set(i, j, true);
        }
        l
    }

    pub fn all_down(n: usize) -> Self {
        let mut l = Self::all_up(n);
        for (i, j) in Self::pairs(n) {
            l.set(i, j, true);
        }
        l
    }

    pub fn broken_pairs(&self) -> usize {
        Self::pairs(self.n).into_iter().filter(|&(i, j)| self.is_down(i, j)).count()
    }

    fn redraw<R: rand::Rng + ?Sized>(&mut self, q: f64, rng: &mut R) {
        for (i, j) in Self::pairs(self.n) {
            let v = rng.random::<f64>() < q;
            self.set(i, j, v);
        }
    }
}

/// Per-agent decision makers.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Dqn { agents: Vec<DqnPolicy>, codec: MessageCodec },
    /// Decentralised actors, one per agent (shared parameters repeat).
    Ddpg { actors: Vec<Mlp> },
    /// Uniform random actions; the baseline for "learned anything at all".
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub episodes: usize,
    pub link: LinkFailure,
    /// Exploration kept at evaluation time; 0 means greedy.
    pub eps: f64,
    pub seed: u64,
}

impl EvalOptions {
    pub fn greedy(episodes: usize, seed: u64) -> Self {
        Self {
            episodes,
            link: LinkFailure::None,
            eps: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub catches: Vec<f64>,
    pub returns: Vec<f64>,
    pub mean_catches: f64,
    pub std_catches: f64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalSummary {
    fn from_episodes(eps: Vec<(f64, f64)>) -> Self {
        let catches: Vec<f64> = eps.iter().map(|e| e.0).collect();
        let returns: Vec<f64> = eps.iter().map(|e| e.1).collect();
        let (mean_catches, std_catches) = mean_std(&catches);
        let (mean_return, std_return) = mean_std(&returns);
        Self {
            catches,
            returns,
            mean_catches,
            std_catches,
            mean_return,
            std_return,
        }
    }
}

pub(crate) fn discrete_env(cfg: &EnvConfig, seed: u64) -> Result<Box<dyn DiscreteEnv>> {
    match cfg {
        EnvConfig::Pursuit(c) => Ok(Box::new(PursuitEnv::new(c.clone(), seed)?)),
        EnvConfig::Nav(c) => Ok(Box::new(NavEnv::new(c.clone(), seed)?)),
        EnvConfig::Water(_) => Err(Error::Config("waterworld has continuous actions".into())),
    }
}

/// Seed of the environment used for evaluation episode `k`.
pub fn episode_seed(seed: u64, k: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, Stream::Eval as u64), k as u64)
}

/// Messages each agent receives, in sender order, with broken links zeroed.
pub(crate) fn inboxes(msgs: &[Obs], links: Option<&Links>) -> Vec<Vec<Obs>> {
    let n = msgs.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| match links {
                    Some(l) if l.is_down(i, j) => Arc::from(vec![0.0; msgs[j].len()]),
                    _ => msgs[j].clone(),
                })
                .collect()
        })
        .collect()
}

/// Runs `opts.episodes` evaluation windows of one horizon each. When all
/// evaders are caught inside a window the environment restarts and counting
/// continues. Episodes run in parallel; the result does not depend on it.
pub fn evaluate(policy: &Policy, env: &EnvConfig, opts: &EvalOptions) -> Result<EvalSummary> {
    check_prob(opts.eps)?;
    let n = env.n_agents();
    let fixed = match opts.link {
        LinkFailure::None | LinkFailure::Prob(_) => Links::all_up(n),
        LinkFailure::Half => Links::random_half(n, &mut rng::stream(opts.seed, Stream::Link)),
        LinkFailure::All => Links::all_down(n),
    };
    if let Policy::Dqn { agents, .. } = policy {
        if agents.len() != n {
            return Err(Error::Config(format!("checkpoint has {} agents, environment has {n}", agents.len())));
        }
    }
    if let Policy::Ddpg { actors } = policy {
        if actors.len() != n || env.is_discrete() {
            return Err(Error::Config("continuous policy does not match the environment".into()));
        }
    }
    let results = parallel::map_range(opts.episodes, |k| episode(policy, env, opts, &fixed, k));
    let eps = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_episodes(eps))
}

fn episode(policy: &Policy, cfg: &EnvConfig, opts: &EvalOptions, fixed: &Links, k: usize) -> Result<(f64, f64)> {
    let seed = episode_seed(opts.seed, k);
    let mut act_rng = rng::sub_stream(opts.seed, Stream::Eval, k as u64);
    let mut link_rng = rng::sub_stream(opts.seed, Stream::Link, k as u64);
    let mut links = fixed.clone();
    let horizon = cfg.horizon();
    let (mut catches, mut ret) = (0.0, 0.0);
    if let EnvConfig::Water(w) = cfg {
        let actors = match policy {
            Policy::Ddpg { actors } => Some(actors),
            Policy::Random => None,
            Policy::Dqn { .. } => return Err(Error::Config("discrete policy in waterworld".into())),
        };
        let mut env = WaterEnv::new(w.clone(), seed)?;
        for _ in 0..horizon {
            let obs = env.observations();
            let actions = (0..obs.len())
                .map(|i| match actors {
                    Some(a) => act_ddpg(&a[i], &obs[i], 0.0, &mut act_rng),
                    None => Ok([act_rng.random_range(-1.0..=1.0), act_rng.random_range(-1.0..=1.0)]),
                })
                .collect::<Result<Vec<_>>>()?;
            let s = env.step(&actions)?;
            catches += s.info.captures as f64;
            ret += s.rewards.iter().sum::<f64>() / s.rewards.len() as f64;
            if s.terminal {
                env.reset();
            }
        }
        return Ok((catches, ret));
    }
    let mut env = discrete_env(cfg, seed)?;
    let n_actions = env.n_actions();
    for _ in 0..horizon {
        if let LinkFailure::Prob(q) = opts.link {
            links.redraw(q, &mut link_rng);
        }
        let obs = env.observations();
        let actions: Vec<usize> = match policy {
            Policy::Dqn { agents, codec } => {
                let msgs = obs
                    .iter()
                    .map(|o| codec.encode(o).map(Obs::from))
                    .collect::<Result<Vec<_>>>()?;
                let boxes = inboxes(&msgs, Some(&links));
                agents
                    .iter()
                    .zip(&obs)
                    .zip(&boxes)
                    .map(|((a, o), m)| {
                        if opts.eps > 0.0 {
                            a.act(o, m, opts.eps, &mut act_rng)
                        } else {
                            a.greedy(o, m)
                        }
                    })
                    .collect::<Result<_>>()?
            }
            Policy::Random => (0..obs.len()).map(|_| act_rng.random_range(0..n_actions)).collect(),
            Policy::Ddpg { .. } => return Err(Error::Config("continuous policy in a discrete environment".into())),
        };
        let s = env.step(&actions)?;
        catches += s.info.captures as f64;
        ret += s.rewards.iter().sum::<f64>() / s.rewards.len() as f64;
        if s.terminal {
            env.reset();
        }
    }
    Ok((catches, ret))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dqn::{AgentMode, QNet, QNetSizes};
    use crate::envs::PursuitConfig;
    use crate::masking::BlockLayout;

    fn small() -> EnvConfig {
        let mut c = PursuitConfig::small();
        c.horizon = 60;
        EnvConfig::Pursuit(c)
    }

    fn policies(mode: AgentMode) -> Policy {
        let agents = (0..4)
            .map(|i| {
                let layout = BlockLayout::for_agent(i, 4, 147, 147).unwrap();
                DqnPolicy {
                    mode,
                    net: QNet::new(mode, layout, &QNetSizes::pursuit(4), 5, 10 + i as u64).unwrap(),
                }
            })
            .collect();
        Policy::Dqn {
            agents,
            codec: MessageCodec::Identity,
        }
    }

    #[test]
    fn parse_link_failure() {
        assert_eq!("none".parse::<LinkFailure>().unwrap(), LinkFailure::None);
        assert_eq!("half".parse::<LinkFailure>().unwrap(), LinkFailure::Half);
        assert_eq!("prob:0.25".parse::<LinkFailure>().unwrap(), LinkFailure::Prob(0.25));
        assert!("prob:2".parse::<LinkFailure>().is_err());
        assert!("some".parse::<LinkFailure>().is_err());
        assert_eq!(LinkFailure::Prob(0.5).to_string(), "prob:0.5");
    }

    #[test]
    fn half_breaks_floor_of_half_the_pairs() {
        let mut r = rng::seeded(1);
        for n in 2..8 {
            let l = Links::random_half(n, &mut r);
            assert_eq!(l.broken_pairs(), n * (n - 1) / 2 / 2);
            for i in 0..n {
                assert!(!l.is_down(i, i));
                for j in 0..n {
                    assert_eq!(l.is_down(i, j), l.is_down(j, i));
                }
            }
        }
    }

    #[test]
    fn broken_links_become_zero_messages() {
        let msgs: Vec<Obs> = (0..3).map(|k| Obs::from(vec![k as f64 + 1.0; 2])).collect();
        let mut l = Links::all_up(3);
        l.set(0, 2, true);
        let boxes = inboxes(&msgs, Some(&l));
        assert_eq!(&boxes[0][0][..], &[2.0, 2.0]);
        assert_eq!(&boxes[0][1][..], &[0.0, 0.0]);
        assert_eq!(&boxes[2][0][..], &[0.0, 0.0]);
        assert_eq!(&boxes[1][1][..], &[3.0, 3.0]);
    }

    #[test]
    fn fdc_ignores_link_failures() {
        let p = policies(AgentMode::Fdc);
        let base = evaluate(&p, &small(), &EvalOptions::greedy(3, 5)).unwrap();
        for link in [LinkFailure::Half, LinkFailure::All, LinkFailure::Prob(0.5)] {
            let o = EvalOptions { link, ..EvalOptions::greedy(3, 5) };
            assert_eq!(evaluate(&p, &small(), &o).unwrap(), base);
        }
    }

    #[test]
    fn random_policy_is_reproducible() {
        let o = EvalOptions::greedy(4, 9);
        let a = evaluate(&Policy::Random, &small(), &o).unwrap();
        assert_eq!(a, evaluate(&Policy::Random, &small(), &o).unwrap());
        assert_eq!(a.catches.len(), 4);
        let b = evaluate(&Policy::Random, &small(), &EvalOptions::greedy(4, 10)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn evaluation_leaves_parameters_alone() {
        let p = policies(AgentMode::DccMd(0.2));
        let before = p.clone();
        let o = EvalOptions { link: LinkFailure::Prob(0.3), eps: 0.1, ..EvalOptions::greedy(2, 1) };
        evaluate(&p, &small(), &o).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn mean_std_matches_hand_values() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
