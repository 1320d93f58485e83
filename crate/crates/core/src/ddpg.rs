//! MADDPG, MADDPG-MD and independent DDPG for two-dimensional continuous actions.
//!
//! The central critic of agent `i` reads `x = (o^i | o^j ...)` with the other
//! agents in ascending index order, plus every agent's action. Message-dropout
//! zeroes whole `o^j` blocks of `x`; actions always pass through.

use rand_distr::{Distribution, Normal};

use crate::error::{check_prob, Error, Result};
use crate::masking::{self, BlockLayout, BlockMask, Mask};
use crate::nn::{chain, Activation, AdamState, ForwardCache, Gradients, LayerSpec, Mlp};
use crate::replay::JointTransition;
use crate::rng;

pub const ACTION_DIM: usize = 2;
pub type Action = [f64; ACTION_DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DdpgMode {
    /// Critic over the agent's own observation and action only.
    Ddpg,
    Maddpg,
    MaddpgMd(f64),
}

impl DdpgMode {
    pub fn parse(name: &str, p: f64) -> Result<Self> {
        let mode = match name {
            "ddpg" => DdpgMode::Ddpg,
            "maddpg" => DdpgMode::Maddpg,
            "maddpg_md" | "md" => DdpgMode::MaddpgMd(p),
            other => return Err(Error::Config(format!("unknown continuous-control mode `{other}`"))),
        };
        check_prob(mode.rate())?;
        Ok(mode)
    }

    pub fn name(&self) -> &'static str {
        match self {
            DdpgMode::Ddpg => "ddpg",
            DdpgMode::Maddpg => "maddpg",
            DdpgMode::MaddpgMd(_) => "maddpg_md",
        }
    }

    pub fn rate(&self) -> f64 {
        match *self {
            DdpgMode::MaddpgMd(p) => p,
            _ => 0.0,
        }
    }

    pub fn central(&self) -> bool {
        !matches!(self, DdpgMode::Ddpg)
    }
}

/// `obs -> 64 (relu) -> 2 (tanh)`.
pub fn actor(obs_dim: usize, seed: u64) -> Result<Mlp> {
    Mlp::new(&chain(&[obs_dim, 64, ACTION_DIM], Activation::Relu, Activation::Tanh), seed)
}

fn to_action(v: &[f64]) -> Action {
    [v[0], v[1]]
}

/// Deterministic action plus Gaussian exploration noise, clamped to `[-1, 1]^2`.
pub fn act_ddpg<R: rand::Rng + ?Sized>(actor: &Mlp, o: &[f64], sigma: f64, rng: &mut R) -> Result<Action> {
    let mu = actor.predict(o)?;
    if mu.len() != ACTION_DIM {
        return Err(Error::Shape("actor must output two values".into()));
    }
    if sigma <= 0.0 {
        return Ok(to_action(&mu));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    Ok([
        (mu[0] + noise.sample(rng)).clamp(-1.0, 1.0),
        (mu[1] + noise.sample(rng)).clamp(-1.0, 1.0),
    ])
}

#[derive(Debug, Clone, PartialEq)]
enum CriticArch {
    /// `h(f(o^i, a^i), g(o^-i, a^-i))`; `f` takes the own action at both layers.
    Central { f1: Mlp, f2: Mlp, g: Mlp, h: Mlp },
    /// `h(f(o^i, a^i))`.
    Local { f1: Mlp, f2: Mlp, h: Mlp },
    /// One chain over `(x, a^i, a^-i)`.
    Concat { net: Mlp },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    arch: CriticArch,
    obs_dim: usize,
    n_agents: usize,
}

pub struct CriticCache {
    caches: Vec<ForwardCache>,
}

impl Critic {
    pub fn central(obs_dim: usize, n_agents: usize, seed: u64) -> Result<Self> {
        if n_agents < 2 {
            return Err(Error::Config("central critic needs at least two agents".into()));
        }
        let (f1, f2, h) = own_path(obs_dim, 200, seed)?;
        let g = Mlp::new(
            &[LayerSpec::new((n_agents - 1) * (obs_dim + ACTION_DIM), 100, Activation::Relu)],
            rng::derive_seed(seed, 4),
        )?;
        Ok(Self {
            arch: CriticArch::Central { f1, f2, g, h },
            obs_dim,
            n_agents,
        })
    }

    pub fn local(obs_dim: usize, seed: u64) -> Result<Self> {
        let (f1, f2, h) = own_path(obs_dim, 100, seed)?;
        Ok(Self {
            arch: CriticArch::Local { f1, f2, h },
            obs_dim,
            n_agents: 1,
        })
    }

    pub fn concat(obs_dim: usize, n_agents: usize, seed: u64) -> Result<Self> {
        let input = n_agents * (obs_dim + ACTION_DIM);
        let net = Mlp::new(&chain(&[input, 64, 64, 1], Activation::Relu, Activation::Linear), seed)?;
        Ok(Self {
            arch: CriticArch::Concat { net },
            obs_dim,
            n_agents,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn subnets(&self) -> Vec<&Mlp> {
        match &self.arch {
            CriticArch::Central { f1, f2, g, h } => vec![f1, f2, g, h],
            CriticArch::Local { f1, f2, h } => vec![f1, f2, h],
            CriticArch::Concat { net } => vec![net],
        }
    }

    pub fn subnets_mut(&mut self) -> Vec<&mut Mlp> {
        match &mut self.arch {
            CriticArch::Central { f1, f2, g, h } => vec![f1, f2, g, h],
            CriticArch::Local { f1, f2, h } => vec![f1, f2, h],
            CriticArch::Concat { net } => vec![net],
        }
    }

    pub fn zero_gradients(&self) -> Vec<Gradients> {
        self.subnets().iter().map(|n| n.zero_gradients()).collect()
    }

    fn check(&self, x: &[f64], others: &[Action]) -> Result<()> {
        if x.len() != self.n_agents * self.obs_dim || others.len() + 1 != self.n_agents {
            return Err(Error::Shape(format!(
                "critic expects {} agents of {} observations, got x of {} and {} other actions",
                self.n_agents,
                self.obs_dim,
                x.len(),
                others.len()
            )));
        }
        Ok(())
    }

    /// Q for input `x = (o^i | o^-i)` (already masked or scaled) and actions.
    pub fn value(&self, x: &[f64], own: Action, others: &[Action]) -> Result<f64> {
        Ok(self.forward(x, own, others)?.0)
    }

    pub fn forward(&self, x: &[f64], own: Action, others: &[Action]) -> Result<(f64, CriticCache)> {
        self.check(x, others)?;
        let d = self.obs_dim;
        let own_path = |f1: &Mlp, f2: &Mlp| -> Result<(Vec<f64>, ForwardCache, ForwardCache)> {
            let mut in1 = x[..d].to_vec();
            in1.extend(own);
            let (mut h1, c1) = f1.forward(&in1)?;
            h1.extend(own);
            let (h2, c2) = f2.forward(&h1)?;
            Ok((h2, c1, c2))
        };
        let (q, caches) = match &self.arch {
            CriticArch::Central { f1, f2, g, h } => {
                let (mut hin, c1, c2) = own_path(f1, f2)?;
                let mut gin = x[d..].to_vec();
                gin.extend(others.iter().flatten());
                let (gout, gc) = g.forward(&gin)?;
                hin.extend(gout);
                let (q, hc) = h.forward(&hin)?;
                (q, vec![c1, c2, gc, hc])
            }
            CriticArch::Local { f1, f2, h } => {
                let (hin, c1, c2) = own_path(f1, f2)?;
                let (q, hc) = h.forward(&hin)?;
                (q, vec![c1, c2, hc])
            }
            CriticArch::Concat { net } => {
                let mut input = x.to_vec();
                input.extend(own);
                input.extend(others.iter().flatten());
                let (q, c) = net.forward(&input)?;
                (q, vec![c])
            }
        };
        Ok((q[0], CriticCache { caches }))
    }

    /// Accumulates `dq * dQ/dtheta` into `grads` and returns `dq * dQ/da^i`.
    pub fn backward(&self, cache: &CriticCache, dq: f64, grads: &mut [Gradients]) -> Result<Action> {
        if grads.len() != self.subnets().len() || cache.caches.len() != grads.len() {
            return Err(Error::Shape("critic gradient buffer does not match".into()));
        }
        let c = &cache.caches;
        match &self.arch {
            CriticArch::Central { f1, f2, g, h } => {
                let dh = h.backward_into(&c[3], &[dq], &mut grads[3], true)?.expect("input gradient");
                let (df2, dg) = dh.split_at(f2.output_dim());
                g.backward_into(&c[2], dg, &mut grads[2], false)?;
                own_backward(f1, f2, &c[0], &c[1], df2, grads)
            }
            CriticArch::Local { f1, f2, h } => {
                let dh = h.backward_into(&c[2], &[dq], &mut grads[2], true)?.expect("input gradient");
                own_backward(f1, f2, &c[0], &c[1], &dh, grads)
            }
            CriticArch::Concat { net } => {
                let dx = net.backward_into(&c[0], &[dq], &mut grads[0], true)?.expect("input gradient");
                let k = self.n_agents * self.obs_dim;
                Ok([dx[k], dx[k + 1]])
            }
        }
    }
}

fn own_path(obs_dim: usize, first: usize, seed: u64) -> Result<(Mlp, Mlp, Mlp)> {
    let f1 = Mlp::new(&[LayerSpec::new(obs_dim + ACTION_DIM, first, Activation::Relu)], rng::derive_seed(seed, 1))?;
    let f2 = Mlp::new(&[LayerSpec::new(first + ACTION_DIM, 100, Activation::Relu)], rng::derive_seed(seed, 2))?;
    let h_in = if first == 200 { 200 } else { 100 };
    let h = Mlp::new(&chain(&[h_in, 64, 1], Activation::Relu, Activation::Linear), rng::derive_seed(seed, 3))?;
    Ok((f1, f2, h))
}

fn own_backward(
    f1: &Mlp,
    f2: &Mlp,
    c1: &ForwardCache,
    c2: &ForwardCache,
    d_out: &[f64],
    grads: &mut [Gradients],
) -> Result<Action> {
    let d2 = f2.backward_into(c2, d_out, &mut grads[1], true)?.expect("input gradient");
    let h1 = f1.output_dim();
    let d1 = f1.backward_into(c1, &d2[..h1], &mut grads[0], true)?.expect("input gradient");
    let k = f1.input_dim() - ACTION_DIM;
    Ok([d1[k] + d2[h1], d1[k + 1] + d2[h1 + 1]])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    /// Hard target copy every this many critic updates.
    pub target_sync: u64,
    pub sigma: f64,
    pub share_params: bool,
    pub concat_critic: bool,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            batch_size: 32,
            target_sync: 500,
            sigma: 0.15,
            share_params: true,
            concat_critic: false,
        }
    }
}

/// Actors and critics for all agents, with their targets and optimisers.
pub struct DdpgLearner {
    mode: DdpgMode,
    cfg: DdpgConfig,
    n_agents: usize,
    obs_dim: usize,
    layouts: Vec<BlockLayout>,
    actors: Vec<Mlp>,
    target_actors: Vec<Mlp>,
    critics: Vec<Critic>,
    target_critics: Vec<Critic>,
    actor_adam: Vec<AdamState>,
    critic_adam: Vec<Vec<AdamState>>,
    critic_updates: u64,
    actor_updates: u64,
}

impl DdpgLearner {
    pub fn new(mode: DdpgMode, n_agents: usize, obs_dim: usize, cfg: DdpgConfig, seed: u64) -> Result<Self> {
        check_prob(mode.rate())?;
        if n_agents == 0 || obs_dim == 0 {
            return Err(Error::Config("learner needs agents and observations".into()));
        }
        let sets = if cfg.share_params { 1 } else { n_agents };
        let mut actors = Vec::with_capacity(sets);
        let mut critics = Vec::with_capacity(sets);
        for s in 0..sets as u64 {
            actors.push(actor(obs_dim, rng::derive_seed(seed, 100 + s))?);
            let cs = rng::derive_seed(seed, 200 + s);
            critics.push(match mode {
                DdpgMode::Ddpg => Critic::local(obs_dim, cs)?,
                _ if cfg.concat_critic => Critic::concat(obs_dim, n_agents, cs)?,
                _ => Critic::central(obs_dim, n_agents, cs)?,
            });
        }
        let layouts = (0..n_agents)
            .map(|i| {
                if mode.central() {
                    BlockLayout::for_agent(i, n_agents, obs_dim, obs_dim)
                } else {
                    BlockLayout::new(obs_dim, &[])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mode,
            cfg,
            n_agents,
            obs_dim,
            layouts,
            actor_adam: actors.iter().map(AdamState::new).collect(),
            critic_adam: critics
                .iter()
                .map(|c| c.subnets().into_iter().map(AdamState::new).collect())
                .collect(),
            target_actors: actors.clone(),
            target_critics: critics.clone(),
            actors,
            critics,
            critic_updates: 0,
            actor_updates: 0,
        })
    }

    pub fn mode(&self) -> DdpgMode {
        self.mode
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.cfg
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn set(&self, agent: usize) -> usize {
        if self.cfg.share_params {
            0
        } else {
            agent
        }
    }

    /// Number of distinct actor/critic parameter sets.
    pub fn parameter_sets(&self) -> usize {
        self.actors.len()
    }

    pub fn actor_for(&self, agent: usize) -> &Mlp {
        &self.actors[self.set(agent)]
    }

    pub fn critic_for(&self, agent: usize) -> &Critic {
        &self.critics[self.set(agent)]
    }

    pub fn actors(&self) -> &[Mlp] {
        &self.actors
    }

    pub fn critics(&self) -> &[Critic] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [Critic] {
        &mut self.critics
    }

    pub fn actors_mut(&mut self) -> &mut [Mlp] {
        &mut self.actors
    }

    pub fn layout(&self, agent: usize) -> &BlockLayout {
        &self.layouts[agent]
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    pub fn act<R: rand::Rng + ?Sized>(&self, agent: usize, o: &[f64], sigma: f64, rng: &mut R) -> Result<Action> {
        act_ddpg(self.actor_for(agent), o, sigma, rng)
    }

    /// `x` for `agent`: own observation first, the others in index order.
    /// Independent DDPG sees only its own observation.
    pub fn critic_input<O: AsRef<[f64]>>(&self, agent: usize, obs: &[O]) -> Vec<f64> {
        let mut x = obs[agent].as_ref().to_vec();
        if self.mode.central() {
            for (j, o) in obs.iter().enumerate() {
                if j != agent {
                    x.extend_from_slice(o.as_ref());
                }
            }
        }
        x
    }

    pub fn other_actions(&self, agent: usize, actions: &[Action]) -> Vec<Action> {
        if !self.mode.central() {
            return Vec::new();
        }
        actions
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != agent)
            .map(|(_, a)| *a)
            .collect()
    }

    /// Critic value with the execution-time scaling of the other observations.
    pub fn critic_value_exec<O: AsRef<[f64]>>(&self, agent: usize, obs: &[O], actions: &[Action]) -> Result<f64> {
        let mut x = self.critic_input(agent, obs);
        if let DdpgMode::MaddpgMd(p) = self.mode {
            masking::exec_scale_in_place(&mut x, &self.layouts[agent], p, false)?;
        }
        self.critic_for(agent)
            .value(&x, actions[agent], &self.other_actions(agent, actions))
    }

    /// One block mask over the other agents' observations, or `None` when no dropout applies.
    pub fn sample_mask<R: rand::Rng + ?Sized>(&self, agent: usize, rng: &mut R) -> Result<Option<BlockMask>> {
        match self.mode {
            DdpgMode::MaddpgMd(p) => masking::sample_block_mask(&self.layouts[agent], p, false, rng).map(Some),
            _ => Ok(None),
        }
    }

    fn masked_input(&self, agent: usize, obs: &[crate::replay::Obs], mask: &Option<BlockMask>) -> Result<Vec<f64>> {
        let mut x = self.critic_input(agent, obs);
        if let Some(m) = mask {
            masking::apply_mask_in_place(&mut x, &self.layouts[agent], &Mask::Block(m.clone()))?;
        }
        Ok(x)
    }

    /// Bootstrap target `r^i + gamma * Q'(x~', mu'(o'))` with the mask shared with `x~`.
    pub fn critic_target(&self, agent: usize, item: &JointTransition, next_actions: &[Action], mask: &Option<BlockMask>) -> Result<f64> {
        let r = item.rewards[agent];
        if item.terminal {
            return Ok(r);
        }
        let x_next = self.masked_input(agent, &item.next_obs, mask)?;
        let q = self.target_critics[self.set(agent)].value(
            &x_next,
            next_actions[agent],
            &self.other_actions(agent, next_actions),
        )?;
        Ok(r + self.cfg.gamma * q)
    }

    fn target_next_actions(&self, item: &JointTransition) -> Result<Vec<Action>> {
        (0..self.n_agents)
            .map(|j| Ok(to_action(&self.target_actors[self.set(j)].predict(&item.next_obs[j])?)))
            .collect()
    }

    fn check_batch(&self, batch: &[&JointTransition]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Insufficient { have: 0, need: 1 });
        }
        for item in batch {
            if item.obs.len() != self.n_agents || item.actions.len() != self.n_agents || item.rewards.len() != self.n_agents {
                return Err(Error::Shape("joint transition does not match the agent count".into()));
            }
        }
        Ok(())
    }

    /// Critic loss and gradients per parameter set; masks are drawn per agent
    /// per item from `mask_rng`.
    pub fn critic_gradients<R: rand::Rng + ?Sized>(
        &self,
        batch: &[&JointTransition],
        mask_rng: &mut R,
    ) -> Result<(f64, Vec<Vec<Gradients>>)> {
        self.check_batch(batch)?;
        let b = batch.len() as f64;
        let mut grads: Vec<Vec<Gradients>> = self.critics.iter().map(Critic::zero_gradients).collect();
        let mut loss = 0.0;
        let next: Vec<Vec<Action>> = batch.iter().map(|it| self.target_next_actions(it)).collect::<Result<_>>()?;
        for i in 0..self.n_agents {
            let s = self.set(i);
            for (item, next_actions) in batch.iter().zip(&next) {
                let mask = self.sample_mask(i, mask_rng)?;
                let y = self.critic_target(i, item, next_actions, &mask)?;
                let x = self.masked_input(i, &item.obs, &mask)?;
                let (q, cache) = self.critics[s].forward(&x, item.actions[i], &self.other_actions(i, &item.actions))?;
                let err = q - y;
                loss += err * err;
                self.critics[s].backward(&cache, 2.0 * err / b, &mut grads[s])?;
            }
        }
        Ok((loss / (b * self.n_agents as f64), grads))
    }

    /// Mean-squared critic step; actors are untouched. Returns the mean loss.
    pub fn critic_train_step<R: rand::Rng + ?Sized>(&mut self, batch: &[&JointTransition], mask_rng: &mut R) -> Result<f64> {
        let (loss, grads) = self.critic_gradients(batch, mask_rng)?;
        let lr = self.cfg.critic_lr;
        for ((critic, adams), g) in self.critics.iter_mut().zip(&mut self.critic_adam).zip(&grads) {
            for ((net, adam), gn) in critic.subnets_mut().into_iter().zip(adams.iter_mut()).zip(g) {
                adam.step(net, gn, lr)?;
            }
        }
        self.critic_updates += 1;
        if self.cfg.target_sync > 0 && self.critic_updates.is_multiple_of(self.cfg.target_sync) {
            self.sync_targets();
        }
        Ok(loss)
    }

    /// Gradients of `-mean Q(x~, mu(o^i), a^-i)` with respect to the actor parameters.
    pub fn actor_gradients<R: rand::Rng + ?Sized>(&self, batch: &[&JointTransition], mask_rng: &mut R) -> Result<Vec<Gradients>> {
        self.check_batch(batch)?;
        let b = batch.len() as f64;
        let mut grads: Vec<Gradients> = self.actors.iter().map(Mlp::zero_gradients).collect();
        for i in 0..self.n_agents {
            let s = self.set(i);
            let critic = &self.critics[s];
            let mut scratch = critic.zero_gradients();
            for item in batch {
                let mask = self.sample_mask(i, mask_rng)?;
                let x = self.masked_input(i, &item.obs, &mask)?;
                let (mu, acache) = self.actors[s].forward(&item.obs[i])?;
                let (_, ccache) = critic.forward(&x, to_action(&mu), &self.other_actions(i, &item.actions))?;
                let da = critic.backward(&ccache, 1.0, &mut scratch)?;
                let d_out = [-da[0] / b, -da[1] / b];
                self.actors[s].backward_into(&acache, &d_out, &mut grads[s], false)?;
            }
        }
        Ok(grads)
    }

    /// Policy-gradient ascent on Q through the critic; critics are untouched.
    pub fn actor_train_step<R: rand::Rng + ?Sized>(&mut self, batch: &[&JointTransition], mask_rng: &mut R) -> Result<()> {
        let grads = self.actor_gradients(batch, mask_rng)?;
        let lr = self.cfg.actor_lr;
        for ((net, adam), g) in self.actors.iter_mut().zip(&mut self.actor_adam).zip(&grads) {
            adam.step(net, g, lr)?;
        }
        self.actor_updates += 1;
        Ok(())
    }

    pub fn sync_targets(&mut self) {
        self.target_actors = self.actors.clone();
        self.target_critics = self.critics.clone();
    }

    pub fn target_actors(&self) -> &[Mlp] {
        &self.target_actors
    }

    pub fn target_critics(&self) -> &[Critic] {
        &self.target_critics
    }
}

/// Random joint transitions for tests and benchmarks.
pub fn random_joint<R: rand::Rng + ?Sized>(n: usize, obs_dim: usize, terminal: bool, rng: &mut R) -> JointTransition {
    let obs = |rng: &mut R| -> Vec<crate::replay::Obs> {
        (0..n)
            .map(|_| (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>().into())
            .collect()
    };
    let o = obs(rng);
    let o2 = obs(rng);
    JointTransition {
        obs: o,
        actions: (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
        rewards: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        next_obs: o2,
        terminal,
    }
}
