//! Double-DQN agents for decentralised control with communication.
//!
//! An agent's Q-network is `h(f(o), g(m))`: `f` extracts features from the
//! agent's own observation, `g` from the concatenated received messages, and
//! `h` maps both to one value per discrete action. FDC drops `g` and reads
//! only `o`; the concat ablation feeds `(o | m)` into a single chain.
//!
//! Training masks the input with message-dropout; action selection and the
//! double-Q argmax use the `1 - p` execution scaling instead.

use std::path::Path;


use crate::error::{check_prob, Error, Result};
use crate::masking::{self, BlockLayout, Mask};
use crate::nn::{chain, Activation, AdamState, ForwardCache, Gradients, LayerSpec, Mlp};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng;

/// Which learner, and how its input is dropped out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentMode {
    /// Fully decentralised: own observation only.
    Fdc,
    /// Communication without dropout.
    Dcc,
    /// Block-wise message-dropout.
    DccMd(f64),
    /// Element-wise dropout on messages.
    Sd(f64),
    /// Block-wise dropout including the own observation.
    FullMd(f64),
    /// Element-wise dropout including the own observation.
    FullSd(f64),
    /// Block-wise message-dropout over a plain concatenation network.
    ConcatMd(f64),
}

impl AgentMode {
    pub fn parse(name: &str, p: f64) -> Result<Self> {
        let mode = match name {
            "fdc" => AgentMode::Fdc,
            "dcc" => AgentMode::Dcc,
            "dcc_md" | "md" => AgentMode::DccMd(p),
            "sd" => AgentMode::Sd(p),
            "full_md" => AgentMode::FullMd(p),
            "full_sd" => AgentMode::FullSd(p),
            "concat_md" => AgentMode::ConcatMd(p),
            other => return Err(Error::Config(format!("unknown agent mode `{other}`"))),
        };
        check_prob(mode.rate())?;
        Ok(mode)
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgentMode::Fdc => "fdc",
            AgentMode::Dcc => "dcc",
            AgentMode::DccMd(_) => "dcc_md",
            AgentMode::Sd(_) => "sd",
            AgentMode::FullMd(_) => "full_md",
            AgentMode::FullSd(_) => "full_sd",
            AgentMode::ConcatMd(_) => "concat_md",
        }
    }

    /// Dropout rate; zero for FDC and DCC.
    pub fn rate(&self) -> f64 {
        match *self {
            AgentMode::Fdc | AgentMode::Dcc => 0.0,
            AgentMode::DccMd(p)
            | AgentMode::Sd(p)
            | AgentMode::FullMd(p)
            | AgentMode::FullSd(p)
            | AgentMode::ConcatMd(p) => p,
        }
    }

    pub fn uses_messages(&self) -> bool {
        !matches!(self, AgentMode::Fdc)
    }

    pub fn drops_own(&self) -> bool {
        matches!(self, AgentMode::FullMd(_) | AgentMode::FullSd(_))
    }

    pub fn element_wise(&self) -> bool {
        matches!(self, AgentMode::Sd(_) | AgentMode::FullSd(_))
    }

    fn masked(&self) -> bool {
        !matches!(self, AgentMode::Fdc | AgentMode::Dcc)
    }
}

/// Layer widths of `f`, `g`, `h` and of the single-chain variants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QNetSizes {
    pub f_hidden: usize,
    pub f_out: usize,
    pub g_out: usize,
    pub h_hidden: usize,
    /// Hidden widths of the FDC / concat chain (output layer excluded).
    pub chain_hidden: Vec<usize>,
}

impl QNetSizes {
    /// f = 147 -> 64 -> 48, g -> 96 (128 from eight agents up), h -> 32 -> |A|.
    pub fn pursuit(n_agents: usize) -> Self {
        Self {
            f_hidden: 64,
            f_out: 48,
            g_out: if n_agents >= 8 { 128 } else { 96 },
            h_hidden: 32,
            chain_hidden: vec![64, 48, 32],
        }
    }

    pub fn navigation() -> Self {
        Self {
            f_hidden: 64,
            f_out: 64,
            g_out: 64,
            h_hidden: 32,
            chain_hidden: vec![64, 64, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Arch {
    /// One chain; reads the own block (FDC) or the whole input (concat).
    Chain { net: Mlp, own_only: bool },
    Composite { f: Mlp, g: Mlp, h: Mlp },
}

/// Q-network over the flat input `(o | m)` described by `layout`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    arch: Arch,
    layout: BlockLayout,
}

/// Everything backward needs from one training forward pass.
pub struct QCache {
    caches: Vec<ForwardCache>,
}

impl QNet {
    pub fn new(mode: AgentMode, layout: BlockLayout, sizes: &QNetSizes, n_actions: usize, seed: u64) -> Result<Self> {
        let own = layout.own().len;
        let arch = match mode {
            AgentMode::Fdc | AgentMode::ConcatMd(_) => {
                let own_only = matches!(mode, AgentMode::Fdc);
                let input = if own_only { own } else { layout.total_dim() };
                let mut dims = vec![input];
                dims.extend(&sizes.chain_hidden);
                dims.push(n_actions);
                Arch::Chain {
                    net: Mlp::new(&chain(&dims, Activation::Relu, Activation::Linear), seed)?,
                    own_only,
                }
            }
            _ => {
                if layout.message_dim() == 0 {
                    return Err(Error::Config("communicating agent needs at least one message block".into()));
                }
                let f = Mlp::new(
                    &chain(&[own, sizes.f_hidden, sizes.f_out], Activation::Relu, Activation::Relu),
                    rng::derive_seed(seed, 1),
                )?;
                let g = Mlp::new(
                    &[LayerSpec::new(layout.message_dim(), sizes.g_out, Activation::Relu)],
                    rng::derive_seed(seed, 2),
                )?;
                let h = Mlp::new(
                    &chain(&[sizes.f_out + sizes.g_out, sizes.h_hidden, n_actions], Activation::Relu, Activation::Linear),
                    rng::derive_seed(seed, 3),
                )?;
                Arch::Composite { f, g, h }
            }
        };
        Ok(Self { arch, layout })
    }

    pub fn from_subnets(subnets: Vec<Mlp>, layout: BlockLayout, own_only: bool) -> Result<Self> {
        let arch = match <[Mlp; 3]>::try_from(subnets) {
            Ok([f, g, h]) => {
                if f.input_dim() != layout.own().len
                    || g.input_dim() != layout.message_dim()
                    || h.input_dim() != f.output_dim() + g.output_dim()
                {
                    return Err(Error::Shape("f/g/h do not fit the layout".into()));
                }
                Arch::Composite { f, g, h }
            }
            Err(mut v) if v.len() == 1 => {
                let net = v.pop().unwrap();
                let want = if own_only { layout.own().len } else { layout.total_dim() };
                if net.input_dim() != want {
                    return Err(Error::Shape("chain input does not fit the layout".into()));
                }
                Arch::Chain { net, own_only }
            }
            Err(_) => return Err(Error::Shape("expected one chain or three subnets".into())),
        };
        Ok(Self { arch, layout })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn n_actions(&self) -> usize {
        match &self.arch {
            Arch::Chain { net, .. } => net.output_dim(),
            Arch::Composite { h, .. } => h.output_dim(),
        }
    }

    /// `[f, g, h]` or `[chain]`.
    pub fn subnets(&self) -> Vec<&Mlp> {
        match &self.arch {
            Arch::Chain { net, .. } => vec![net],
            Arch::Composite { f, g, h } => vec![f, g, h],
        }
    }

    pub fn subnets_mut(&mut self) -> Vec<&mut Mlp> {
        match &mut self.arch {
            Arch::Chain { net, .. } => vec![net],
            Arch::Composite { f, g, h } => vec![f, g, h],
        }
    }

    pub fn zero_gradients(&self) -> Vec<Gradients> {
        self.subnets().iter().map(|n| n.zero_gradients()).collect()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.layout.total_dim() {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "Q input has {} entries, layout expects {}",
                x.len(),
                self.layout.total_dim()
            )))
        }
    }

    /// Q-values for an already masked or scaled input `x = (o | m)`.
    pub fn q_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let own = self.layout.own().range();
        match &self.arch {
            Arch::Chain { net, own_only: true } => net.predict(&x[own]),
            Arch::Chain { net, own_only: false } => net.predict(x),
            Arch::Composite { f, g, h } => {
                let mut hin = f.predict(&x[own.clone()])?;
                hin.extend(g.predict(&x[own.end..])?);
                h.predict(&hin)
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, QCache)> {
        self.check(x)?;
        let own = self.layout.own().range();
        match &self.arch {
            Arch::Chain { net, own_only } => {
                let input = if *own_only { &x[own] } else { x };
                let (q, c) = net.forward(input)?;
                Ok((q, QCache { caches: vec![c] }))
            }
            Arch::Composite { f, g, h } => {
                let (mut hin, fc) = f.forward(&x[own.clone()])?;
                let (gout, gc) = g.forward(&x[own.end..])?;
                hin.extend(gout);
                let (q, hc) = h.forward(&hin)?;
                Ok((q, QCache { caches: vec![fc, gc, hc] }))
            }
        }
    }

    /// Accumulates parameter gradients (one per subnet) for output gradient `dq`.
    pub fn backward(&self, cache: &QCache, dq: &[f64], grads: &mut [Gradients]) -> Result<()> {
        match &self.arch {
            Arch::Chain { net, .. } => {
                net.backward_into(&cache.caches[0], dq, &mut grads[0], false)?;
            }
            Arch::Composite { f, g, h } => {
                let (gf, rest) = grads.split_at_mut(1);
                let (gg, gh) = rest.split_at_mut(1);
                let dh = h
                    .backward_into(&cache.caches[2], dq, &mut gh[0], true)?
                    .expect("input gradient requested");
                let (df, dg) = dh.split_at(f.output_dim());
                f.backward_into(&cache.caches[0], df, &mut gf[0], false)?;
                g.backward_into(&cache.caches[1], dg, &mut gg[0], false)?;
            }
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Linear annealing from `start` to `end` over `anneal_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.anneal_steps {
            self.end
        } else {
            self.start + (self.end - self.start) * step as f64 / self.anneal_steps as f64
        }
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.02,
            anneal_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqnConfig {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Hard target copy every this many training updates.
    pub target_sync: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 1e-4,
            batch_size: 32,
            target_sync: 2000,
        }
    }
}

/// A greedy executor: a Q-network plus the mode that says how to scale its input.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnPolicy {
    pub mode: AgentMode,
    pub net: QNet,
}

impl DqnPolicy {
    /// `(o | m)` with the execution-time `1 - p` compensation.
    pub fn exec_input<M: AsRef<[f64]>>(&self, o: &[f64], m: &[M]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.net.layout.total_dim());
        x.extend_from_slice(o);
        for b in m {
            x.extend_from_slice(b.as_ref());
        }
        self.exec_scale(&mut x)?;
        Ok(x)
    }

    fn exec_scale(&self, x: &mut [f64]) -> Result<()> {
        if self.mode.masked() {
            masking::exec_scale_in_place(x, &self.net.layout, self.mode.rate(), self.mode.drops_own())
        } else if x.len() != self.net.layout.total_dim() {
            Err(Error::Shape("input does not match layout".into()))
        } else {
            Ok(())
        }
    }

    pub fn q_exec<M: AsRef<[f64]>>(&self, o: &[f64], m: &[M]) -> Result<Vec<f64>> {
        self.net.q_values(&self.exec_input(o, m)?)
    }

    pub fn greedy<M: AsRef<[f64]>>(&self, o: &[f64], m: &[M]) -> Result<usize> {
        Ok(argmax(&self.q_exec(o, m)?))
    }

    /// Epsilon-greedy; always consumes one uniform draw, plus one more when exploring.
    pub fn act<M: AsRef<[f64]>, R: rand::Rng + ?Sized>(&self, o: &[f64], m: &[M], eps: f64, rng: &mut R) -> Result<usize> {
        if rng.random::<f64>() < eps {
            Ok(rng.random_range(0..self.net.n_actions()))
        } else {
            self.greedy(o, m)
        }
    }
}

/// Inputs of one minibatch item after masking.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedItem {
    pub mask: Option<Mask>,
    pub x: Vec<f64>,
    pub x_next: Vec<f64>,
    pub x_next_exec: Vec<f64>,
}

pub struct DqnAgent {
    policy: DqnPolicy,
    target: QNet,
    adam: Vec<AdamState>,
    cfg: DqnConfig,
    updates: u64,
}

impl DqnAgent {
    pub fn new(mode: AgentMode, layout: BlockLayout, sizes: &QNetSizes, n_actions: usize, cfg: DqnConfig, seed: u64) -> Result<Self> {
        check_prob(mode.rate())?;
        let net = QNet::new(mode, layout, sizes, n_actions, seed)?;
        Ok(Self::from_net(mode, net, cfg))
    }

    pub fn from_net(mode: AgentMode, net: QNet, cfg: DqnConfig) -> Self {
        let adam = net.subnets().into_iter().map(AdamState::new).collect();
        Self {
            target: net.clone(),
            policy: DqnPolicy { mode, net },
            adam,
            cfg,
            updates: 0,
        }
    }

    pub fn mode(&self) -> AgentMode {
        self.policy.mode
    }

    pub fn policy(&self) -> &DqnPolicy {
        &self.policy
    }

    pub fn online(&self) -> &QNet {
        &self.policy.net
    }

    pub fn online_mut(&mut self) -> &mut QNet {
        &mut self.policy.net
    }

    pub fn target(&self) -> &QNet {
        &self.target
    }

    pub fn config(&self) -> &DqnConfig {
        &self.cfg
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn act<M: AsRef<[f64]>, R: rand::Rng + ?Sized>(&self, o: &[f64], m: &[M], eps: f64, rng: &mut R) -> Result<usize> {
        self.policy.act(o, m, eps, rng)
    }

    /// Hard copy of the online parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target = self.policy.net.clone();
    }

    /// One training mask for this agent's mode, or `None` when the mode does
    /// not drop anything (FDC, DCC). Draws only from `rng`.
    pub fn sample_mask<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<Mask>> {
        let mode = self.policy.mode;
        if !mode.masked() {
            return Ok(None);
        }
        let layout = &self.policy.net.layout;
        let mask = if mode.element_wise() {
            masking::sample_element_mask(layout, mode.rate(), mode.drops_own(), rng)?.into()
        } else {
            masking::sample_block_mask(layout, mode.rate(), mode.drops_own(), rng)?.into()
        };
        Ok(Some(mask))
    }

    /// Applies one mask to both the current and the next input.
    pub fn prepare(&self, item: &Transition, mask: Option<Mask>) -> Result<PreparedItem> {
        let layout = &self.policy.net.layout;
        let mut x = item.input();
        let mut x_next = item.next_input();
        let mut x_next_exec = x_next.clone();
        self.policy.exec_scale(&mut x_next_exec)?;
        if let Some(m) = &mask {
            masking::apply_mask_in_place(&mut x, layout, m)?;
            masking::apply_mask_in_place(&mut x_next, layout, m)?;
        } else if x.len() != layout.total_dim() {
            return Err(Error::Shape("transition does not match layout".into()));
        }
        Ok(PreparedItem {
            mask,
            x,
            x_next,
            x_next_exec,
        })
    }

    /// `r + gamma * Q_target(x_next masked, argmax_a Q_exec(x_next))`, or `r`
    /// for terminal transitions.
    pub fn td_target(&self, item: &Transition, prepared: &PreparedItem) -> Result<f64> {
        if item.terminal {
            return Ok(item.reward);
        }
        let best = argmax(&self.policy.net.q_values(&prepared.x_next_exec)?);
        let q_next = self.target.q_values(&prepared.x_next)?[best];
        Ok(item.reward + self.cfg.gamma * q_next)
    }

    /// Mean squared TD error over a minibatch and its gradient, without updating.
    pub fn loss_and_gradients(&self, batch: &[&Transition], masks: Vec<Option<Mask>>) -> Result<(f64, Vec<Gradients>)> {
        let b = batch.len() as f64;
        let mut grads = self.policy.net.zero_gradients();
        let mut loss = 0.0;
        for (item, mask) in batch.iter().zip(masks) {
            if item.action >= self.policy.net.n_actions() {
                return Err(Error::InvalidAction(format!("stored action {}", item.action)));
            }
            let prepared = self.prepare(item, mask)?;
            let y = self.td_target(item, &prepared)?;
            let (q, cache) = self.policy.net.forward(&prepared.x)?;
            let err = q[item.action] - y;
            loss += err * err;
            let mut dq = vec![0.0; q.len()];
            dq[item.action] = 2.0 * err / b;
            self.policy.net.backward(&cache, &dq, &mut grads)?;
        }
        Ok((loss / b, grads))
    }

    /// One Adam step on `f`, `g`, `h` jointly from a sampled minibatch.
    /// Syncs the target network every `target_sync` updates.
    pub fn train_step<R1, R2>(&mut self, buffer: &ReplayBuffer<Transition>, batch_rng: &mut R1, mask_rng: &mut R2) -> Result<f64>
    where
        R1: rand::Rng + ?Sized,
        R2: rand::Rng + ?Sized,
    {
        let batch = buffer.sample(self.cfg.batch_size, batch_rng)?;
        let masks = batch
            .iter()
            .map(|_| self.sample_mask(mask_rng))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = self.loss_and_gradients(&batch, masks)?;
        self.apply_gradients(&grads)?;
        Ok(loss)
    }

    pub fn apply_gradients(&mut self, grads: &[Gradients]) -> Result<()> {
        let lr = self.cfg.lr;
        for ((net, adam), g) in self.policy.net.subnets_mut().into_iter().zip(&mut self.adam).zip(grads) {
            adam.step(net, g, lr)?;
        }
        self.updates += 1;
        if self.cfg.target_sync > 0 && self.updates.is_multiple_of(self.cfg.target_sync) {
            self.sync_target();
        }
        Ok(())
    }

    /// Writes `{prefix}_{f,g,h}.dnmd` (or `{prefix}_q.dnmd`); returns the file names.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<Vec<String>> {
        save_qnet(&self.policy.net, dir, prefix)
    }
}

pub fn save_qnet(net: &QNet, dir: &Path, prefix: &str) -> Result<Vec<String>> {
    let names: &[&str] = match net.arch {
        Arch::Chain { .. } => &["q"],
        Arch::Composite { .. } => &["f", "g", "h"],
    };
    let mut files = Vec::new();
    for (sub, name) in net.subnets().into_iter().zip(names) {
        let file = format!("{prefix}_{name}.dnmd");
        sub.save(dir.join(&file))?;
        files.push(file);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use rand::Rng;
    use std::sync::Arc;

    fn layout() -> BlockLayout {
        BlockLayout::for_agent(0, 3, 4, 4).unwrap()
    }

    fn tiny_sizes() -> QNetSizes {
        QNetSizes {
            f_hidden: 6,
            f_out: 5,
            g_out: 4,
            h_hidden: 3,
            chain_hidden: vec![6, 5],
        }
    }

    fn item(seed: u64, terminal: bool) -> Transition {
        let mut r = rng::seeded(seed);
        let mut v = |n: usize| -> Arc<[f64]> { Arc::from((0..n).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<_>>()) };
        Transition {
            o: v(4),
            m: vec![v(4), v(4)],
            action: 1,
            reward: 0.5,
            o_next: v(4),
            m_next: vec![v(4), v(4)],
            terminal,
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(AgentMode::parse("dcc_md", 0.2).unwrap(), AgentMode::DccMd(0.2));
        assert_eq!(AgentMode::parse("fdc", 0.7).unwrap().rate(), 0.0);
        assert!(AgentMode::parse("dcc_md", 1.2).is_err());
        assert!(AgentMode::parse("nope", 0.0).is_err());
    }

    #[test]
    fn pursuit_shapes() {
        let l = BlockLayout::for_agent(0, 6, 147, 147).unwrap();
        let q = QNet::new(AgentMode::DccMd(0.2), l.clone(), &QNetSizes::pursuit(6), 5, 0).unwrap();
        let dims: Vec<Vec<(usize, usize)>> = q
            .subnets()
            .iter()
            .map(|n| n.layers().iter().map(|d| (d.input_dim(), d.output_dim())).collect())
            .collect();
        assert_eq!(dims[0], vec![(147, 64), (64, 48)]);
        assert_eq!(dims[1], vec![(735, 96)]);
        assert_eq!(dims[2], vec![(144, 32), (32, 5)]);
        let fdc = QNet::new(AgentMode::Fdc, l, &QNetSizes::pursuit(6), 5, 0).unwrap();
        let chain: Vec<usize> = fdc.subnets()[0].layers().iter().map(|d| d.output_dim()).collect();
        assert_eq!(chain, vec![64, 48, 32, 5]);
    }

    #[test]
    fn composite_matches_manual_composition() {
        let l = layout();
        let q = QNet::new(AgentMode::DccMd(0.3), l, &tiny_sizes(), 3, 4).unwrap();
        let x: Vec<f64> = (0..12).map(|k| (k as f64 * 0.37).sin()).collect();
        let nets = q.subnets();
        let mut hin = nets[0].forward(&x[..4]).unwrap().0;
        hin.extend(nets[1].forward(&x[4..]).unwrap().0);
        let expect = nets[2].forward(&hin).unwrap().0;
        let got = q.q_values(&x).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(q.forward(&x).unwrap().0, got);
    }

    #[test]
    fn fdc_ignores_messages() {
        let q = QNet::new(AgentMode::Fdc, layout(), &tiny_sizes(), 3, 1).unwrap();
        let mut x: Vec<f64> = (0..12).map(|k| k as f64 * 0.1).collect();
        let a = q.q_values(&x).unwrap();
        x[4..].iter_mut().for_each(|v| *v = -3.0);
        assert_eq!(q.q_values(&x).unwrap(), a);
    }

    #[test]
    fn full_rate_execution_ignores_messages() {
        let agent = DqnAgent::new(AgentMode::DccMd(1.0), layout(), &tiny_sizes(), 3, DqnConfig::default(), 2).unwrap();
        let o = [0.1, 0.2, 0.3, 0.4];
        let a = agent.policy().q_exec(&o, &[[1.0; 4], [2.0; 4]]).unwrap();
        let b = agent.policy().q_exec(&o, &[[-7.0; 4], [0.5; 4]]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn hand_set_weights_pick_action_two() {
        let l = BlockLayout::new(1, &[(1, 1)]).unwrap();
        let head = Dense::from_rows(&[vec![0.0], vec![0.0], vec![1.0]], vec![0.0, 0.0, 0.5], Activation::Linear).unwrap();
        let net = QNet::from_subnets(vec![Mlp::from_layers(vec![head]).unwrap()], l, true).unwrap();
        let policy = DqnPolicy { mode: AgentMode::Fdc, net };
        assert_eq!(policy.greedy(&[1.0], &[[0.0]]).unwrap(), 2);
        let mut r = rng::seeded(0);
        assert_eq!(policy.act(&[1.0], &[[5.0]], 0.0, &mut r).unwrap(), 2);
    }

    #[test]
    fn uniform_exploration() {
        let agent = DqnAgent::new(AgentMode::Dcc, layout(), &tiny_sizes(), 5, DqnConfig::default(), 2).unwrap();
        let mut r = rng::seeded(9);
        let mut counts = [0usize; 5];
        let o = [0.0; 4];
        let m = [[0.0; 4], [0.0; 4]];
        for _ in 0..100_000 {
            counts[agent.act(&o, &m, 1.0, &mut r).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.2).abs() < 0.01);
        }
    }

    #[test]
    fn epsilon_schedule() {
        let s = EpsilonSchedule { start: 1.0, end: 0.02, anneal_steps: 100 };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(50) - 0.51).abs() < 1e-12);
        assert_eq!(s.value(100), 0.02);
        assert_eq!(s.value(10_000), 0.02);
    }

    #[test]
    fn terminal_and_myopic_targets() {
        let cfg = DqnConfig { gamma: 0.0, ..DqnConfig::default() };
        let agent = DqnAgent::new(AgentMode::DccMd(0.5), layout(), &tiny_sizes(), 3, cfg, 2).unwrap();
        let mut t = item(1, true);
        t.reward = 5.0;
        let p = agent.prepare(&t, None).unwrap();
        assert_eq!(agent.td_target(&t, &p).unwrap(), 5.0);
        let mut t = item(2, false);
        t.reward = -0.05;
        let p = agent.prepare(&t, None).unwrap();
        assert_eq!(agent.td_target(&t, &p).unwrap(), -0.05);
    }

    #[test]
    fn same_mask_on_current_and_next_input() {
        let agent = DqnAgent::new(AgentMode::DccMd(0.5), layout(), &tiny_sizes(), 3, DqnConfig::default(), 2).unwrap();
        let mut r = rng::seeded(3);
        for s in 0..200 {
            let t = item(s, false);
            let mask = agent.sample_mask(&mut r).unwrap();
            let p = agent.prepare(&t, mask).unwrap();
            for b in agent.online().layout().messages() {
                let cur_zero = p.x[b.range()].iter().all(|v| *v == 0.0);
                let next_zero = p.x_next[b.range()].iter().all(|v| *v == 0.0);
                assert_eq!(cur_zero, next_zero);
            }
            assert_eq!(&p.x[..4], &t.o[..]);
        }
    }

    #[test]
    fn target_only_changes_on_sync() {
        let cfg = DqnConfig { target_sync: 3, batch_size: 4, lr: 1e-2, ..DqnConfig::default() };
        let mut agent = DqnAgent::new(AgentMode::DccMd(0.2), layout(), &tiny_sizes(), 3, cfg, 2).unwrap();
        let mut buf = ReplayBuffer::new(100).unwrap();
        for s in 0..50 {
            buf.push(item(s, s % 7 == 0)).unwrap();
        }
        let before = agent.target().clone();
        let (mut br, mut mr) = (rng::seeded(1), rng::seeded(2));
        agent.train_step(&buf, &mut br, &mut mr).unwrap();
        agent.train_step(&buf, &mut br, &mut mr).unwrap();
        assert_eq!(agent.target(), &before);
        assert_ne!(agent.online(), &before);
        agent.train_step(&buf, &mut br, &mut mr).unwrap();
        assert_eq!(agent.target(), agent.online());
    }

    #[test]
    fn exact_targets_give_zero_loss_and_gradient() {
        let agent = DqnAgent::new(AgentMode::Dcc, layout(), &tiny_sizes(), 3, DqnConfig { gamma: 0.0, ..DqnConfig::default() }, 5).unwrap();
        let mut t = item(4, false);
        t.reward = agent.online().q_values(&t.input()).unwrap()[t.action];
        let (loss, grads) = agent.loss_and_gradients(&[&t], vec![None]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.max_abs() == 0.0));
    }
}
