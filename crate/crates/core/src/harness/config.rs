//! Run configuration: flat `key = value` text with `env.`, `agent.` and
//! `train.` sections, plus the shipped desk-scale presets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ddpg::{DdpgConfig, DdpgMode};
use crate::dqn::{AgentMode, DqnConfig, EpsilonSchedule, QNetSizes};
use crate::envs::{NavConfig, PursuitConfig, WaterConfig};
use crate::error::{check_prob, Error, Result};

pub const PRESETS: [&str; 3] = ["pursuit-small", "nav-small", "water-small"];

#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    Pursuit(PursuitConfig),
    Nav(NavConfig),
    Water(WaterConfig),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Pursuit(_) => "pursuit",
            EnvConfig::Nav(_) => "nav",
            EnvConfig::Water(_) => "water",
        }
    }

    pub fn default_for(kind: &str) -> Result<Self> {
        match kind {
            "pursuit" => Ok(EnvConfig::Pursuit(PursuitConfig::default())),
            "nav" => Ok(EnvConfig::Nav(NavConfig::default())),
            "water" => Ok(EnvConfig::Water(WaterConfig::default())),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            EnvConfig::Pursuit(c) => c.n_pursuers,
            EnvConfig::Nav(c) => c.n_agents,
            EnvConfig::Water(c) => c.n_pursuers,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvConfig::Pursuit(c) => c.obs_dim(),
            EnvConfig::Nav(c) => c.obs_dim(),
            EnvConfig::Water(c) => c.obs_dim(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvConfig::Pursuit(c) => c.horizon,
            EnvConfig::Nav(c) => c.horizon,
            EnvConfig::Water(c) => c.horizon,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, EnvConfig::Water(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Pursuit(c) => c.validate(),
            EnvConfig::Nav(c) => c.validate(),
            EnvConfig::Water(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub mode: String,
    pub p: f64,
    /// Broadcast autoencoder codes instead of raw observations.
    pub compressed: bool,
    pub ae_samples: usize,
    pub ae_epochs: usize,
    pub share_params: bool,
    pub concat_critic: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            mode: "dcc_md".into(),
            p: 0.2,
            compressed: false,
            ae_samples: 100_000,
            ae_epochs: 5,
            share_params: true,
            concat_critic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub seed: u64,
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// DQN: one update every this many environment steps.
    pub update_every: u64,
    pub target_sync: u64,
    pub buffer_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_anneal: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Intermediate checkpoints every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub critic_every: u64,
    pub actor_every: u64,
    pub sigma: f64,
    /// Write real elapsed time into metrics; off keeps files reproducible.
    pub record_wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let dqn = DqnConfig::default();
        let eps = EpsilonSchedule::default();
        Self {
            steps: 2_000_000,
            seed: 0,
            lr: dqn.lr,
            gamma: dqn.gamma,
            batch_size: dqn.batch_size,
            update_every: 4,
            target_sync: dqn.target_sync,
            buffer_capacity: 200_000,
            eps_start: eps.start,
            eps_end: eps.end,
            eps_anneal: eps.anneal_steps,
            eval_every: 20_000,
            eval_episodes: 10,
            checkpoint_every: 0,
            critic_every: 5,
            actor_every: 10,
            sigma: 0.15,
            record_wallclock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: Option<String>,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "pursuit-small" => Ok(Self {
                run_id: None,
                env: EnvConfig::Pursuit(PursuitConfig::small()),
                agent: AgentConfig::default(),
                train: TrainConfig {
                    steps: 300_000,
                    lr: 5e-4,
                    target_sync: 1000,
                    buffer_capacity: 100_000,
                    eps_anneal: 100_000,
                    eval_every: 10_000,
                    eval_episodes: 5,
                    ..TrainConfig::default()
                },
            }),
            "nav-small" => Ok(Self {
                run_id: None,
                env: EnvConfig::Nav(NavConfig::small()),
                agent: AgentConfig::default(),
                train: TrainConfig {
                    steps: 200_000,
                    lr: 5e-4,
                    target_sync: 1000,
                    buffer_capacity: 100_000,
                    eps_anneal: 100_000,
                    eval_every: 10_000,
                    eval_episodes: 20,
                    ..TrainConfig::default()
                },
            }),
            "water-small" => {
                let ddpg = DdpgConfig::default();
                Ok(Self {
                    run_id: None,
                    env: EnvConfig::Water(WaterConfig::small()),
                    agent: AgentConfig {
                        mode: "maddpg_md".into(),
                        ..AgentConfig::default()
                    },
                    train: TrainConfig {
                        steps: 100_000,
                        lr: ddpg.critic_lr,
                        gamma: ddpg.gamma,
                        batch_size: ddpg.batch_size,
                        target_sync: ddpg.target_sync,
                        buffer_capacity: 50_000,
                        eval_every: 10_000,
                        eval_episodes: 4,
                        sigma: ddpg.sigma,
                        ..TrainConfig::default()
                    },
                })
            }
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Parses config text. A `preset` key (or else `env.kind`) picks the base;
    /// every other key then overrides it, in file order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string(), n + 1));
        }
        let find = |key: &str| pairs.iter().rev().find(|(k, _, _)| k == key).map(|(_, v, _)| v.as_str());
        let mut cfg = match (find("preset"), find("env.kind")) {
            (Some(p), _) => Self::preset(p)?,
            (None, Some(kind)) => Self {
                run_id: None,
                env: EnvConfig::default_for(kind)?,
                agent: AgentConfig {
                    mode: if kind == "water" { "maddpg_md".into() } else { "dcc_md".into() },
                    ..AgentConfig::default()
                },
                train: TrainConfig::default(),
            },
            (None, None) => return Err(Error::Config("config needs `preset` or `env.kind`".into())),
        };
        for (k, v, line) in &pairs {
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
            }
        }
        let t = &mut self.train;
        let a = &mut self.agent;
        match key {
            "preset" => {}
            "run_id" => self.run_id = Some(value.to_string()),
            "env.kind" => {
                if value != self.env.name() {
                    return Err(Error::Config(format!("env.kind `{value}` conflicts with the preset")));
                }
            }
            "agent.mode" => a.mode = value.to_string(),
            "agent.p" => a.p = num(key, value)?,
            "agent.compressed" => a.compressed = flag(key, value)?,
            "agent.ae_samples" => a.ae_samples = num(key, value)?,
            "agent.ae_epochs" => a.ae_epochs = num(key, value)?,
            "agent.share_params" => a.share_params = flag(key, value)?,
            "agent.concat_critic" => a.concat_critic = flag(key, value)?,
            "train.steps" => t.steps = num(key, value)?,
            "train.seed" => t.seed = num(key, value)?,
            "train.lr" => t.lr = num(key, value)?,
            "train.gamma" => t.gamma = num(key, value)?,
            "train.batch_size" => t.batch_size = num(key, value)?,
            "train.update_every" => t.update_every = num(key, value)?,
            "train.target_sync" => t.target_sync = num(key, value)?,
            "train.buffer_capacity" => t.buffer_capacity = num(key, value)?,
            "train.eps_start" => t.eps_start = num(key, value)?,
            "train.eps_end" => t.eps_end = num(key, value)?,
            "train.eps_anneal" => t.eps_anneal = num(key, value)?,
            "train.eval_every" => t.eval_every = num(key, value)?,
            "train.eval_episodes" => t.eval_episodes = num(key, value)?,
            "train.checkpoint_every" => t.checkpoint_every = num(key, value)?,
            "train.critic_every" => t.critic_every = num(key, value)?,
            "train.actor_every" => t.actor_every = num(key, value)?,
            "train.sigma" => t.sigma = num(key, value)?,
            "train.record_wallclock" => t.record_wallclock = flag(key, value)?,
            _ if key.starts_with("env.") => self.set_env(&key[4..], value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn set_env(&mut self, key: &str, v: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("`env.{key}`: cannot parse `{v}`")))
        }
        match &mut self.env {
            EnvConfig::Pursuit(c) => match key {
                "n_agents" => c.n_pursuers = num(key, v)?,
                "n_evaders" => c.n_evaders = num(key, v)?,
                "width" => c.width = num(key, v)?,
                "height" => c.height = num(key, v)?,
                "sensing_range" => c.sensing_range = num(key, v)?,
                "horizon" => c.horizon = num(key, v)?,
                "capture_reward" => c.capture_reward = num(key, v)?,
                "step_penalty" => c.step_penalty = num(key, v)?,
                "boundary_penalty" => c.boundary_penalty = num(key, v)?,
                _ => return Err(Error::Config(format!("unknown pursuit key `env.{key}`"))),
            },
            EnvConfig::Nav(c) => match key {
                "n_agents" => c.n_agents = num(key, v)?,
                "n_landmarks" => c.n_landmarks = num(key, v)?,
                "sensing_radius" => c.sensing_radius = num(key, v)?,
                "collision_penalty" => c.collision_penalty = num(key, v)?,
                "horizon" => c.horizon = num(key, v)?,
                _ => return Err(Error::Config(format!("unknown navigation key `env.{key}`"))),
            },
            EnvConfig::Water(c) => match key {
                "n_agents" => {
                    let k = c.coop_k;
                    *c = WaterConfig::with_agents(num(key, v)?, k);
                }
                "k" => c.coop_k = num(key, v)?,
                "n_food" => c.n_food = num(key, v)?,
                "n_poison" => c.n_poison = num(key, v)?,
                "horizon" => c.horizon = num(key, v)?,
                _ => return Err(Error::Config(format!("unknown waterworld key `env.{key}`"))),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        check_prob(self.agent.p)?;
        if self.env.is_discrete() {
            self.dqn_mode()?;
            if self.agent.compressed && !matches!(self.env, EnvConfig::Pursuit(_)) {
                return Err(Error::Config("compressed messages are only available in pursuit".into()));
            }
        } else {
            self.ddpg_mode()?;
        }
        let t = &self.train;
        if t.batch_size == 0 || t.buffer_capacity == 0 || t.update_every == 0 || t.critic_every == 0 || t.actor_every == 0 {
            return Err(Error::Config("batch size, buffer capacity and update cadences must be positive".into()));
        }
        if t.eval_every == 0 || t.eval_episodes == 0 {
            return Err(Error::Config("evaluation cadence and episode count must be positive".into()));
        }
        check_prob(t.eps_start)?;
        check_prob(t.eps_end)?;
        if !(t.lr > 0.0 && t.lr.is_finite()) || !(0.0..=1.0).contains(&t.gamma) || !(t.sigma >= 0.0 && t.sigma.is_finite()) {
            return Err(Error::Config("learning rate, discount or noise scale out of range".into()));
        }
        Ok(())
    }

    pub fn dqn_mode(&self) -> Result<AgentMode> {
        if self.agent.mode.contains("ddpg") {
            return Err(Error::Config(format!("mode `{}` needs continuous actions", self.agent.mode)));
        }
        AgentMode::parse(&self.agent.mode, self.agent.p)
    }

    pub fn ddpg_mode(&self) -> Result<DdpgMode> {
        DdpgMode::parse(&self.agent.mode, self.agent.p)
    }

    /// `mode` column value: the mode name.
    pub fn mode_name(&self) -> String {
        self.agent.mode.clone()
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            format!(
                "{}-{}-p{}-s{}",
                self.env.name(),
                self.agent.mode,
                self.agent.p,
                self.train.seed
            )
        })
    }

    pub fn dqn_config(&self) -> DqnConfig {
        DqnConfig {
            gamma: self.train.gamma,
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            target_sync: self.train.target_sync,
        }
    }

    pub fn ddpg_config(&self) -> DdpgConfig {
        DdpgConfig {
            gamma: self.train.gamma,
            actor_lr: self.train.lr,
            critic_lr: self.train.lr,
            batch_size: self.train.batch_size,
            target_sync: self.train.target_sync,
            sigma: self.train.sigma,
            share_params: self.agent.share_params,
            concat_critic: self.agent.concat_critic,
        }
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.train.eps_start,
            end: self.train.eps_end,
            anneal_steps: self.train.eps_anneal,
        }
    }

    pub fn qnet_sizes(&self) -> QNetSizes {
        match self.env {
            EnvConfig::Nav(_) => QNetSizes::navigation(),
            _ => QNetSizes::pursuit(self.env.n_agents()),
        }
    }

    /// Full config as parseable text; used for checkpoints and run directories.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "env.kind = {}", self.env.name());
        if let Some(id) = &self.run_id {
            let _ = writeln!(s, "run_id = {id}");
        }
        match &self.env {
            EnvConfig::Pursuit(c) => {
                let _ = writeln!(s, "env.n_agents = {}", c.n_pursuers);
                let _ = writeln!(s, "env.n_evaders = {}", c.n_evaders);
                let _ = writeln!(s, "env.width = {}", c.width);
                let _ = writeln!(s, "env.height = {}", c.height);
                let _ = writeln!(s, "env.sensing_range = {}", c.sensing_range);
                let _ = writeln!(s, "env.horizon = {}", c.horizon);
                let _ = writeln!(s, "env.capture_reward = {}", c.capture_reward);
                let _ = writeln!(s, "env.step_penalty = {}", c.step_penalty);
                let _ = writeln!(s, "env.boundary_penalty = {}", c.boundary_penalty);
            }
            EnvConfig::Nav(c) => {
                let _ = writeln!(s, "env.n_agents = {}", c.n_agents);
                let _ = writeln!(s, "env.n_landmarks = {}", c.n_landmarks);
                let _ = writeln!(s, "env.sensing_radius = {}", c.sensing_radius);
                let _ = writeln!(s, "env.collision_penalty = {}", c.collision_penalty);
                let _ = writeln!(s, "env.horizon = {}", c.horizon);
            }
            EnvConfig::Water(c) => {
                let _ = writeln!(s, "env.n_agents = {}", c.n_pursuers);
                let _ = writeln!(s, "env.k = {}", c.coop_k);
                let _ = writeln!(s, "env.n_food = {}", c.n_food);
                let _ = writeln!(s, "env.n_poison = {}", c.n_poison);
                let _ = writeln!(s, "env.horizon = {}", c.horizon);
            }
        }
        let a = &self.agent;
        let _ = writeln!(s, "agent.mode = {}", a.mode);
        let _ = writeln!(s, "agent.p = {}", a.p);
        let _ = writeln!(s, "agent.compressed = {}", a.compressed);
        let _ = writeln!(s, "agent.ae_samples = {}", a.ae_samples);
        let _ = writeln!(s, "agent.ae_epochs = {}", a.ae_epochs);
        let _ = writeln!(s, "agent.share_params = {}", a.share_params);
        let _ = writeln!(s, "agent.concat_critic = {}", a.concat_critic);
        let t = &self.train;
        let _ = writeln!(s, "train.steps = {}", t.steps);
        let _ = writeln!(s, "train.seed = {}", t.seed);
        let _ = writeln!(s, "train.lr = {}", t.lr);
        let _ = writeln!(s, "train.gamma = {}", t.gamma);
        let _ = writeln!(s, "train.batch_size = {}", t.batch_size);
        let _ = writeln!(s, "train.update_every = {}", t.update_every);
        let _ = writeln!(s, "train.target_sync = {}", t.target_sync);
        let _ = writeln!(s, "train.buffer_capacity = {}", t.buffer_capacity);
        let _ = writeln!(s, "train.eps_start = {}", t.eps_start);
        let _ = writeln!(s, "train.eps_end = {}", t.eps_end);
        let _ = writeln!(s, "train.eps_anneal = {}", t.eps_anneal);
        let _ = writeln!(s, "train.eval_every = {}", t.eval_every);
        let _ = writeln!(s, "train.eval_episodes = {}", t.eval_episodes);
        let _ = writeln!(s, "train.checkpoint_every = {}", t.checkpoint_every);
        let _ = writeln!(s, "train.critic_every = {}", t.critic_every);
        let _ = writeln!(s, "train.actor_every = {}", t.actor_every);
        let _ = writeln!(s, "train.sigma = {}", t.sigma);
        let _ = writeln!(s, "train.record_wallclock = {}", t.record_wallclock);
        s
    }
}

/// Output root: `DNMD_OUT` if set, else `fallback`.
pub fn output_root(fallback: Option<&Path>) -> PathBuf {
    match std::env::var_os("DNMD_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => fallback.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in PRESETS {
            RunConfig::preset(name).unwrap().validate().unwrap();
        }
        let p = RunConfig::preset("pursuit-small").unwrap();
        assert_eq!(p.env, EnvConfig::Pursuit(PursuitConfig::small()));
        assert_eq!(p.train.steps, 300_000);
        assert_eq!(p.env.n_agents(), 4);
        assert_eq!(RunConfig::preset("nav-small").unwrap().env.n_agents(), 4);
        match RunConfig::preset("water-small").unwrap().env {
            EnvConfig::Water(w) => assert_eq!((w.n_pursuers, w.coop_k), (4, 2)),
            _ => panic!(),
        }
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn parse_overrides_and_comments() {
        let text = "# demo\npreset = pursuit-small\nagent.mode = fdc  # no messages\n\ntrain.seed=7\nenv.width = 12\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.agent.mode, "fdc");
        assert_eq!(c.train.seed, 7);
        match c.env {
            EnvConfig::Pursuit(p) => assert_eq!((p.width, p.height), (12, 10)),
            _ => panic!(),
        }
    }

    #[test]
    fn parse_errors() {
        assert!(RunConfig::parse("agent.mode = dcc").is_err());
        assert!(RunConfig::parse("preset = pursuit-small\nbogus = 1").is_err());
        assert!(RunConfig::parse("preset = pursuit-small\nagent.p = 1.5").is_err());
        assert!(RunConfig::parse("preset = pursuit-small\ntrain.steps = many").is_err());
        assert!(RunConfig::parse("preset = pursuit-small\nagent.mode = maddpg").is_err());
        assert!(RunConfig::parse("preset = water-small\nagent.mode = dcc").is_err());
        assert!(RunConfig::parse("preset = pursuit-small\nenv.kind = nav").is_err());
        assert!(RunConfig::parse("env.kind = nav\nagent.compressed = true").is_err());
        assert!(RunConfig::parse("preset = pursuit-small\nno equals sign").is_err());
    }

    #[test]
    fn text_round_trip() {
        for name in PRESETS {
            let mut c = RunConfig::preset(name).unwrap();
            c.train.seed = 3;
            c.agent.p = 0.3;
            assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        }
    }
}
