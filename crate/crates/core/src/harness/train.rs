//! Training loops: independent DQN learners with message exchange for the
//! discrete environments, and the shared-critic learner for waterworld.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::checkpoint;
use super::config::{EnvConfig, RunConfig};
use super::eval::{discrete_env, evaluate, inboxes, EvalOptions, Policy};
use super::metrics::{emit_metrics, MetricsRow};
use crate::autoenc::{collect_observations, pretrain, Autoencoder, PretrainConfig};
use crate::ddpg::DdpgLearner;
use crate::dqn::DqnAgent;
use crate::envs::{MessageCodec, MultiAgentEnv, WaterEnv};
use crate::error::{Error, Result};
use crate::masking::BlockLayout;
use crate::nn::Mlp;
use crate::replay::{JointTransition, Obs, ReplayBuffer, Transition};
use crate::rng::{self, Stream};

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub run_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
}

/// Seed used for evaluation rows during training.
pub fn train_eval_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, 0xE7A1)
}

/// Evaluates, keeps and appends one metrics row at a time so long runs can be followed on disk.
struct Recorder<'a> {
    cfg: &'a RunConfig,
    path: &'a Path,
    started: Instant,
    rows: Vec<MetricsRow>,
    loss_sum: f64,
    loss_n: u64,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a RunConfig, path: &'a Path) -> Self {
        Self {
            cfg,
            path,
            started: Instant::now(),
            rows: Vec::new(),
            loss_sum: 0.0,
            loss_n: 0,
        }
    }

    fn loss(&mut self, l: f64) {
        self.loss_sum += l;
        self.loss_n += 1;
    }

    fn row(&mut self, policy: &Policy, step: u64, episodes_done: u64, eps: f64) -> Result<()> {
        let t = &self.cfg.train;
        let s = evaluate(policy, &self.cfg.env, &EvalOptions::greedy(t.eval_episodes, train_eval_seed(t.seed)))?;
        let loss = if self.loss_n == 0 { 0.0 } else { self.loss_sum / self.loss_n as f64 };
        self.loss_sum = 0.0;
        self.loss_n = 0;
        let row = MetricsRow {
            run_id: self.cfg.run_id(),
            seed: t.seed,
            mode: self.cfg.mode_name(),
            p: self.cfg.agent.p,
            env: self.cfg.env.name().into(),
            step,
            episodes_done,
            mean_return: s.mean_return,
            catches: s.mean_catches,
            loss,
            eps,
            wallclock_s: if t.record_wallclock { self.started.elapsed().as_secs_f64() } else { 0.0 },
        };
        emit_metrics(self.path, std::slice::from_ref(&row))?;
        self.rows.push(row);
        Ok(())
    }
}

fn due(step: u64, every: u64, total: u64) -> bool {
    step == total || (every > 0 && step.is_multiple_of(every))
}

/// Runs one training job and writes `<out>/<run_id>/{config.txt, metrics.csv, checkpoints/}`.
/// Identical config and seed give byte-identical metrics.
pub fn run_training(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let run_dir = out.join(cfg.run_id());
    std::fs::create_dir_all(&run_dir)?;
    std::fs::write(run_dir.join(checkpoint::CONFIG), cfg.to_text())?;
    let metrics = run_dir.join(METRICS_FILE);
    if metrics.exists() {
        std::fs::remove_file(&metrics)?;
    }
    emit_metrics(&metrics, &[])?;
    let ckpt = run_dir.join("checkpoints");
    let rows = if cfg.env.is_discrete() {
        train_dqn(cfg, &ckpt, &metrics)?
    } else {
        train_ddpg(cfg, &ckpt, &metrics)?
    };
    Ok(TrainOutcome {
        rows,
        run_dir,
        checkpoint_dir: ckpt.join("final"),
    })
}

/// Pretrains the message encoder on random pursuit rollouts.
pub fn pretrain_encoder(cfg: &RunConfig) -> Result<Autoencoder> {
    let EnvConfig::Pursuit(pc) = &cfg.env else {
        return Err(Error::Config("the autoencoder is trained on pursuit observations".into()));
    };
    let seed = rng::derive_seed(cfg.train.seed, Stream::Data as u64);
    let data = collect_observations(pc, cfg.agent.ae_samples, seed)?;
    let ae = Autoencoder::new(pc.obs_dim(), rng::derive_seed(seed, 1))?;
    let pc = PretrainConfig {
        epochs: cfg.agent.ae_epochs,
        ..PretrainConfig::default()
    };
    Ok(pretrain(ae, &data, pc, seed)?.0)
}

fn dqn_policy(agents: &[DqnAgent], codec: &MessageCodec) -> Policy {
    Policy::Dqn {
        agents: agents.iter().map(|a| a.policy().clone()).collect(),
        codec: codec.clone(),
    }
}

fn train_dqn(cfg: &RunConfig, ckpt: &Path, metrics: &Path) -> Result<Vec<MetricsRow>> {
    let t = &cfg.train;
    let mode = cfg.dqn_mode()?;
    let encoder: Option<Mlp> = if cfg.agent.compressed {
        Some(pretrain_encoder(cfg)?.encoder().clone())
    } else {
        None
    };
    let codec = encoder.clone().map(MessageCodec::Encoder).unwrap_or_default();
    let mut env = discrete_env(&cfg.env, rng::derive_seed(t.seed, Stream::Env as u64))?;
    let n = env.n_agents();
    let msg_dim = codec.message_dim(env.obs_dim());
    let init = rng::derive_seed(t.seed, Stream::Init as u64);
    let mut agents = (0..n)
        .map(|i| {
            let layout = BlockLayout::for_agent(i, n, env.obs_dim(), msg_dim)?;
            DqnAgent::new(mode, layout, &cfg.qnet_sizes(), env.n_actions(), cfg.dqn_config(), rng::derive_seed(init, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut buffers = (0..n)
        .map(|_| ReplayBuffer::new(t.buffer_capacity))
        .collect::<Result<Vec<ReplayBuffer<Transition>>>>()?;
    let mut explore = rng::stream(t.seed, Stream::Explore);
    let mut minibatch = rng::stream(t.seed, Stream::Minibatch);
    let mut masks = rng::stream(t.seed, Stream::Mask);
    let schedule = cfg.epsilon();
    let mut rec = Recorder::new(cfg, metrics);
    let save = |agents: &[DqnAgent], dir: &Path| -> Result<()> {
        let nets: Vec<_> = agents.iter().map(|a| a.online()).collect();
        checkpoint::save_dqn(dir, cfg, &nets, encoder.as_ref())
    };

    let observe = |env: &dyn crate::envs::DiscreteEnv| -> Result<(Vec<Obs>, Vec<Obs>)> {
        let obs: Vec<Obs> = env.observations().into_iter().map(Obs::from).collect();
        let msgs = match &codec {
            MessageCodec::Identity => obs.clone(),
            c => obs.iter().map(|o| c.encode(o).map(Obs::from)).collect::<Result<_>>()?,
        };
        Ok((obs, msgs))
    };
    let (mut obs, mut msgs) = observe(env.as_ref())?;
    let mut episodes = 0u64;
    for step in 1..=t.steps {
        let eps = schedule.value(step - 1);
        let boxes = inboxes(&msgs, None);
        let actions = agents
            .iter()
            .zip(&obs)
            .zip(&boxes)
            .map(|((a, o), m)| a.act(o, m, eps, &mut explore))
            .collect::<Result<Vec<_>>>()?;
        let s = env.step(&actions)?;
        let (next_obs, next_msgs) = observe(env.as_ref())?;
        let next_boxes = inboxes(&next_msgs, None);
        let terminal = s.terminal && !s.info.time_limit;
        for (i, buf) in buffers.iter_mut().enumerate() {
            buf.push(Transition {
                o: obs[i].clone(),
                m: boxes[i].clone(),
                action: actions[i],
                reward: s.rewards[i],
                o_next: next_obs[i].clone(),
                m_next: next_boxes[i].clone(),
                terminal,
            })?;
        }
        if s.terminal {
            episodes += 1;
            env.reset();
            (obs, msgs) = observe(env.as_ref())?;
        } else {
            (obs, msgs) = (next_obs, next_msgs);
        }
        if step % t.update_every == 0 && buffers[0].is_warm(t.batch_size) {
            for (agent, buf) in agents.iter_mut().zip(&buffers) {
                let l = agent.train_step(buf, &mut minibatch, &mut masks)?;
                rec.loss(l);
            }
        }
        if due(step, t.eval_every, t.steps) {
            rec.row(&dqn_policy(&agents, &codec), step, episodes, eps)?;
        }
        if t.checkpoint_every > 0 && step % t.checkpoint_every == 0 && step != t.steps {
            save(&agents, &ckpt.join(format!("step_{step}")))?;
        }
    }
    save(&agents, &ckpt.join("final"))?;
    Ok(rec.rows)
}

fn ddpg_policy(learner: &DdpgLearner) -> Policy {
    Policy::Ddpg {
        actors: (0..learner.n_agents()).map(|i| learner.actor_for(i).clone()).collect(),
    }
}

fn train_ddpg(cfg: &RunConfig, ckpt: &Path, metrics: &Path) -> Result<Vec<MetricsRow>> {
    let t = &cfg.train;
    let EnvConfig::Water(wc) = &cfg.env else {
        return Err(Error::Config("continuous learners run in waterworld".into()));
    };
    let mut env = WaterEnv::new(wc.clone(), rng::derive_seed(t.seed, Stream::Env as u64))?;
    let n = env.n_agents();
    let mut learner = DdpgLearner::new(
        cfg.ddpg_mode()?,
        n,
        env.obs_dim(),
        cfg.ddpg_config(),
        rng::derive_seed(t.seed, Stream::Init as u64),
    )?;
    let mut buffer: ReplayBuffer<JointTransition> = ReplayBuffer::new(t.buffer_capacity)?;
    let mut explore = rng::stream(t.seed, Stream::Explore);
    let mut minibatch = rng::stream(t.seed, Stream::Minibatch);
    let mut masks = rng::stream(t.seed, Stream::Mask);
    let mut rec = Recorder::new(cfg, metrics);
    let observe = |env: &WaterEnv| -> Vec<Obs> { env.observations().into_iter().map(Obs::from).collect() };
    let mut obs = observe(&env);
    let mut episodes = 0u64;
    for step in 1..=t.steps {
        let actions = (0..n)
            .map(|i| learner.act(i, &obs[i], t.sigma, &mut explore))
            .collect::<Result<Vec<_>>>()?;
        let s = env.step(&actions)?;
        let next = observe(&env);
        buffer.push(JointTransition {
            obs: obs.clone(),
            actions,
            rewards: s.rewards.clone(),
            next_obs: next.clone(),
            terminal: s.terminal && !s.info.time_limit,
        })?;
        if s.terminal {
            episodes += 1;
            env.reset();
            obs = observe(&env);
        } else {
            obs = next;
        }
        if buffer.is_warm(t.batch_size) {
            if step % t.critic_every == 0 {
                let batch = buffer.sample(t.batch_size, &mut minibatch)?;
                let l = learner.critic_train_step(&batch, &mut masks)?;
                rec.loss(l);
            }
            if step % t.actor_every == 0 {
                let batch = buffer.sample(t.batch_size, &mut minibatch)?;
                learner.actor_train_step(&batch, &mut masks)?;
            }
        }
        if due(step, t.eval_every, t.steps) {
            rec.row(&ddpg_policy(&learner), step, episodes, t.sigma)?;
        }
        if t.checkpoint_every > 0 && step % t.checkpoint_every == 0 && step != t.steps {
            checkpoint::save_ddpg(&ckpt.join(format!("step_{step}")), cfg, &learner)?;
        }
    }
    checkpoint::save_ddpg(&ckpt.join("final"), cfg, &learner)?;
    Ok(rec.rows)
}
