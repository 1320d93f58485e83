//! Cooperative navigation: cover all landmarks without bumping into each other.
//!
//! Double-integrator particles with velocity damping. Discrete agents pick one
//! of five unit accelerations: none, +x, -x, +y, -y.

use rand::Rng as _;

use super::{DiscreteEnv, EnvStep, MultiAgentEnv, StepInfo};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const NAV_ACTIONS: usize = 5;

const ACCEL: [(f64, f64); NAV_ACTIONS] = [(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct NavConfig {
    pub n_agents: usize,
    pub n_landmarks: usize,
    /// Other agents are visible only closer than this.
    pub sensing_radius: f64,
    pub collision_penalty: f64,
    pub dt: f64,
    pub damping: f64,
    pub agent_radius: f64,
    pub half_width: f64,
    pub horizon: usize,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            n_agents: 8,
            n_landmarks: 8,
            sensing_radius: 1.0,
            collision_penalty: 2.0,
            dt: 0.1,
            damping: 0.25,
            agent_radius: 0.1,
            half_width: 1.5,
            horizon: 50,
        }
    }
}

impl NavConfig {
    pub fn small() -> Self {
        Self {
            n_agents: 4,
            n_landmarks: 4,
            ..Self::default()
        }
    }

    /// Own position and velocity, landmark offsets, other-agent offsets.
    /// With as many landmarks as agents this is `4N + 2`.
    pub fn obs_dim(&self) -> usize {
        4 + 2 * self.n_landmarks + 2 * (self.n_agents - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_landmarks == 0 || self.horizon == 0 {
            return Err(Error::Config("navigation needs agents, landmarks and a horizon".into()));
        }
        let positive = [self.sensing_radius, self.dt, self.agent_radius, self.half_width];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0)
            || !(0.0..1.0).contains(&self.damping)
            || !(self.collision_penalty >= 0.0)
        {
            return Err(Error::Config("invalid navigation physics constants".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NavEnv {
    cfg: NavConfig,
    pos: Vec<[f64; 2]>,
    vel: Vec<[f64; 2]>,
    landmarks: Vec<[f64; 2]>,
    t: usize,
    rng: Rng,
}

impl NavEnv {
    pub fn new(cfg: NavConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut env = Self {
            pos: Vec::new(),
            vel: Vec::new(),
            landmarks: Vec::new(),
            t: 0,
            rng: rng::seeded(seed),
            cfg,
        };
        env.reset();
        Ok(env)
    }

    pub fn from_state(cfg: NavConfig, pos: Vec<[f64; 2]>, vel: Vec<[f64; 2]>, landmarks: Vec<[f64; 2]>) -> Result<Self> {
        cfg.validate()?;
        if pos.len() != cfg.n_agents || vel.len() != cfg.n_agents || landmarks.len() != cfg.n_landmarks {
            return Err(Error::Env("state does not match config".into()));
        }
        Ok(Self {
            pos,
            vel,
            landmarks,
            t: 0,
            rng: rng::seeded(0),
            cfg,
        })
    }

    pub fn config(&self) -> &NavConfig {
        &self.cfg
    }

    pub fn agent_positions(&self) -> &[[f64; 2]] {
        &self.pos
    }

    pub fn landmarks(&self) -> &[[f64; 2]] {
        &self.landmarks
    }

    fn collisions_of(&self, i: usize) -> usize {
        let lim = 2.0 * self.cfg.agent_radius;
        (0..self.cfg.n_agents)
            .filter(|&j| j != i && dist(self.pos[i], self.pos[j]) < lim)
            .count()
    }

    /// `-min_l |x_i - l| - penalty * collisions(i)` for every agent.
    pub fn rewards(&self) -> Vec<f64> {
        (0..self.cfg.n_agents)
            .map(|i| {
                let near = self
                    .landmarks
                    .iter()
                    .map(|&l| dist(self.pos[i], l))
                    .fold(f64::INFINITY, f64::min);
                -near - self.cfg.collision_penalty * self.collisions_of(i) as f64
            })
            .collect()
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl MultiAgentEnv for NavEnv {
    type Action = usize;

    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    fn reset(&mut self) {
        let draw = |rng: &mut Rng| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        self.pos = (0..self.cfg.n_agents).map(|_| draw(&mut self.rng)).collect();
        self.vel = vec![[0.0; 2]; self.cfg.n_agents];
        self.landmarks = (0..self.cfg.n_landmarks).map(|_| draw(&mut self.rng)).collect();
        self.t = 0;
    }

    fn step(&mut self, actions: &[usize]) -> Result<EnvStep> {
        if actions.len() != self.cfg.n_agents {
            return Err(Error::InvalidAction(format!(
                "expected {} actions, got {}",
                self.cfg.n_agents,
                actions.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= NAV_ACTIONS) {
            return Err(Error::InvalidAction(format!("navigation action id {a}")));
        }
        if self.t >= self.cfg.horizon {
            return Err(Error::Env("step on a finished episode; reset first".into()));
        }
        let (dt, keep, hw) = (self.cfg.dt, 1.0 - self.cfg.damping, self.cfg.half_width);
        for (i, &a) in actions.iter().enumerate() {
            let acc = ACCEL[a];
            for (k, ak) in [acc.0, acc.1].into_iter().enumerate() {
                self.vel[i][k] = self.vel[i][k] * keep + ak * dt;
                self.pos[i][k] += self.vel[i][k] * dt;
                if self.pos[i][k].abs() > hw {
                    self.pos[i][k] = self.pos[i][k].clamp(-hw, hw);
                    self.vel[i][k] = 0.0;
                }
            }
        }
        let rewards = self.rewards();
        let lim = 2.0 * self.cfg.agent_radius;
        let mut collisions = 0;
        for i in 0..self.cfg.n_agents {
            for j in i + 1..self.cfg.n_agents {
                if dist(self.pos[i], self.pos[j]) < lim {
                    collisions += 1;
                }
            }
        }
        self.t += 1;
        let done = self.t >= self.cfg.horizon;
        Ok(EnvStep {
            observations: self.observations(),
            rewards,
            terminal: done,
            info: StepInfo {
                collisions,
                time_limit: done,
                ..StepInfo::default()
            },
        })
    }

    fn observe(&self, agent: usize) -> Vec<f64> {
        let me = self.pos[agent];
        let mut obs = Vec::with_capacity(self.cfg.obs_dim());
        obs.extend_from_slice(&me);
        obs.extend_from_slice(&self.vel[agent]);
        for l in &self.landmarks {
            obs.push(l[0] - me[0]);
            obs.push(l[1] - me[1]);
        }
        for (j, &other) in self.pos.iter().enumerate() {
            if j == agent {
                continue;
            }
            if dist(me, other) < self.cfg.sensing_radius {
                obs.push(other[0] - me[0]);
                obs.push(other[1] - me[1]);
            } else {
                obs.extend_from_slice(&[0.0, 0.0]);
            }
        }
        obs
    }

    fn positions(&self) -> Vec<(f64, f64)> {
        self.pos.iter().map(|p| (p[0], p[1])).collect()
    }

    fn t(&self) -> usize {
        self.t
    }
}

impl DiscreteEnv for NavEnv {
    fn n_actions(&self) -> usize {
        NAV_ACTIONS
    }
}
