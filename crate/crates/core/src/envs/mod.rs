//! The three multi-agent environments behind one stepping interface.

mod nav;
mod pursuit;
mod trajectory;
mod water;

pub use nav::{NavConfig, NavEnv, NAV_ACTIONS};
pub use pursuit::{Pos, PursuitConfig, PursuitEnv, PURSUIT_ACTIONS};
pub use trajectory::{TrajectoryRecord, TrajectoryWriter};
pub use water::{Body, WaterConfig, WaterEnv, SENSOR_CHANNELS, WATER_SENSORS};

use crate::error::Result;
use crate::nn::Mlp;

/// Side information reported with each step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepInfo {
    /// Evaders (pursuit) or food targets (waterworld) caught this step.
    pub captures: usize,
    /// Agent pairs in collision (navigation).
    pub collisions: usize,
    /// Pursuers that bumped into the map edge.
    pub boundary_hits: usize,
    /// Terminal because the horizon was reached rather than the task finishing.
    pub time_limit: bool,
}

/// Joint result of one environment tick.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminal: bool,
    pub info: StepInfo,
}

pub trait MultiAgentEnv {
    type Action;

    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    /// Start a new episode, drawing from the environment's own random stream.
    fn reset(&mut self);
    fn step(&mut self, actions: &[Self::Action]) -> Result<EnvStep>;
    fn observe(&self, agent: usize) -> Vec<f64>;
    /// Agent positions, for trajectory dumps.
    fn positions(&self) -> Vec<(f64, f64)>;
    fn t(&self) -> usize;

    fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.n_agents()).map(|i| self.observe(i)).collect()
    }
}

/// Environments with a finite action set, driven by the DQN learners.
pub trait DiscreteEnv: MultiAgentEnv<Action = usize> {
    fn n_actions(&self) -> usize;
}

/// How an agent turns its observation into the message it broadcasts.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum MessageCodec {
    /// The message is the observation itself.
    #[default]
    Identity,
    /// The message is the output of a pretrained encoder.
    Encoder(Mlp),
}

impl MessageCodec {
    pub fn message_dim(&self, obs_dim: usize) -> usize {
        match self {
            MessageCodec::Identity => obs_dim,
            MessageCodec::Encoder(enc) => enc.output_dim(),
        }
    }

    pub fn encode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        match self {
            MessageCodec::Identity => Ok(obs.to_vec()),
            MessageCodec::Encoder(enc) => enc.predict(obs),
        }
    }
}

/// The message `agent` sends in the current state.
pub fn message_of<E: MultiAgentEnv + ?Sized>(env: &E, agent: usize, codec: &MessageCodec) -> Result<Vec<f64>> {
    codec.encode(&env.observe(agent))
}
