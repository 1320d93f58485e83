//! Multi-agent deep reinforcement learning with block-wise message-dropout.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`] is a small dense-network engine (forward, exact backward, Adam,
//!   finite-difference checks, binary checkpoints).
//! * [`masking`] draws block-wise and element-wise dropout masks over an
//!   agent's `(own observation | received messages)` input and applies the
//!   execution-time `1 - p` compensation.
//! * [`envs`] hosts pursuit, cooperative navigation and waterworld.
//! * [`replay`] is the FIFO experience memory.
//! * [`dqn`] and [`ddpg`] are the learners (DCC / DCC-MD / FDC and the
//!   ablations; MADDPG / MADDPG-MD / independent DDPG).
//! * [`autoenc`] compresses observations into short messages.
//! * [`harness`] wires everything into training, evaluation under broken
//!   links, dropout-rate sweeps and CSV metrics.
//!
//! Data-parallel loops (evaluation episodes, sweep runs, autoencoder batches,
//! Monte-Carlo statistics) go through [`parallel`], which uses rayon when the
//! `parallel` feature is on and plain iterators otherwise. Results are
//! identical either way.

pub mod autoenc;
pub mod ddpg;
pub mod dqn;
pub mod envs;
mod error;
pub mod harness;
pub mod masking;
pub mod nn;
pub mod parallel;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
