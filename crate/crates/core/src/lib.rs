//! Decentralized control of robot aggregates that carry a shared cylindrical
//! payload, trained with centralized deep reinforcement learning.
//!
//! The crate is layered bottom-up:
//!
//! - [`sim`]: quasi-static payload kinematics, collisions, robot failures
//! - [`sensing`]: the per-robot 31-component observation
//! - [`env`]: scenario generation, reward, episode lifecycle, curriculum
//! - [`nn`]: dense networks, backpropagation, ADAM
//! - [`rl`]: replay buffer and the DQN / DDQN / DDPG / TD3 learners
//! - [`trainer`]: training runs, checkpoints, evaluation and studies
//! - [`wire`]: framed binary protocol between rollout workers and a learner

pub mod env;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod rl;
pub mod sensing;
pub mod sim;
pub mod trainer;
pub mod wire;

pub use error::{Error, Result};
