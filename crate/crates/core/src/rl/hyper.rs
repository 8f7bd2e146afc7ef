use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning hyperparameters. Defaults follow the reference experiments; the
/// policy-family extras (tau, delay, noise) follow common TD3 settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_decrement: f64,
    pub epsilon_min: f64,
    /// Hard target copy interval (learn steps) for DQN/DDQN.
    pub target_update_interval: u64,
    /// Soft target rate for DDPG/TD3.
    pub tau: f64,
    /// TD3 actor/target update period, in critic updates.
    pub policy_delay: u64,
    /// Target smoothing noise, in normalized actor-output units.
    pub target_noise_sigma: f64,
    pub target_noise_clip: f64,
    /// Behaviour noise added to continuous actions, in cm/s.
    pub exploration_noise_sigma: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            gamma: 0.99997,
            learning_rate: 1e-4,
            batch_size: 100,
            buffer_capacity: 1_000_000,
            epsilon_start: 1.0,
            epsilon_decrement: 1e-6,
            epsilon_min: 0.01,
            target_update_interval: 1000,
            tau: 0.005,
            policy_delay: 2,
            target_noise_sigma: 0.2,
            target_noise_clip: 0.5,
            exploration_noise_sigma: 0.1,
        }
    }
}

impl Hyperparameters {
    /// Exploration rate after `learn_steps` updates: a linear ramp with a floor.
    pub fn epsilon_after(&self, learn_steps: u64) -> f64 {
        self.epsilon_min
            .max(self.epsilon_start - self.epsilon_decrement * learn_steps as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: &str| Err(Error::Config(format!("training.{field}: {why}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma", "must lie in the open interval (0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("learning_rate", "must be a non-negative finite number");
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return fail("buffer_capacity", "must hold at least one batch");
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_min", self.epsilon_min),
            ("tau", self.tau),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(name, "must lie in [0, 1]");
            }
        }
        if self.epsilon_min > self.epsilon_start {
            return fail("epsilon_min", "must not exceed epsilon_start");
        }
        if !(self.epsilon_decrement >= 0.0 && self.epsilon_decrement.is_finite()) {
            return fail("epsilon_decrement", "must be non-negative");
        }
        if self.target_update_interval == 0 {
            return fail("target_update_interval", "must be positive");
        }
        if self.policy_delay == 0 {
            return fail("policy_delay", "must be positive");
        }
        for (name, v) in [
            ("target_noise_sigma", self.target_noise_sigma),
            ("target_noise_clip", self.target_noise_clip),
            ("exploration_noise_sigma", self.exploration_noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(name, "must be non-negative");
            }
        }
        Ok(())
    }
}
