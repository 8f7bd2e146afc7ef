use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::OBS_DIM;
use crate::sim::{WheelDelta, MAX_WHEEL_DELTA};

/// Number of discrete actions: every pairing of {-0.1, 0, +0.1} cm/s per wheel.
pub const DISCRETE_ACTIONS: usize = 9;
/// Continuous actions have one component per wheel.
pub const CONTINUOUS_ACTION_DIM: usize = 2;

const DELTA_LEVELS: [f64; 3] = [-MAX_WHEEL_DELTA, 0.0, MAX_WHEEL_DELTA];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// Index into the 3×3 wheel-delta table.
    Discrete(u8),
    /// Wheel deltas in cm/s, each in [-0.1, 0.1].
    Continuous([f64; CONTINUOUS_ACTION_DIM]),
}

impl Action {
    pub fn wheel_delta(self) -> Result<WheelDelta> {
        match self {
            Action::Discrete(i) => decode_discrete_action(i as usize),
            Action::Continuous([l, r]) => Ok(WheelDelta::new(l, r)),
        }
    }
}

/// Row-major decode: `index = 3·i + j`, left delta from `i`, right from `j`.
pub fn decode_discrete_action(index: usize) -> Result<WheelDelta> {
    if index >= DISCRETE_ACTIONS {
        return Err(Error::Usage(format!("discrete action {index} outside 0..9")));
    }
    Ok(WheelDelta::new(DELTA_LEVELS[index / 3], DELTA_LEVELS[index % 3]))
}

/// One robot's transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub observation: [f64; OBS_DIM],
    pub action: Action,
    pub reward: f64,
    pub next_observation: [f64; OBS_DIM],
    pub terminal: bool,
}
