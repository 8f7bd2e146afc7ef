use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{Curriculum, ScenarioConfig};
use crate::error::{Error, Result};
use crate::rl::{Algorithm, Hyperparameters};

/// A complete, self-describing description of one training run.
///
/// The file format is TOML with four sections, all optional:
///
/// ```toml
/// [run]
/// algorithm = "td3"
/// episodes = 1000
///
/// [curriculum]
/// enabled = true
///
/// [scenario]
/// robot_count = 4
/// seed = 7
///
/// [training]
/// learning_rate = 1e-4
/// ```
///
/// `scenario.seed` is the master seed of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSettings,
    pub curriculum: CurriculumSettings,
    pub scenario: ScenarioConfig,
    pub training: Hyperparameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub algorithm: Algorithm,
    pub episodes: u64,
    pub checkpoint_interval: u64,
    /// Run directory; relative paths resolve against the working directory.
    pub output_dir: PathBuf,
    /// Rollout workers. 1 runs in-process and is bit-reproducible.
    pub workers: usize,
    /// Fresh scenarios per checkpoint when choosing the best one.
    pub validation_episodes: usize,
    /// Trials per cell in evaluation studies.
    pub evaluation_trials: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Td3,
            episodes: 1000,
            checkpoint_interval: 10,
            output_dir: PathBuf::from("runs/default"),
            workers: 1,
            validation_episodes: 20,
            evaluation_trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSettings {
    /// Only has an effect when `scenario.gate_enabled` is set.
    pub enabled: bool,
    pub completion_episode: u64,
}

impl Default for CurriculumSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            completion_episode: 500,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned() + &span_hint(text, e.span())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.training.validate()?;
        let fail = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if self.run.checkpoint_interval == 0 {
            return fail("run.checkpoint_interval", "must be at least 1");
        }
        if self.run.workers == 0 {
            return fail("run.workers", "must be at least 1");
        }
        if self.run.validation_episodes == 0 {
            return fail("run.validation_episodes", "must be at least 1");
        }
        Ok(())
    }

    /// The gate schedule for training, if this run uses one.
    pub fn curriculum(&self) -> Option<Curriculum> {
        (self.scenario.gate_enabled && self.curriculum.enabled)
            .then(|| Curriculum::for_scenario(&self.scenario, self.curriculum.completion_episode))
    }

    /// The scenario used for validation and evaluation: the gate, if any, at
    /// its final opening.
    pub fn evaluation_scenario(&self) -> ScenarioConfig {
        let mut s = self.scenario.clone();
        if s.gate_enabled && self.curriculum.enabled {
            s.gate_opening = s.min_gate_opening();
        }
        s
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
