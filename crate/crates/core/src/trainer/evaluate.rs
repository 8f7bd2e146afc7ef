use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env::{generate_scenario, EpisodeState, ScenarioConfig, Terminal, TrajectoryRecord};
use crate::error::Result;
use crate::geometry::Vec2;
use crate::rl::{Action, Exploration, Policy};
use crate::sensing::{Observation, OBS_DIM};
use crate::sim::{MAX_WHEEL_DELTA, MAX_WHEEL_SPEED};

/// Anything that can drive every robot of an episode for one tick.
pub trait Controller {
    fn act(&mut self, observations: &[[f64; OBS_DIM]]) -> Result<Vec<Action>>;
}

/// A learned policy with exploration off.
impl Controller for Policy {
    fn act(&mut self, observations: &[[f64; OBS_DIM]]) -> Result<Vec<Action>> {
        // no randomness is drawn when exploration is off
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        self.act_batch(observations, Exploration::NONE, &mut unused)
    }
}

/// Always commands a zero wheel change.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn act(&mut self, observations: &[[f64; OBS_DIM]]) -> Result<Vec<Action>> {
        Ok(vec![Action::Continuous([0.0, 0.0]); observations.len()])
    }
}

/// Hand-written steer-to-goal rule working from observations only.
///
/// Each robot turns its base toward the payload→goal direction, recovered as
/// RG − RC in its own frame, and drives forward as hard as the turn allows.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedController;

impl ScriptedController {
    pub fn action_for(obs: &[f64; OBS_DIM]) -> Action {
        let o = Observation::from_array(obs);
        let to_goal = Vec2::from_angle(o.rg_angle * std::f64::consts::PI) * o.rg_distance;
        let to_payload = Vec2::from_angle(o.rc_angle * std::f64::consts::PI) * o.rc_distance;
        let bearing = (to_goal - to_payload).angle();
        // largest wheel difference (cm/s) that can still be braked to zero
        // before the heading error closes, given the per-tick wheel limit
        let brake = (bearing.abs() * 56.0).sqrt();
        let turn = bearing.signum() * brake.min(6.0);
        let forward = (MAX_WHEEL_SPEED - 0.5 * turn.abs()) * bearing.cos().max(0.0);
        let target = [forward - 0.5 * turn, forward + 0.5 * turn];
        let current = [o.wheel_left * MAX_WHEEL_SPEED, o.wheel_right * MAX_WHEEL_SPEED];
        Action::Continuous(std::array::from_fn(|k| {
            (target[k] - current[k]).clamp(-MAX_WHEEL_DELTA, MAX_WHEEL_DELTA)
        }))
    }
}

impl Controller for ScriptedController {
    fn act(&mut self, observations: &[[f64; OBS_DIM]]) -> Result<Vec<Action>> {
        Ok(observations.iter().map(Self::action_for).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub outcome: Terminal,
    pub ticks: u64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub trials: usize,
    pub successes: usize,
    /// `None` when no trials ran.
    pub success_rate: Option<f64>,
    pub mean_episode_length: Option<f64>,
    pub mean_cumulative_reward: Option<f64>,
    pub results: Vec<TrialResult>,
}

impl EvaluationReport {
    pub(crate) fn from_results(results: Vec<TrialResult>) -> Self {
        let n = results.len();
        let successes = results.iter().filter(|r| r.outcome == Terminal::Success).count();
        let mean = |f: &dyn Fn(&TrialResult) -> f64| (n > 0).then(|| results.iter().map(f).sum::<f64>() / n as f64);
        Self {
            trials: n,
            successes,
            success_rate: (n > 0).then(|| successes as f64 / n as f64),
            mean_episode_length: mean(&|r| r.ticks as f64),
            mean_cumulative_reward: mean(&|r| r.mean_return),
            results,
        }
    }

    /// Success rate with "no trials" reported as 0, for ranking.
    pub fn success_rate_or_zero(&self) -> f64 {
        self.success_rate.unwrap_or(0.0)
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Runs one episode to termination, optionally logging every tick.
pub fn run_episode<C: Controller + ?Sized>(
    controller: &mut C,
    episode: &mut EpisodeState,
    mut log: Option<&mut dyn FnMut(&TrajectoryRecord) -> Result<()>>,
) -> Result<()> {
    if let Some(log) = log.as_mut() {
        log(&TrajectoryRecord::scenario(episode))?;
    }
    while episode.is_running() {
        let actions = controller.act(&episode.observation_arrays())?;
        let experiences = episode.step(&actions)?;
        if let Some(log) = log.as_mut() {
            log(&TrajectoryRecord::tick(episode, &experiences))?;
        }
    }
    Ok(())
}

/// Runs `trials` independent episodes with `controller`. Scenario `k` comes
/// from stream `k` of `seed`, so equal seeds give equal scenario sets.
pub fn evaluate<C: Controller + ?Sized>(
    controller: &mut C,
    scenario: &ScenarioConfig,
    trials: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    evaluate_logged(controller, scenario, trials, seed, |_, _| Ok(()))
}

/// [`evaluate`] with every trajectory record passed to `log` with its trial.
pub fn evaluate_logged<C, L>(
    controller: &mut C,
    scenario: &ScenarioConfig,
    trials: usize,
    seed: u64,
    mut log: L,
) -> Result<EvaluationReport>
where
    C: Controller + ?Sized,
    L: FnMut(usize, &TrajectoryRecord) -> Result<()>,
{
    scenario.validate()?;
    let mut results = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut episode = generate_scenario(scenario, &mut trial_rng(seed, trial))?;
        let mut sink = |r: &TrajectoryRecord| log(trial, r);
        run_episode(controller, &mut episode, Some(&mut sink))?;
        results.push(TrialResult {
            trial,
            outcome: episode.terminal,
            ticks: episode.tick(),
            mean_return: episode.mean_return(),
        });
    }
    Ok(EvaluationReport::from_results(results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials_is_not_applicable() {
        let r = evaluate(&mut ZeroController, &ScenarioConfig::default(), 0, 1).unwrap();
        assert_eq!(r.trials, 0);
        assert_eq!(r.success_rate, None);
        assert_eq!(r.mean_episode_length, None);
    }

    #[test]
    fn zero_controller_never_succeeds() {
        let s = ScenarioConfig {
            time_limit: 200,
            ..ScenarioConfig::default()
        };
        let r = evaluate(&mut ZeroController, &s, 3, 2).unwrap();
        assert_eq!(r.success_rate, Some(0.0));
        assert!(r.results.iter().all(|t| t.ticks == 200));
    }

    #[test]
    fn scripted_controller_reaches_goal() {
        let r = evaluate(&mut ScriptedController, &ScenarioConfig::default(), 5, 3).unwrap();
        assert_eq!(r.successes, 5, "{:?}", r.results);
    }

    #[test]
    fn scripted_brakes_when_aligned() {
        let mut obs = [0.0; OBS_DIM];
        // goal straight ahead, payload straight ahead and nearer
        obs[0] = 0.5;
        obs[2] = 0.1;
        obs[5] = 1.0;
        obs[6] = 1.0;
        assert_eq!(ScriptedController::action_for(&obs), Action::Continuous([0.0, 0.0]));
    }
}
