//! Episodes: scenario generation, reward, termination and the gate curriculum.
//!
//! The arena is split along x into three bands. The payload spawns in the left
//! band, the goal in the right band and obstacles in the middle band.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec2};
use crate::rl::{Action, Experience};
use crate::sensing::{build_observation, Observation, OBS_DIM};
use crate::sim::{BodyParams, Obstacle, WheelDelta, WorldState, DEFAULT_DT};

/// Below this, a displacement or goal direction has no meaningful heading.
pub const DEGENERATE_LENGTH: f64 = 1e-6;
const PLACEMENT_ATTEMPTS: usize = 1000;
const SPAWN_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub robot_count: usize,
    pub cylinder_obstacle_count: usize,
    pub gate_enabled: bool,
    /// Gate opening in meters (the curriculum overrides this during training).
    pub gate_opening: f64,
    pub max_failure_fraction: f64,
    /// Episode length limit in ticks.
    pub time_limit: u64,
    pub arena_half_extent: f64,
    pub seed: u64,
    pub payload_radius: f64,
    pub robot_radius: f64,
    pub axle_length: f64,
    pub goal_threshold: f64,
    /// Radius of cylinder obstacles; defaults to the payload radius.
    pub obstacle_radius: f64,
    pub gate_thickness: f64,
    /// Fraction of the arena width used by each of the spawn and goal bands.
    pub spawn_fraction: f64,
    pub dt: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            robot_count: 4,
            cylinder_obstacle_count: 0,
            gate_enabled: false,
            gate_opening: 4.0,
            max_failure_fraction: 0.0,
            time_limit: 4500,
            arena_half_extent: 10.0,
            seed: 0,
            payload_radius: 0.5,
            robot_radius: 0.17,
            axle_length: 0.14,
            goal_threshold: 0.5,
            obstacle_radius: 0.5,
            gate_thickness: 0.2,
            spawn_fraction: 1.0 / 3.0,
            dt: DEFAULT_DT,
        }
    }
}

impl ScenarioConfig {
    /// Smallest admissible gate opening: four payload diameters.
    pub fn min_gate_opening(&self) -> f64 {
        4.0 * 2.0 * self.payload_radius
    }

    pub fn arena_width(&self) -> f64 {
        2.0 * self.arena_half_extent
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: &str| Err(Error::Config(format!("scenario.{field}: {why}")));
        if self.robot_count == 0 {
            return fail("robot_count", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return fail("max_failure_fraction", "must lie in [0, 1]");
        }
        if self.time_limit == 0 {
            return fail("time_limit", "must be positive");
        }
        for (name, v) in [
            ("arena_half_extent", self.arena_half_extent),
            ("payload_radius", self.payload_radius),
            ("robot_radius", self.robot_radius),
            ("axle_length", self.axle_length),
            ("goal_threshold", self.goal_threshold),
            ("obstacle_radius", self.obstacle_radius),
            ("gate_thickness", self.gate_thickness),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(name, "must be a positive finite number");
            }
        }
        if !(self.spawn_fraction > 0.0 && self.spawn_fraction < 0.5) {
            return fail("spawn_fraction", "must lie in (0, 0.5)");
        }
        if self.gate_enabled
            && !(self.gate_opening >= self.min_gate_opening() - 1e-12
                && self.gate_opening <= self.arena_width() + 1e-12)
        {
            return fail(
                "gate_opening",
                "must lie between four payload diameters and the arena width",
            );
        }
        Ok(())
    }

    fn body(&self) -> BodyParams {
        BodyParams {
            robot_radius: self.robot_radius,
            axle_length: self.axle_length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    Running,
    Success,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledFailure {
    pub robot: usize,
    pub tick: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub world: WorldState,
    pub failure_schedule: Vec<ScheduledFailure>,
    /// Running reward sum per robot.
    pub cumulative_rewards: Vec<f64>,
    pub terminal: Terminal,
    time_limit: u64,
    goal_threshold: f64,
    dt: f64,
    observations: Vec<(usize, Observation)>,
}

/// Samples a fresh episode from the scenario distribution.
pub fn generate_scenario<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<EpisodeState> {
    config.validate()?;
    let h = config.arena_half_extent;
    let band = 2.0 * h * config.spawn_fraction;
    let agg = config.payload_radius + config.robot_radius;
    let edge = agg + SPAWN_MARGIN;
    if band < 2.0 * edge || h < edge + SPAWN_MARGIN {
        return Err(Error::Scenario("arena too small for the payload".into()));
    }

    for _ in 0..PLACEMENT_ATTEMPTS {
        let payload = Vec2::new(
            rng.random_range(-h + edge..=-h + band),
            rng.random_range(-h + edge..=h - edge),
        );
        let heading = rng.random_range(-PI..PI);
        let goal = Vec2::new(
            rng.random_range(h - band..=h - edge),
            rng.random_range(-h + edge..=h - edge),
        );

        let mut obstacles = Vec::new();
        let (mid_lo, mid_hi) = (-h + band, h - band);
        for _ in 0..config.cylinder_obstacle_count {
            let r = config.obstacle_radius;
            obstacles.push(Obstacle::Cylinder {
                center: Vec2::new(rng.random_range(mid_lo..=mid_hi), rng.random_range(-h + r..=h - r)),
                radius: r,
            });
        }
        if config.gate_enabled {
            obstacles.extend(gate_segments(config, rng));
        }

        let world = WorldState::new(
            Pose::new(payload, heading),
            config.payload_radius,
            config.robot_count,
            obstacles,
            goal,
            h,
            config.body(),
        );
        let goal_clear = world
            .obstacles
            .iter()
            .all(|o| o.separation(goal, agg).0 >= SPAWN_MARGIN);
        if world.payload_clearance() < SPAWN_MARGIN || !goal_clear {
            continue;
        }

        let max_failures = (config.max_failure_fraction * config.robot_count as f64 + 1e-9).floor() as usize;
        let failures = rng.random_range(0..=max_failures.min(config.robot_count));
        let mut robots: Vec<usize> = sample(rng, config.robot_count, failures).into_vec();
        robots.sort_unstable();
        let failure_schedule = robots
            .into_iter()
            .map(|robot| ScheduledFailure {
                robot,
                tick: rng.random_range(0..config.time_limit),
            })
            .collect();

        let mut episode = EpisodeState {
            world,
            failure_schedule,
            cumulative_rewards: vec![0.0; config.robot_count],
            terminal: Terminal::Running,
            time_limit: config.time_limit,
            goal_threshold: config.goal_threshold,
            dt: config.dt,
            observations: Vec::new(),
        };
        episode.apply_due_failures()?;
        episode.refresh_observations()?;
        return Ok(episode);
    }
    Err(Error::Scenario(format!(
        "no valid placement after {PLACEMENT_ATTEMPTS} attempts"
    )))
}

/// Two wall segments at a random x in the middle band, leaving an opening of
/// `config.gate_opening` centered at a random y. Zero-length pieces are dropped.
fn gate_segments<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Vec<Obstacle> {
    let h = config.arena_half_extent;
    let band = 2.0 * h * config.spawn_fraction;
    let t = config.gate_thickness;
    let x = rng.random_range(-h + band + t..=h - band - t);
    let opening = config.gate_opening.min(2.0 * h);
    let half = 0.5 * opening;
    let center = if half >= h { 0.0 } else { rng.random_range(-h + half..=h - half) };
    let mut walls = Vec::with_capacity(2);
    let (lo, hi) = (center - half, center + half);
    if lo > -h {
        walls.push(Obstacle::WallSegment {
            start: Vec2::new(x, -h),
            end: Vec2::new(x, lo),
            thickness: t,
        });
    }
    if hi < h {
        walls.push(Obstacle::WallSegment {
            start: Vec2::new(x, hi),
            end: Vec2::new(x, h),
            thickness: t,
        });
    }
    walls
}

/// Per-robot reward: a constant time penalty, the cosine between the payload
/// displacement and the payload→goal direction, and the robot's mean proximity.
pub fn reward(prev_payload_center: Vec2, payload_center: Vec2, cg_direction: Vec2, proximities: &[f64]) -> f64 {
    let displacement = payload_center - prev_payload_center;
    let (d, g) = (displacement.norm(), cg_direction.norm());
    let cosine = if d < DEGENERATE_LENGTH || g < DEGENERATE_LENGTH {
        0.0
    } else {
        (displacement.dot(cg_direction) / (d * g)).clamp(-1.0, 1.0)
    };
    let mean_proximity = if proximities.is_empty() {
        0.0
    } else {
        proximities.iter().sum::<f64>() / proximities.len() as f64
    };
    -2.0 + cosine - mean_proximity
}

impl EpisodeState {
    pub fn is_running(&self) -> bool {
        self.terminal == Terminal::Running
    }

    pub fn tick(&self) -> u64 {
        self.world.tick
    }

    pub fn time_limit(&self) -> u64 {
        self.time_limit
    }

    pub fn goal_threshold(&self) -> f64 {
        self.goal_threshold
    }

    /// Current observations of the robots expected to act next, in index order.
    pub fn observations(&self) -> &[(usize, Observation)] {
        &self.observations
    }

    /// Mean of the per-robot reward sums.
    pub fn mean_return(&self) -> f64 {
        self.cumulative_rewards.iter().sum::<f64>() / self.cumulative_rewards.len().max(1) as f64
    }

    /// Advances the episode by one tick. `actions` holds one entry per robot in
    /// [`EpisodeState::observations`], in the same order. Returns one experience
    /// per acting robot.
    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<Experience>> {
        if !self.is_running() {
            return Err(Error::Usage("episode has already terminated".into()));
        }
        if actions.len() != self.observations.len() {
            return Err(Error::Config(format!(
                "expected {} actions, got {}",
                self.observations.len(),
                actions.len()
            )));
        }
        let deltas = actions
            .iter()
            .map(|a| a.wheel_delta())
            .collect::<Result<Vec<WheelDelta>>>()?;

        let prev_center = self.world.payload_pose.position;
        let cg_direction = self.world.goal - prev_center;
        self.world.apply_actions(&deltas)?;
        self.world.step(self.dt);

        if self.world.goal_reached(self.goal_threshold) {
            self.terminal = Terminal::Success;
        } else if self.world.tick >= self.time_limit {
            self.terminal = Terminal::Timeout;
        }
        let done = !self.is_running();

        let center = self.world.payload_pose.position;
        let previous = std::mem::take(&mut self.observations);
        let mut experiences = Vec::with_capacity(previous.len());
        let mut next = Vec::with_capacity(previous.len());
        for ((robot, obs), action) in previous.into_iter().zip(actions) {
            let next_obs = build_observation(&self.world, robot)?;
            let r = reward(prev_center, center, cg_direction, &next_obs.proximity);
            self.cumulative_rewards[robot] += r;
            experiences.push(Experience {
                observation: obs.to_array(),
                action: *action,
                reward: r,
                next_observation: next_obs.to_array(),
                terminal: done,
            });
            next.push((robot, next_obs));
        }
        self.observations = next;

        if self.is_running() {
            let failed = self.apply_due_failures()?;
            if failed {
                self.observations.retain(|(i, _)| !self.world.robots[*i].failed);
            }
        }
        Ok(experiences)
    }

    /// Fails every robot scheduled for the current tick. Returns whether any did.
    fn apply_due_failures(&mut self) -> Result<bool> {
        let tick = self.world.tick;
        let mut any = false;
        for f in &self.failure_schedule {
            if f.tick == tick && !self.world.robots[f.robot].failed {
                self.world.fail_robot(f.robot)?;
                any = true;
            }
        }
        Ok(any)
    }

    fn refresh_observations(&mut self) -> Result<()> {
        self.observations = self
            .world
            .active_robots()
            .into_iter()
            .map(|i| build_observation(&self.world, i).map(|o| (i, o)))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Observation array of each acting robot, for batched action selection.
    pub fn observation_arrays(&self) -> Vec<[f64; OBS_DIM]> {
        self.observations.iter().map(|(_, o)| o.to_array()).collect()
    }
}

/// Linear shrinking of the gate opening from the full arena width down to the
/// minimum opening, reached at `completion_episode` and held afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub start_opening: f64,
    pub min_opening: f64,
    pub completion_episode: u64,
}

impl Curriculum {
    pub fn for_scenario(config: &ScenarioConfig, completion_episode: u64) -> Self {
        Self {
            start_opening: config.arena_width(),
            min_opening: config.min_gate_opening(),
            completion_episode,
        }
    }

    pub fn opening(&self, episode: u64) -> f64 {
        if self.completion_episode == 0 || episode >= self.completion_episode {
            return self.min_opening;
        }
        let progress = episode as f64 / self.completion_episode as f64;
        self.start_opening + (self.min_opening - self.start_opening) * progress
    }
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TrajectoryRecord {
    Scenario {
        arena_half_extent: f64,
        payload_radius: f64,
        robot_radius: f64,
        goal: Vec2,
        goal_threshold: f64,
        obstacles: Vec<Obstacle>,
    },
    Tick {
        tick: u64,
        payload: Pose,
        robots: Vec<RobotPose>,
        /// Mean reward over the robots that acted this tick.
        reward: f64,
        terminal: Terminal,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub position: Vec2,
    pub heading: f64,
    pub failed: bool,
}

impl TrajectoryRecord {
    pub fn scenario(episode: &EpisodeState) -> Self {
        let w = &episode.world;
        TrajectoryRecord::Scenario {
            arena_half_extent: w.arena_half_extent,
            payload_radius: w.payload_radius,
            robot_radius: w.body.robot_radius,
            goal: w.goal,
            goal_threshold: episode.goal_threshold,
            obstacles: w.obstacles.clone(),
        }
    }

    pub fn tick(episode: &EpisodeState, experiences: &[Experience]) -> Self {
        let w = &episode.world;
        let reward = if experiences.is_empty() {
            0.0
        } else {
            experiences.iter().map(|e| e.reward).sum::<f64>() / experiences.len() as f64
        };
        TrajectoryRecord::Tick {
            tick: w.tick,
            payload: w.payload_pose,
            robots: w
                .robots
                .iter()
                .map(|r| RobotPose {
                    position: r.position,
                    heading: r.base_heading,
                    failed: r.failed,
                })
                .collect(),
            reward,
            terminal: episode.terminal,
        }
    }

    pub fn write_line<W: Write>(&self, out: &mut W) -> Result<()> {
        serde_json::to_writer(&mut *out, self).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}
