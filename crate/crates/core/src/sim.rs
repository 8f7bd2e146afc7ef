//! Quasi-static kinematics of a payload carried by gripping robots.
//!
//! Every attached robot pushes the payload along its own base heading with the
//! mean of its two wheel speeds. The payload translates with the average of those
//! pushes and spins with their average tangential component. There is no mass,
//! inertia or friction: velocities are composed and integrated directly.
//!
//! Contact with obstacles and the arena boundary removes the inward normal
//! velocity component, so the aggregate slides along whatever it touches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose, Vec2};

/// Wheel speed limit in cm/s. The admissible range is open, so speeds are
/// clamped to `MAX_WHEEL_SPEED - WHEEL_CLAMP_MARGIN`.
pub const MAX_WHEEL_SPEED: f64 = 10.0;
pub const WHEEL_CLAMP_MARGIN: f64 = 1e-6;
/// Largest per-tick wheel velocity change in cm/s.
pub const MAX_WHEEL_DELTA: f64 = 0.1;
/// Simulator tick in seconds (10 Hz).
pub const DEFAULT_DT: f64 = 0.1;

const CM_PER_M: f64 = 100.0;
const SLIDE_PASSES: usize = 4;
const DEPENETRATION_PASSES: usize = 8;

/// Physical dimensions shared by every robot in a world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Robot body radius in meters.
    pub robot_radius: f64,
    /// Distance between the two wheels in meters.
    pub axle_length: f64,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            robot_radius: 0.17,
            axle_length: 0.14,
        }
    }
}

/// Wheel velocity increments for one robot, in cm/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelDelta {
    pub left: f64,
    pub right: f64,
}

impl WheelDelta {
    pub const fn new(left: f64, right: f64) -> Self {
        Self { left, right }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    /// Angle of the grip point on the payload rim, relative to the payload heading.
    pub attachment_angle: f64,
    /// World-frame heading of the drive base. The gripper turret lets the base
    /// turn independently of the payload.
    pub base_heading: f64,
    /// cm/s
    pub wheel_velocity_left: f64,
    /// cm/s
    pub wheel_velocity_right: f64,
    pub attached: bool,
    pub failed: bool,
    /// Body center, kept on the payload rim while attached.
    pub position: Vec2,
}

impl RobotState {
    pub fn is_active(&self) -> bool {
        !self.failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Obstacle {
    Cylinder {
        center: Vec2,
        radius: f64,
    },
    /// A straight wall of the given thickness; its footprint is the segment
    /// swept by a disc of radius `thickness / 2`.
    WallSegment {
        start: Vec2,
        end: Vec2,
        thickness: f64,
    },
}

impl Obstacle {
    /// Closest point of the obstacle's core (center or segment) to `p`.
    pub fn core_point(&self, p: Vec2) -> Vec2 {
        match *self {
            Obstacle::Cylinder { center, .. } => center,
            Obstacle::WallSegment { start, end, .. } => closest_on_segment(p, start, end),
        }
    }

    /// Radius by which the core is inflated to form the obstacle footprint.
    pub fn inflation(&self) -> f64 {
        match *self {
            Obstacle::Cylinder { radius, .. } => radius,
            Obstacle::WallSegment { thickness, .. } => 0.5 * thickness,
        }
    }

    /// Signed gap between the obstacle and a disc of radius `radius` at `p`,
    /// together with the outward unit normal pointing from the obstacle to `p`.
    pub fn separation(&self, p: Vec2, radius: f64) -> (f64, Vec2) {
        let core = self.core_point(p);
        let offset = p - core;
        let dist = offset.norm();
        let normal = offset.normalized().unwrap_or_else(|| match *self {
            Obstacle::Cylinder { .. } => Vec2::new(1.0, 0.0),
            Obstacle::WallSegment { start, end, .. } => {
                (end - start).perp().normalized().unwrap_or(Vec2::new(1.0, 0.0))
            }
        });
        (dist - self.inflation() - radius, normal)
    }

    pub fn rotated(&self, angle: f64) -> Obstacle {
        match *self {
            Obstacle::Cylinder { center, radius } => Obstacle::Cylinder {
                center: center.rotate(angle),
                radius,
            },
            Obstacle::WallSegment {
                start,
                end,
                thickness,
            } => Obstacle::WallSegment {
                start: start.rotate(angle),
                end: end.rotate(angle),
                thickness,
            },
        }
    }
}

pub(crate) fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Complete simulation state of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub payload_pose: Pose,
    /// A radius of zero means the payload has no body (used by sensing fixtures).
    pub payload_radius: f64,
    pub robots: Vec<RobotState>,
    pub obstacles: Vec<Obstacle>,
    pub goal: Vec2,
    pub arena_half_extent: f64,
    pub tick: u64,
    pub body: BodyParams,
    /// Payload linear velocity (m/s) applied during the last step, after contact.
    pub payload_velocity: Vec2,
    /// Payload angular velocity (rad/s) applied during the last step.
    pub payload_angular_velocity: f64,
}

impl WorldState {
    /// Builds a world with `robot_count` robots gripping the payload at uniform
    /// angular spacing. Each robot's base initially faces the payload center.
    pub fn new(
        payload_pose: Pose,
        payload_radius: f64,
        robot_count: usize,
        obstacles: Vec<Obstacle>,
        goal: Vec2,
        arena_half_extent: f64,
        body: BodyParams,
    ) -> Self {
        let spacing = std::f64::consts::TAU / robot_count.max(1) as f64;
        let robots = (0..robot_count)
            .map(|k| {
                let attachment_angle = wrap_angle(k as f64 * spacing);
                let rim_angle = payload_pose.heading + attachment_angle;
                RobotState {
                    attachment_angle,
                    base_heading: wrap_angle(rim_angle + std::f64::consts::PI),
                    wheel_velocity_left: 0.0,
                    wheel_velocity_right: 0.0,
                    attached: true,
                    failed: false,
                    position: payload_pose.position + Vec2::from_angle(rim_angle) * payload_radius,
                }
            })
            .collect();
        Self {
            payload_pose,
            payload_radius,
            robots,
            obstacles,
            goal,
            arena_half_extent,
            tick: 0,
            body,
            payload_velocity: Vec2::ZERO,
            payload_angular_velocity: 0.0,
        }
    }

    /// Indices of robots that have not failed, in ascending order.
    pub fn active_robots(&self) -> Vec<usize> {
        (0..self.robots.len())
            .filter(|&i| self.robots[i].is_active())
            .collect()
    }

    /// Radius of the disc used for payload collisions: the payload plus the
    /// robot bodies hanging off its rim.
    pub fn aggregate_radius(&self) -> f64 {
        self.payload_radius + self.body.robot_radius
    }

    /// Where an attached robot sits for the current payload pose.
    pub fn rim_point(&self, attachment_angle: f64) -> Vec2 {
        self.payload_pose.position
            + Vec2::from_angle(self.payload_pose.heading + attachment_angle) * self.payload_radius
    }

    pub fn arena_diagonal(&self) -> f64 {
        2.0 * std::f64::consts::SQRT_2 * self.arena_half_extent
    }

    /// Adds each robot's wheel delta (cm/s) and clamps to the open speed range.
    /// `deltas` holds one entry per non-failed robot in index order.
    pub fn apply_actions(&mut self, deltas: &[WheelDelta]) -> Result<()> {
        let active = self.active_robots();
        if deltas.len() != active.len() {
            return Err(Error::Config(format!(
                "expected {} wheel deltas (one per active robot), got {}",
                active.len(),
                deltas.len()
            )));
        }
        for d in deltas {
            let ok = |v: f64| v.is_finite() && v.abs() <= MAX_WHEEL_DELTA + 1e-12;
            if !ok(d.left) || !ok(d.right) {
                return Err(Error::Config(format!(
                    "wheel delta ({}, {}) outside [-{MAX_WHEEL_DELTA}, {MAX_WHEEL_DELTA}] cm/s",
                    d.left, d.right
                )));
            }
        }
        for (&i, d) in active.iter().zip(deltas) {
            let robot = &mut self.robots[i];
            robot.wheel_velocity_left = clamp_wheel(robot.wheel_velocity_left + d.left);
            robot.wheel_velocity_right = clamp_wheel(robot.wheel_velocity_right + d.right);
        }
        Ok(())
    }

    /// Advances the world by `dt` seconds.
    pub fn step(&mut self, dt: f64) {
        debug_assert!(dt > 0.0);
        let mut push_sum = Vec2::ZERO;
        let mut tangential_sum = 0.0;
        let mut pushers = 0usize;
        for robot in self.robots.iter_mut().filter(|r| r.attached && !r.failed) {
            let left = robot.wheel_velocity_left / CM_PER_M;
            let right = robot.wheel_velocity_right / CM_PER_M;
            let push = Vec2::from_angle(robot.base_heading) * (0.5 * (left + right));
            let rim_dir = Vec2::from_angle(self.payload_pose.heading + robot.attachment_angle);
            push_sum += push;
            tangential_sum += push.dot(rim_dir.perp());
            pushers += 1;
            robot.base_heading =
                wrap_angle(robot.base_heading + (right - left) / self.body.axle_length * dt);
        }

        let (mut velocity, angular) = if pushers == 0 {
            (Vec2::ZERO, 0.0)
        } else {
            let n = pushers as f64;
            let angular = if self.payload_radius > 0.0 {
                tangential_sum / n / self.payload_radius
            } else {
                0.0
            };
            (push_sum * (1.0 / n), angular)
        };

        let start = self.payload_pose.position;
        let radius = self.aggregate_radius();
        for _ in 0..SLIDE_PASSES {
            let mut changed = false;
            for (sep, normal) in self.contacts(start, radius) {
                // never approach a surface by more than the current gap
                let min_normal_speed = -sep.max(0.0) / dt;
                let vn = velocity.dot(normal);
                if vn < min_normal_speed {
                    velocity += normal * (min_normal_speed - vn);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut center = start + velocity * dt;
        for _ in 0..DEPENETRATION_PASSES {
            let mut penetrating = false;
            for (sep, normal) in self.contacts(center, radius) {
                if sep < 0.0 {
                    center += normal * (-sep);
                    penetrating = true;
                }
            }
            if !penetrating {
                break;
            }
        }
        if self.clearance_at(center) < -1e-12 {
            center = start;
        }

        self.payload_pose.position = center;
        self.payload_pose.heading = wrap_angle(self.payload_pose.heading + angular * dt);
        self.payload_velocity = velocity;
        self.payload_angular_velocity = angular;
        for i in 0..self.robots.len() {
            if self.robots[i].attached {
                self.robots[i].position = self.rim_point(self.robots[i].attachment_angle);
            }
        }
        self.tick += 1;
    }

    /// Detaches robot `index` permanently; it stops pushing and is no longer sensed.
    pub fn fail_robot(&mut self, index: usize) -> Result<()> {
        let robot = self
            .robots
            .get_mut(index)
            .ok_or_else(|| Error::Config(format!("robot index {index} out of range")))?;
        if robot.failed {
            return Err(Error::Config(format!("robot {index} has already failed")));
        }
        robot.failed = true;
        robot.attached = false;
        Ok(())
    }

    pub fn goal_reached(&self, threshold: f64) -> bool {
        (self.payload_pose.position - self.goal).norm() <= threshold
    }

    /// Smallest signed gap between the aggregate disc and any obstacle or wall.
    pub fn payload_clearance(&self) -> f64 {
        self.clearance_at(self.payload_pose.position)
    }

    fn clearance_at(&self, center: Vec2) -> f64 {
        self.contacts(center, self.aggregate_radius())
            .map(|(sep, _)| sep)
            .fold(f64::INFINITY, f64::min)
    }

    /// Signed separation and outward normal for every arena wall and obstacle.
    fn contacts(&self, center: Vec2, radius: f64) -> impl Iterator<Item = (f64, Vec2)> + '_ {
        let h = self.arena_half_extent;
        let walls = [
            (center.x + h - radius, Vec2::new(1.0, 0.0)),
            (h - center.x - radius, Vec2::new(-1.0, 0.0)),
            (center.y + h - radius, Vec2::new(0.0, 1.0)),
            (h - center.y - radius, Vec2::new(0.0, -1.0)),
        ];
        walls
            .into_iter()
            .chain(self.obstacles.iter().map(move |o| o.separation(center, radius)))
    }
}

fn clamp_wheel(v: f64) -> f64 {
    let limit = MAX_WHEEL_SPEED - WHEEL_CLAMP_MARGIN;
    v.clamp(-limit, limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_world(robots: usize) -> WorldState {
        WorldState::new(
            Pose::new(Vec2::ZERO, 0.0),
            0.5,
            robots,
            Vec::new(),
            Vec2::new(5.0, 0.0),
            10.0,
            BodyParams::default(),
        )
    }

    #[test]
    fn clamp_just_below_limit() {
        let mut w = open_world(1);
        w.robots[0].wheel_velocity_left = 9.95;
        w.apply_actions(&[WheelDelta::new(0.1, 0.0)]).unwrap();
        assert_eq!(w.robots[0].wheel_velocity_left, 10.0 - 1e-6);
        assert_eq!(w.robots[0].wheel_velocity_right, 0.0);
    }

    #[test]
    fn zero_delta_is_identity() {
        let mut w = open_world(1);
        w.apply_actions(&[WheelDelta::new(0.0, 0.0)]).unwrap();
        assert_eq!(w.robots[0].wheel_velocity_left, 0.0);
        assert_eq!(w.robots[0].wheel_velocity_right, 0.0);
    }

    #[test]
    fn lower_clamp_pins_left_wheel() {
        let mut w = open_world(1);
        let floor = -10.0 + 1e-6;
        w.robots[0].wheel_velocity_left = floor;
        w.robots[0].wheel_velocity_right = 5.0;
        w.apply_actions(&[WheelDelta::new(-0.1, 0.1)]).unwrap();
        assert_eq!(w.robots[0].wheel_velocity_left, floor);
        assert!((w.robots[0].wheel_velocity_right - 5.1).abs() < 1e-12);
    }

    #[test]
    fn delta_count_mismatch_is_rejected() {
        let mut w = open_world(3);
        assert!(matches!(
            w.apply_actions(&[WheelDelta::default(); 2]),
            Err(Error::Config(_))
        ));
        w.fail_robot(1).unwrap();
        assert!(w.apply_actions(&[WheelDelta::default(); 2]).is_ok());
    }

    #[test]
    fn failed_robot_wheels_frozen() {
        let mut w = open_world(2);
        w.robots[0].wheel_velocity_left = 3.0;
        w.fail_robot(0).unwrap();
        w.apply_actions(&[WheelDelta::new(0.1, 0.1)]).unwrap();
        assert_eq!(w.robots[0].wheel_velocity_left, 3.0);
        assert_eq!(w.robots[1].wheel_velocity_left, 0.1);
    }

    #[test]
    fn aligned_full_throttle_moves_straight() {
        let mut w = open_world(4);
        for r in &mut w.robots {
            r.base_heading = 0.0;
            r.wheel_velocity_left = 10.0;
            r.wheel_velocity_right = 10.0;
        }
        w.step(DEFAULT_DT);
        assert!((w.payload_velocity.x - 0.1).abs() < 1e-12);
        assert!(w.payload_velocity.y.abs() < 1e-15);
        assert!(w.payload_angular_velocity.abs() < 1e-15);
        assert_eq!(w.tick, 1);
    }

    #[test]
    fn all_failed_is_static() {
        let mut w = open_world(3);
        for r in &mut w.robots {
            r.wheel_velocity_left = 5.0;
            r.wheel_velocity_right = 5.0;
        }
        for i in 0..3 {
            w.fail_robot(i).unwrap();
        }
        let before = w.payload_pose;
        for _ in 0..10 {
            w.step(DEFAULT_DT);
        }
        assert_eq!(w.payload_pose, before);
        assert_eq!(w.payload_velocity, Vec2::ZERO);
    }

    #[test]
    fn failed_robot_leaves_the_average() {
        let mut w = open_world(4);
        for r in &mut w.robots {
            r.base_heading = 0.0;
            r.wheel_velocity_left = 6.0;
            r.wheel_velocity_right = 6.0;
        }
        w.robots[2].base_heading = std::f64::consts::FRAC_PI_2;
        w.fail_robot(2).unwrap();
        w.step(DEFAULT_DT);
        // three remaining pushes along +x
        assert!((w.payload_velocity.x - 0.06).abs() < 1e-12);
        assert!(w.payload_velocity.y.abs() < 1e-12);
    }

    #[test]
    fn double_failure_and_bad_index_are_errors() {
        let mut w = open_world(4);
        w.fail_robot(2).unwrap();
        assert!(w.fail_robot(2).is_err());
        assert!(w.fail_robot(9).is_err());
    }

    #[test]
    fn slides_along_wall() {
        let mut w = open_world(1);
        let r = w.aggregate_radius();
        // wall face exactly touching the aggregate on the +x side
        w.obstacles.push(Obstacle::WallSegment {
            start: Vec2::new(r + 0.1, -3.0),
            end: Vec2::new(r + 0.1, 3.0),
            thickness: 0.2,
        });
        w.robots[0].base_heading = 0.5;
        w.robots[0].wheel_velocity_left = 8.0;
        w.robots[0].wheel_velocity_right = 8.0;
        w.step(DEFAULT_DT);
        assert!(w.payload_velocity.x.abs() < 1e-12);
        assert!((w.payload_velocity.y - 0.08 * 0.5f64.sin()).abs() < 1e-12);
        assert!(w.payload_clearance() >= -1e-9);
    }

    #[test]
    fn goal_threshold_is_closed() {
        let mut w = open_world(1);
        w.goal = Vec2::new(0.5, 0.0);
        assert!(w.goal_reached(0.5));
        w.goal = Vec2::new(0.5 + 1e-6, 0.0);
        assert!(!w.goal_reached(0.5));
        w.goal = Vec2::ZERO;
        assert!(w.goal_reached(0.5));
    }

    #[test]
    fn arena_wall_stops_payload() {
        let mut w = open_world(2);
        w.payload_pose.position = Vec2::new(9.2, 0.0);
        for r in &mut w.robots {
            r.base_heading = 0.0;
            r.wheel_velocity_left = 9.0;
            r.wheel_velocity_right = 9.0;
        }
        for _ in 0..200 {
            w.step(DEFAULT_DT);
            assert!(w.payload_clearance() >= -1e-9);
        }
        assert!((w.payload_pose.position.x - (10.0 - w.aggregate_radius())).abs() < 1e-9);
    }
}
