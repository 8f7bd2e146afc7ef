//! Per-robot observations in the robot's own frame.
//!
//! Flattened layout (version [`OBS_LAYOUT_VERSION`], 31 components):
//!
//! | index  | component                                        |
//! |--------|--------------------------------------------------|
//! | 0      | robot→goal distance / arena diagonal, in [0, 1]  |
//! | 1      | robot→goal bearing / pi, in [-1, 1)              |
//! | 2      | robot→payload distance / arena diagonal          |
//! | 3      | robot→payload bearing / pi                       |
//! | 4      | payload→goal distance / arena diagonal           |
//! | 5      | left wheel velocity / 10 cm/s                    |
//! | 6      | right wheel velocity / 10 cm/s                   |
//! | 7..31  | 24 proximity readings, ray k at heading + k·15°  |

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::sim::{Obstacle, WorldState, MAX_WHEEL_SPEED};

pub const PROXIMITY_RAYS: usize = 24;
pub const OBS_DIM: usize = 7 + PROXIMITY_RAYS;
/// Bumped whenever the flattened order or normalization changes.
pub const OBS_LAYOUT_VERSION: u16 = 1;
/// Proximity sensing range in meters, measured from the robot body surface.
pub const SENSING_RANGE: f64 = 2.0;
/// Decay rate chosen so that a reading at the range edge is 0.01.
pub const PROXIMITY_DECAY: f64 = 2.302_585_092_994_046; // ln(100) / 2

const INSIDE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub rg_distance: f64,
    pub rg_angle: f64,
    pub rc_distance: f64,
    pub rc_angle: f64,
    pub cg_distance: f64,
    pub wheel_left: f64,
    pub wheel_right: f64,
    pub proximity: [f64; PROXIMITY_RAYS],
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[..7].copy_from_slice(&[
            self.rg_distance,
            self.rg_angle,
            self.rc_distance,
            self.rc_angle,
            self.cg_distance,
            self.wheel_left,
            self.wheel_right,
        ]);
        out[7..].copy_from_slice(&self.proximity);
        out
    }

    pub fn from_array(v: &[f64; OBS_DIM]) -> Self {
        let mut proximity = [0.0; PROXIMITY_RAYS];
        proximity.copy_from_slice(&v[7..]);
        Self {
            rg_distance: v[0],
            rg_angle: v[1],
            rc_distance: v[2],
            rc_angle: v[3],
            cg_distance: v[4],
            wheel_left: v[5],
            wheel_right: v[6],
            proximity,
        }
    }

    pub fn mean_proximity(&self) -> f64 {
        self.proximity.iter().sum::<f64>() / PROXIMITY_RAYS as f64
    }
}

/// Sensor response for an obstacle `distance` meters from the body surface.
pub fn proximity_reading(distance: f64) -> f64 {
    if distance >= SENSING_RANGE {
        0.0
    } else {
        (-PROXIMITY_DECAY * distance.max(0.0)).exp()
    }
}

/// The 24 proximity readings of robot `robot_index`.
pub fn sense_proximity(world: &WorldState, robot_index: usize) -> Result<[f64; PROXIMITY_RAYS]> {
    let robot = active_robot(world, robot_index)?;
    let origin = robot.position;
    let body = world.body.robot_radius;
    let max_t = SENSING_RANGE + body;
    let mut readings = [0.0; PROXIMITY_RAYS];
    for (k, reading) in readings.iter_mut().enumerate() {
        let dir = Vec2::from_angle(robot.base_heading + k as f64 * (TAU / PROXIMITY_RAYS as f64));
        let hit = cast_ray(world, robot_index, origin, dir, max_t);
        if let Some(t) = hit {
            *reading = proximity_reading((t - body).max(0.0));
        }
    }
    Ok(readings)
}

/// Builds the full normalized observation for robot `robot_index`.
pub fn build_observation(world: &WorldState, robot_index: usize) -> Result<Observation> {
    let robot = active_robot(world, robot_index)?;
    let diag = world.arena_diagonal();
    let heading = robot.base_heading;
    let center = world.payload_pose.position;

    let rg = world.goal - robot.position;
    let rc = center - robot.position;
    let cg = world.goal - center;
    Ok(Observation {
        rg_distance: (rg.norm() / diag).clamp(0.0, 1.0),
        rg_angle: local_bearing(rg, heading),
        rc_distance: (rc.norm() / diag).clamp(0.0, 1.0),
        rc_angle: local_bearing(rc, heading),
        cg_distance: (cg.norm() / diag).clamp(0.0, 1.0),
        wheel_left: robot.wheel_velocity_left / MAX_WHEEL_SPEED,
        wheel_right: robot.wheel_velocity_right / MAX_WHEEL_SPEED,
        proximity: sense_proximity(world, robot_index)?,
    })
}

fn local_bearing(v: Vec2, heading: f64) -> f64 {
    if v == Vec2::ZERO {
        return 0.0;
    }
    wrap_angle(v.angle() - heading) / PI
}

fn active_robot(world: &WorldState, index: usize) -> Result<&crate::sim::RobotState> {
    match world.robots.get(index) {
        Some(r) if r.is_active() => Ok(r),
        Some(_) => Err(Error::Usage(format!("robot {index} has failed and cannot sense"))),
        None => Err(Error::Usage(format!("robot index {index} out of range"))),
    }
}

/// Nearest hit distance along the ray, if any within `max_t`.
fn cast_ray(world: &WorldState, self_index: usize, origin: Vec2, dir: Vec2, max_t: f64) -> Option<f64> {
    let mut best = ray_box_exit(origin, dir, world.arena_half_extent);
    let mut consider = |t: Option<f64>| {
        if let Some(t) = t {
            if best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    };
    for o in &world.obstacles {
        consider(match *o {
            Obstacle::Cylinder { center, radius } => ray_circle(origin, dir, center, radius),
            Obstacle::WallSegment {
                start,
                end,
                thickness,
            } => ray_capsule(origin, dir, start, end, 0.5 * thickness),
        });
    }
    if world.payload_radius > 0.0 {
        consider(ray_circle(origin, dir, world.payload_pose.position, world.payload_radius));
    }
    for (j, other) in world.robots.iter().enumerate() {
        if j != self_index && other.is_active() {
            consider(ray_circle(origin, dir, other.position, world.body.robot_radius));
        }
    }
    best.filter(|&t| t < max_t)
}

/// Distance to the arena boundary from a point inside it.
fn ray_box_exit(origin: Vec2, dir: Vec2, half: f64) -> Option<f64> {
    let axis = |o: f64, d: f64| {
        if d > 0.0 {
            (half - o) / d
        } else if d < 0.0 {
            (-half - o) / d
        } else {
            f64::INFINITY
        }
    };
    let t = axis(origin.x, dir.x).min(axis(origin.y, dir.y));
    (t.is_finite() && t >= 0.0).then_some(t)
}

/// Ray against a disc. A ray starting inside the disc reports a hit at 0 only
/// when it points toward the disc center.
pub(crate) fn ray_circle(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    if oc.norm() <= radius + INSIDE_TOLERANCE {
        return (dir.dot(center - origin) > 0.0).then_some(0.0);
    }
    let b = dir.dot(oc);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

/// Ray against a segment inflated by `radius`.
pub(crate) fn ray_capsule(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2, radius: f64) -> Option<f64> {
    let core = crate::sim::closest_on_segment(origin, a, b);
    if (origin - core).norm() <= radius + INSIDE_TOLERANCE {
        let inward = core - origin;
        return (inward == Vec2::ZERO || dir.dot(inward) > 0.0).then_some(0.0);
    }
    let mut best: Option<f64> = None;
    let mut take = |t: Option<f64>| {
        if let Some(t) = t {
            if best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    };
    take(ray_circle(origin, dir, a, radius));
    take(ray_circle(origin, dir, b, radius));
    if let Some(n) = (b - a).perp().normalized() {
        take(ray_segment(origin, dir, a + n * radius, b + n * radius));
        take(ray_segment(origin, dir, a - n * radius, b - n * radius));
    }
    best
}

fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let e = b - a;
    let denom = dir.cross(e);
    if denom == 0.0 {
        return None;
    }
    let ao = a - origin;
    let t = ao.cross(e) / denom;
    let s = ao.cross(dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}
