//! Independent reference implementations used as test oracles. Nothing here
//! calls the batched code paths it is compared against.

#![allow(dead_code)]

use agrl::geometry::Vec2;
use agrl::nn::{Activation, Dense, Network};
use agrl::rl::{Action, Batch, Experience};
use agrl::sensing::OBS_DIM;
use agrl::sim::{Obstacle, WorldState};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Plain nested-loop forward pass. Also returns the sign pattern of every
/// ReLU pre-activation, so callers can detect kink crossings.
pub fn scalar_forward(net: &Network, input: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut x = input.to_vec();
    let mut pattern = Vec::new();
    for layer in &net.layers {
        let (rows, cols) = layer.weights.dim();
        let mut y = vec![0.0; rows];
        for (o, out) in y.iter_mut().enumerate() {
            let mut z = layer.bias[o];
            for i in 0..cols {
                z += layer.weights[[o, i]] * x[i];
            }
            *out = match layer.activation {
                Activation::Identity => z,
                Activation::Relu => {
                    pattern.push(z > 0.0);
                    z.max(0.0)
                }
                Activation::Tanh => z.tanh(),
            };
        }
        x = y;
    }
    (x, pattern)
}

pub fn scalar_output(net: &Network, input: &[f64]) -> Vec<f64> {
    scalar_forward(net, input).0
}

/// A random network with the given widths, weights uniform in ±`scale`.
pub fn random_network<R: Rng>(widths: &[usize], hidden: Activation, output: Activation, scale: f64, rng: &mut R) -> Network {
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(l, w)| {
            let act = if l + 2 == widths.len() { output } else { hidden };
            let mut d = Dense::zeros(w[0], w[1], act);
            d.weights.mapv_inplace(|_| rng.random_range(-scale..scale));
            d.bias.mapv_inplace(|_| rng.random_range(-scale..scale));
            d
        })
        .collect();
    Network::new(layers).unwrap()
}

pub fn random_observation<R: Rng>(rng: &mut R) -> [f64; OBS_DIM] {
    std::array::from_fn(|_| rng.random_range(-1.0..1.0))
}

pub fn random_batch<R: Rng>(n: usize, continuous: bool, rng: &mut R) -> Batch {
    let experiences: Vec<Experience> = (0..n)
        .map(|_| Experience {
            observation: random_observation(rng),
            action: if continuous {
                Action::Continuous([rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)])
            } else {
                Action::Discrete(rng.random_range(0..9))
            },
            reward: rng.random_range(-4.0..-1.0),
            next_observation: random_observation(rng),
            terminal: rng.random_bool(0.3),
        })
        .collect();
    Batch::from_experiences(experiences.iter())
}

pub fn next_obs(batch: &Batch, i: usize) -> Vec<f64> {
    batch.next_observations.row(i).to_vec()
}

fn bellman(batch: &Batch, i: usize, gamma: f64, next: impl FnOnce() -> f64) -> f64 {
    if batch.terminals[i] {
        batch.rewards[i]
    } else {
        batch.rewards[i] + gamma * next()
    }
}

/// Index of the first maximum, by enumeration.
pub fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for a in 0..values.len() {
        if values[a] > values[best] {
            best = a;
        }
    }
    best
}

pub fn oracle_dqn(batch: &Batch, target: &Network, gamma: f64) -> Vec<f64> {
    (0..batch.len())
        .map(|i| {
            bellman(batch, i, gamma, || {
                let q = scalar_output(target, &next_obs(batch, i));
                let mut best = f64::NEG_INFINITY;
                for v in q {
                    if v > best {
                        best = v;
                    }
                }
                best
            })
        })
        .collect()
}

pub fn oracle_ddqn(batch: &Batch, online: &Network, target: &Network, gamma: f64) -> Vec<f64> {
    (0..batch.len())
        .map(|i| {
            bellman(batch, i, gamma, || {
                let s = next_obs(batch, i);
                let a = first_argmax(&scalar_output(online, &s));
                scalar_output(target, &s)[a]
            })
        })
        .collect()
}

fn critic_value(critic: &Network, s: &[f64], a: &[f64]) -> f64 {
    let mut input = s.to_vec();
    input.extend_from_slice(a);
    scalar_output(critic, &input)[0]
}

pub fn oracle_ddpg(batch: &Batch, actor: &Network, critic: &Network, gamma: f64) -> Vec<f64> {
    (0..batch.len())
        .map(|i| {
            bellman(batch, i, gamma, || {
                let s = next_obs(batch, i);
                critic_value(critic, &s, &scalar_output(actor, &s))
            })
        })
        .collect()
}

/// Smoothing noise is drawn sample by sample, component by component, as
/// clipped Gaussians; the noisy action is clamped to [-1, 1].
#[allow(clippy::too_many_arguments)]
pub fn oracle_td3<R: Rng>(
    batch: &Batch,
    actor: &Network,
    c1: &Network,
    c2: &Network,
    gamma: f64,
    sigma: f64,
    clip: f64,
    rng: &mut R,
) -> Vec<f64> {
    let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).unwrap());
    let mut out = Vec::new();
    for i in 0..batch.len() {
        let s = next_obs(batch, i);
        let mut a = scalar_output(actor, &s);
        if let Some(n) = &normal {
            for v in &mut a {
                *v = (*v + n.sample(rng).clamp(-clip, clip)).clamp(-1.0, 1.0);
            }
        }
        let q = critic_value(c1, &s, &a).min(critic_value(c2, &s, &a));
        out.push(bellman(batch, i, gamma, || q));
    }
    out
}

/// Signed gap between a disc and an obstacle, computed from the geometry.
pub fn disc_gap(center: Vec2, radius: f64, obstacle: &Obstacle) -> f64 {
    match *obstacle {
        Obstacle::Cylinder { center: c, radius: r } => (center - c).norm() - r - radius,
        Obstacle::WallSegment { start, end, thickness } => {
            let d = end - start;
            let len2 = d.dot(d);
            let t = if len2 == 0.0 {
                0.0
            } else {
                ((center - start).dot(d) / len2).clamp(0.0, 1.0)
            };
            (center - (start + d * t)).norm() - 0.5 * thickness - radius
        }
    }
}

/// Smallest gap between the payload aggregate and any obstacle or wall.
pub fn aggregate_gap(world: &WorldState) -> f64 {
    let c = world.payload_pose.position;
    let r = world.payload_radius + world.body.robot_radius;
    let h = world.arena_half_extent;
    let walls = [c.x + h - r, h - c.x - r, c.y + h - r, h - c.y - r];
    world
        .obstacles
        .iter()
        .map(|o| disc_gap(c, r, o))
        .chain(walls)
        .fold(f64::INFINITY, f64::min)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
