//! Bellman targets for each learner. Terminal samples never bootstrap.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::policy::{argmax, critic_input};
use super::Batch;
use crate::error::Result;
use crate::nn::Network;

/// `y = r + gamma · max_a' Q_target(s', a')`.
pub fn dqn_target(batch: &Batch, target: &Network, gamma: f64) -> Result<Array1<f64>> {
    let q_next = target.forward_batch(batch.next_observations.view())?;
    Ok(bootstrap(batch, gamma, |i| {
        q_next.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }))
}

/// `y = r + gamma · Q_target(s', argmax_a' Q_online(s', a'))`.
pub fn ddqn_target(batch: &Batch, online: &Network, target: &Network, gamma: f64) -> Result<Array1<f64>> {
    let q_online = online.forward_batch(batch.next_observations.view())?;
    let q_target = target.forward_batch(batch.next_observations.view())?;
    Ok(bootstrap(batch, gamma, |i| q_target[[i, argmax(q_online.row(i))]]))
}

/// `y = r + gamma · Q_target(s', mu_target(s'))`.
pub fn ddpg_target(
    batch: &Batch,
    target_actor: &Network,
    target_critic: &Network,
    gamma: f64,
) -> Result<Array1<f64>> {
    let next_actions = target_actor.forward_batch(batch.next_observations.view())?;
    let q = target_critic.forward_batch(critic_input(batch.next_observations.view(), next_actions.view()).view())?;
    Ok(bootstrap(batch, gamma, |i| q[[i, 0]]))
}

/// Clipped double-Q target with target-policy smoothing. Noise is drawn in
/// actor-output units and the smoothed action is clamped to [-1, 1].
#[allow(clippy::too_many_arguments)]
pub fn td3_target<R: Rng + ?Sized>(
    batch: &Batch,
    target_actor: &Network,
    target_critic_1: &Network,
    target_critic_2: &Network,
    gamma: f64,
    noise_sigma: f64,
    noise_clip: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let mut next_actions: Array2<f64> = target_actor.forward_batch(batch.next_observations.view())?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("positive sigma");
        // sample by sample, component by component, whatever the memory layout
        for mut row in next_actions.rows_mut() {
            for a in row.iter_mut() {
                *a = (*a + normal.sample(rng).clamp(-noise_clip, noise_clip)).clamp(-1.0, 1.0);
            }
        }
    }
    let input = critic_input(batch.next_observations.view(), next_actions.view());
    let q1 = target_critic_1.forward_batch(input.view())?;
    let q2 = target_critic_2.forward_batch(input.view())?;
    let q_min = ndarray::Zip::from(q1.index_axis(Axis(1), 0))
        .and(q2.index_axis(Axis(1), 0))
        .map_collect(|&a, &b| a.min(b));
    Ok(bootstrap(batch, gamma, |i| q_min[i]))
}

fn bootstrap(batch: &Batch, gamma: f64, next_value: impl Fn(usize) -> f64) -> Array1<f64> {
    Array1::from_iter((0..batch.len()).map(|i| {
        let r = batch.rewards[i];
        if batch.terminals[i] {
            r
        } else {
            r + gamma * next_value(i)
        }
    }))
}
