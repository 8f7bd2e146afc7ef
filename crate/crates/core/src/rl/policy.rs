use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Action, CONTINUOUS_ACTION_DIM, DISCRETE_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::sensing::OBS_DIM;
use crate::sim::MAX_WHEEL_DELTA;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Critic input rows: observation followed by the action in actor-output units.
pub fn critic_input(observations: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[observations, actions]).expect("row counts agree")
}

/// Epsilon-greedy choice over the value network's outputs.
pub fn select_action_value<R: Rng + ?Sized>(
    net: &Network,
    observation: &[f64; OBS_DIM],
    epsilon: f64,
    rng: &mut R,
) -> Result<u8> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..DISCRETE_ACTIONS) as u8);
    }
    let q = net.forward(observation)?;
    Ok(argmax(ArrayView1::from(&q)) as u8)
}

/// Scaled actor output plus Gaussian behaviour noise (cm/s), clamped per wheel.
pub fn select_action_policy<R: Rng + ?Sized>(
    actor: &Network,
    observation: &[f64; OBS_DIM],
    exploration_sigma: f64,
    rng: &mut R,
) -> Result<[f64; CONTINUOUS_ACTION_DIM]> {
    let out = actor.forward(observation)?;
    Ok(scale_and_perturb(&out, exploration_sigma, rng))
}

fn scale_and_perturb<R: Rng + ?Sized>(unit: &[f64], sigma: f64, rng: &mut R) -> [f64; CONTINUOUS_ACTION_DIM] {
    let mut action = [0.0; CONTINUOUS_ACTION_DIM];
    for (a, &u) in action.iter_mut().zip(unit) {
        let noise = if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
        } else {
            0.0
        };
        *a = (MAX_WHEEL_DELTA * u + noise).clamp(-MAX_WHEEL_DELTA, MAX_WHEEL_DELTA);
    }
    action
}

/// Behaviour-policy randomness; [`Exploration::NONE`] gives the greedy policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exploration {
    pub epsilon: f64,
    pub sigma: f64,
}

impl Exploration {
    pub const NONE: Exploration = Exploration {
        epsilon: 0.0,
        sigma: 0.0,
    };
}

/// The network every robot executes. One copy serves all robots.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Greedy over a 9-way value network.
    Greedy(Network),
    /// Deterministic actor with tanh outputs.
    Actor(Network),
}

impl Policy {
    pub fn network(&self) -> &Network {
        match self {
            Policy::Greedy(n) | Policy::Actor(n) => n,
        }
    }

    pub fn check_topology(&self) -> Result<()> {
        let net = self.network();
        let expected_out = match self {
            Policy::Greedy(_) => DISCRETE_ACTIONS,
            Policy::Actor(_) => CONTINUOUS_ACTION_DIM,
        };
        if net.input_dim() != OBS_DIM || net.output_dim() != expected_out {
            return Err(Error::Config(format!(
                "policy network is {}→{}, expected {OBS_DIM}→{expected_out}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(())
    }

    /// One action per observation, evaluated as a single batch.
    pub fn act_batch<R: Rng + ?Sized>(
        &self,
        observations: &[[f64; OBS_DIM]],
        exploration: Exploration,
        rng: &mut R,
    ) -> Result<Vec<Action>> {
        let greedy = matches!(self, Policy::Greedy(_));
        act_with_network(self.network(), greedy, observations, exploration, rng)
    }
}

pub(crate) fn act_with_network<R: Rng + ?Sized>(
    net: &Network,
    greedy: bool,
    observations: &[[f64; OBS_DIM]],
    exploration: Exploration,
    rng: &mut R,
) -> Result<Vec<Action>> {
    if observations.is_empty() {
        return Ok(Vec::new());
    }
    let flat: Vec<f64> = observations.iter().flatten().copied().collect();
    let x = ArrayView2::from_shape((observations.len(), OBS_DIM), &flat)
        .map_err(|e| Error::Config(e.to_string()))?;
    let out = net.forward_batch(x)?;
    let actions = if greedy {
        out.rows()
            .into_iter()
            .map(|q| {
                let e = exploration.epsilon;
                if e > 0.0 && rng.random::<f64>() < e {
                    Action::Discrete(rng.random_range(0..DISCRETE_ACTIONS) as u8)
                } else {
                    Action::Discrete(argmax(q) as u8)
                }
            })
            .collect()
    } else {
        out.rows()
            .into_iter()
            .map(|u| {
                let u = u.as_slice().expect("row-major");
                Action::Continuous(scale_and_perturb(u, exploration.sigma, rng))
            })
            .collect()
    };
    Ok(actions)
}
