use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{act_with_network, critic_input};
use super::targets::{ddpg_target, ddqn_target, dqn_target, td3_target};
use super::{Action, Batch, Experience, Exploration, Hyperparameters, Policy, ReplayBuffer};
use super::{CONTINUOUS_ACTION_DIM, DISCRETE_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::sensing::OBS_DIM;
use crate::sim::MAX_WHEEL_DELTA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dqn,
    Ddqn,
    Ddpg,
    Td3,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Dqn, Algorithm::Ddqn, Algorithm::Ddpg, Algorithm::Td3];

    pub fn is_value_based(self) -> bool {
        matches!(self, Algorithm::Dqn | Algorithm::Ddqn)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Ddqn => "ddqn",
            Algorithm::Ddpg => "ddpg",
            Algorithm::Td3 => "td3",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Algorithm::Dqn => 0,
            Algorithm::Ddqn => 1,
            Algorithm::Ddpg => 2,
            Algorithm::Td3 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?} (dqn|ddqn|ddpg|td3)")))
    }
}

/// DQN or DDQN: an online Q-network with a periodically hard-copied target.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueLearner {
    pub online: Network,
    pub target: Network,
    pub double: bool,
    pub learn_steps: u64,
}

/// DDPG (one critic) or TD3 (twin critics, delayed actor).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLearner {
    pub actor: Network,
    pub actor_target: Network,
    pub critics: Vec<Network>,
    pub critic_targets: Vec<Network>,
    pub critic_updates: u64,
    pub actor_updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    Value(ValueLearner),
    Policy(PolicyLearner),
}

impl Agent {
    /// Fresh networks for `algorithm`; targets start as exact copies.
    pub fn new<R: Rng + ?Sized>(algorithm: Algorithm, rng: &mut R) -> Self {
        match algorithm {
            Algorithm::Dqn | Algorithm::Ddqn => {
                let online = Network::value_net(OBS_DIM, DISCRETE_ACTIONS, rng);
                Agent::Value(ValueLearner {
                    target: online.clone(),
                    online,
                    double: algorithm == Algorithm::Ddqn,
                    learn_steps: 0,
                })
            }
            Algorithm::Ddpg | Algorithm::Td3 => {
                let actor = Network::actor(OBS_DIM, CONTINUOUS_ACTION_DIM, rng);
                let twins = if algorithm == Algorithm::Td3 { 2 } else { 1 };
                let critics: Vec<Network> = (0..twins)
                    .map(|_| Network::critic(OBS_DIM, CONTINUOUS_ACTION_DIM, rng))
                    .collect();
                Agent::Policy(PolicyLearner {
                    actor_target: actor.clone(),
                    actor,
                    critic_targets: critics.clone(),
                    critics,
                    critic_updates: 0,
                    actor_updates: 0,
                })
            }
        }
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Agent::Value(v) if v.double => Algorithm::Ddqn,
            Agent::Value(_) => Algorithm::Dqn,
            Agent::Policy(p) if p.critics.len() == 2 => Algorithm::Td3,
            Agent::Policy(_) => Algorithm::Ddpg,
        }
    }

    /// Number of completed learn steps.
    pub fn learn_steps(&self) -> u64 {
        match self {
            Agent::Value(v) => v.learn_steps,
            Agent::Policy(p) => p.critic_updates,
        }
    }

    /// Current epsilon for value learners; 0 for policy learners.
    pub fn epsilon(&self, hyper: &Hyperparameters) -> f64 {
        match self {
            Agent::Value(v) => hyper.epsilon_after(v.learn_steps),
            Agent::Policy(_) => 0.0,
        }
    }

    /// Behaviour-policy exploration for the current training stage.
    pub fn exploration(&self, hyper: &Hyperparameters) -> Exploration {
        match self {
            Agent::Value(_) => Exploration {
                epsilon: self.epsilon(hyper),
                sigma: 0.0,
            },
            Agent::Policy(_) => Exploration {
                epsilon: 0.0,
                sigma: hyper.exploration_noise_sigma,
            },
        }
    }

    /// Copy of the acting network.
    pub fn policy(&self) -> Policy {
        match self {
            Agent::Value(v) => Policy::Greedy(v.online.clone()),
            Agent::Policy(p) => Policy::Actor(p.actor.clone()),
        }
    }

    /// Acts with the live acting network, without copying it.
    pub fn act_batch<R: Rng + ?Sized>(
        &self,
        observations: &[[f64; OBS_DIM]],
        exploration: Exploration,
        rng: &mut R,
    ) -> Result<Vec<Action>> {
        match self {
            Agent::Value(v) => act_with_network(&v.online, true, observations, exploration, rng),
            Agent::Policy(p) => act_with_network(&p.actor, false, observations, exploration, rng),
        }
    }

    /// Every network in a fixed order, for checkpoints.
    pub fn networks(&self) -> Vec<&Network> {
        match self {
            Agent::Value(v) => vec![&v.online, &v.target],
            Agent::Policy(p) => {
                let mut out = vec![&p.actor, &p.actor_target];
                out.extend(p.critics.iter());
                out.extend(p.critic_targets.iter());
                out
            }
        }
    }

    /// Rebuilds an agent from [`Agent::networks`] order and its step counters.
    pub fn from_networks(
        algorithm: Algorithm,
        mut nets: Vec<Network>,
        learn_steps: u64,
        actor_updates: u64,
    ) -> Result<Self> {
        let expected = match algorithm {
            Algorithm::Dqn | Algorithm::Ddqn => 2,
            Algorithm::Ddpg => 4,
            Algorithm::Td3 => 6,
        };
        if nets.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{algorithm} needs {expected} networks, found {}",
                nets.len()
            )));
        }
        let agent = if algorithm.is_value_based() {
            let target = nets.pop().expect("two networks");
            let online = nets.pop().expect("two networks");
            Agent::Value(ValueLearner {
                online,
                target,
                double: algorithm == Algorithm::Ddqn,
                learn_steps,
            })
        } else {
            let twins = (expected - 2) / 2;
            let critic_targets = nets.split_off(2 + twins);
            let critics = nets.split_off(2);
            let actor_target = nets.pop().expect("actor target");
            let actor = nets.pop().expect("actor");
            Agent::Policy(PolicyLearner {
                actor,
                actor_target,
                critics,
                critic_targets,
                critic_updates: learn_steps,
                actor_updates,
            })
        };
        agent.policy().check_topology()?;
        Ok(agent)
    }

    /// One gradient update from a uniformly sampled minibatch. Returns the
    /// critic (or Q) loss, or `None` when the buffer cannot fill a batch yet.
    pub fn learn_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        hyper: &Hyperparameters,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        let Some(batch) = buffer.sample_batch(hyper.batch_size, rng) else {
            return Ok(None);
        };
        let loss = match self {
            Agent::Value(v) => v.update(&batch, hyper)?,
            Agent::Policy(p) => p.update(&batch, hyper, rng)?,
        };
        Ok(Some(loss))
    }
}

/// Gradient of `mean((q - y)^2)` with respect to `q`, and the loss itself.
fn mse_gradient(q: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
    let n = q.len() as f64;
    let mut loss = 0.0;
    let grad = q
        .iter()
        .zip(y)
        .map(|(&q, &y)| {
            let d = q - y;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (grad, loss / n)
}

impl ValueLearner {
    fn update(&mut self, batch: &Batch, hyper: &Hyperparameters) -> Result<f64> {
        let targets = if self.double {
            ddqn_target(batch, &self.online, &self.target, hyper.gamma)?
        } else {
            dqn_target(batch, &self.target, hyper.gamma)?
        };
        let cache = self.online.forward_cached(batch.observations.view())?;
        let q = cache.output();
        let chosen: Vec<usize> = batch
            .actions
            .iter()
            .map(|a| match a {
                Action::Discrete(i) if (*i as usize) < DISCRETE_ACTIONS => Ok(*i as usize),
                other => Err(Error::Usage(format!("value learner got action {other:?}"))),
            })
            .collect::<Result<_>>()?;
        let q_taken: Vec<f64> = chosen.iter().enumerate().map(|(i, &a)| q[[i, a]]).collect();
        let (grad, loss) = mse_gradient(&q_taken, targets.as_slice().expect("contiguous"));
        let mut upstream = Array2::zeros(q.raw_dim());
        for (i, (&a, g)) in chosen.iter().zip(grad).enumerate() {
            upstream[[i, a]] = g;
        }
        let (grads, _) = self.online.backward(&cache, upstream.view())?;
        self.online.adam_update(&grads, hyper.learning_rate)?;
        self.learn_steps += 1;
        if self.learn_steps % hyper.target_update_interval == 0 {
            self.target.soft_update(&self.online, 1.0)?;
        }
        Ok(loss)
    }
}

impl PolicyLearner {
    fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, hyper: &Hyperparameters, rng: &mut R) -> Result<f64> {
        let twin = self.critics.len() == 2;
        let targets = if twin {
            td3_target(
                batch,
                &self.actor_target,
                &self.critic_targets[0],
                &self.critic_targets[1],
                hyper.gamma,
                hyper.target_noise_sigma,
                hyper.target_noise_clip,
                rng,
            )?
        } else {
            ddpg_target(batch, &self.actor_target, &self.critic_targets[0], hyper.gamma)?
        };

        let taken = Array2::from_shape_fn((batch.len(), CONTINUOUS_ACTION_DIM), |(i, j)| match batch.actions[i] {
            Action::Continuous(a) => a[j] / MAX_WHEEL_DELTA,
            Action::Discrete(_) => f64::NAN,
        });
        if taken.iter().any(|v| v.is_nan()) {
            return Err(Error::Usage("policy learner got a discrete action".into()));
        }
        let input = critic_input(batch.observations.view(), taken.view());
        let mut total_loss = 0.0;
        for critic in &mut self.critics {
            let cache = critic.forward_cached(input.view())?;
            let q = cache.output().column(0).to_vec();
            let (grad, loss) = mse_gradient(&q, targets.as_slice().expect("contiguous"));
            let upstream = Array2::from_shape_vec((grad.len(), 1), grad).expect("column");
            let (grads, _) = critic.backward(&cache, upstream.view())?;
            critic.adam_update(&grads, hyper.learning_rate)?;
            total_loss += loss;
        }
        self.critic_updates += 1;

        let delay = if twin { hyper.policy_delay } else { 1 };
        if self.critic_updates % delay == 0 {
            self.update_actor(batch, hyper)?;
            self.actor_target.soft_update(&self.actor, hyper.tau)?;
            for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
                t.soft_update(c, hyper.tau)?;
            }
        }
        Ok(total_loss / self.critics.len() as f64)
    }

    /// Ascends `mean Q_1(s, mu(s))` by backpropagating through the first critic.
    fn update_actor(&mut self, batch: &Batch, hyper: &Hyperparameters) -> Result<()> {
        let actor_cache = self.actor.forward_cached(batch.observations.view())?;
        let proposed = actor_cache.output();
        let input = critic_input(batch.observations.view(), proposed.view());
        let critic = &self.critics[0];
        let critic_cache = critic.forward_cached(input.view())?;
        let n = batch.len() as f64;
        let upstream = Array2::from_elem((batch.len(), 1), -1.0 / n);
        let (_, d_input) = critic.backward(&critic_cache, upstream.view())?;
        let d_action = d_input.slice(s![.., OBS_DIM..]).to_owned();
        let (grads, _) = self.actor.backward(&actor_cache, d_action.view())?;
        self.actor.adam_update(&grads, hyper.learning_rate)?;
        self.actor_updates += 1;
        Ok(())
    }
}

/// Everything the learning side owns: the agent, its replay memory, the
/// hyperparameters and the sampling stream.
#[derive(Debug, Clone)]
pub struct Learner {
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub hyper: Hyperparameters,
    rng: ChaCha8Rng,
}

impl Learner {
    pub fn new(algorithm: Algorithm, hyper: Hyperparameters, seed: u64) -> Self {
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(algorithm, &mut init_rng);
        Self::with_agent(agent, hyper, seed)
    }

    pub fn with_agent(agent: Agent, hyper: Hyperparameters, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            buffer: ReplayBuffer::new(hyper.buffer_capacity),
            agent,
            hyper,
            rng,
        }
    }

    /// Appends experiences in order.
    pub fn insert(&mut self, experiences: impl IntoIterator<Item = Experience>) {
        for e in experiences {
            self.buffer.push(e);
        }
    }

    pub fn learn_step(&mut self) -> Result<Option<f64>> {
        self.agent.learn_step(&self.buffer, &self.hyper, &mut self.rng)
    }

    pub fn exploration(&self) -> Exploration {
        self.agent.exploration(&self.hyper)
    }
}
