//! Replay memory and the four learners: DQN, DDQN, DDPG and TD3.

mod agent;
mod buffer;
mod experience;
mod hyper;
mod policy;
mod targets;

pub use agent::{Agent, Algorithm, Learner, PolicyLearner, ValueLearner};
pub use buffer::{Batch, ReplayBuffer};
pub use experience::{decode_discrete_action, Action, Experience, CONTINUOUS_ACTION_DIM, DISCRETE_ACTIONS};
pub use hyper::Hyperparameters;
pub use policy::{
    argmax, critic_input, select_action_policy, select_action_value, Exploration, Policy,
};
pub use targets::{ddpg_target, ddqn_target, dqn_target, td3_target};
