mod common;

use agrl::nn::{Activation, Dense, Network};
use agrl::rl::{
    ddpg_target, dqn_target, select_action_policy, select_action_value, td3_target, Action, Agent, Algorithm, Batch,
    Experience, Hyperparameters, Learner, ReplayBuffer,
};
use agrl::sensing::OBS_DIM;
use common::{random_batch, random_network};
use ndarray::Array1;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Upper 1% points of the chi-square distribution.
const CHI2_99_DF8: f64 = 20.090;

fn experience(reward: f64, terminal: bool) -> Experience {
    Experience {
        observation: [0.0; OBS_DIM],
        action: Action::Discrete(0),
        reward,
        next_observation: [0.0; OBS_DIM],
        terminal,
    }
}

/// A single identity layer whose output is exactly `bias` for a zero input.
fn constant_net(inputs: usize, bias: &[f64]) -> Network {
    let mut d = Dense::zeros(inputs, bias.len(), Activation::Identity);
    d.bias = Array1::from(bias.to_vec());
    Network::new(vec![d]).unwrap()
}

#[test]
fn dqn_hand_example() {
    let target = constant_net(OBS_DIM, &[-3.0, -2.0, -5.0, -4.0, -6.0, -7.0, -8.0, -9.0, -10.0]);
    let batch = Batch::from_experiences([experience(-1.0, false), experience(-1.0, true)].iter());
    let y = dqn_target(&batch, &target, 0.99997).unwrap();
    assert!((y[0] - -2.99994).abs() < 1e-12);
    assert_eq!(y[1], -1.0);
    let y0 = dqn_target(&batch, &target, 0.0).unwrap();
    assert_eq!(y0.to_vec(), vec![-1.0, -1.0]);
}

#[test]
fn ddpg_hand_built() {
    // actor: a = tanh(0.5·s0) per component; critic: q = 2·s0 + 3·a0 − a1 + 1
    let mut actor = Dense::zeros(OBS_DIM, 2, Activation::Tanh);
    actor.weights[[0, 0]] = 0.5;
    actor.weights[[1, 0]] = 0.5;
    let actor = Network::new(vec![actor]).unwrap();
    let mut critic = Dense::zeros(OBS_DIM + 2, 1, Activation::Identity);
    critic.weights[[0, 0]] = 2.0;
    critic.weights[[0, OBS_DIM]] = 3.0;
    critic.weights[[0, OBS_DIM + 1]] = -1.0;
    critic.bias[0] = 1.0;
    let critic = Network::new(vec![critic]).unwrap();

    let mut e = experience(-1.5, false);
    e.next_observation[0] = 0.4;
    let batch = Batch::from_experiences([e].iter());
    let a = (0.2f64).tanh();
    let want = -1.5 + 0.9 * (2.0 * 0.4 + 3.0 * a - a + 1.0);
    let got = ddpg_target(&batch, &actor, &critic, 0.9).unwrap()[0];
    assert!((got - want).abs() < 1e-15, "{got} vs {want}");

    let zero = constant_net(OBS_DIM + 2, &[0.0]);
    assert_eq!(ddpg_target(&batch, &actor, &zero, 0.9).unwrap()[0], -1.5);
}

#[test]
fn td3_takes_the_smaller_critic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let actor = random_network(&[OBS_DIM, 3, 2], Activation::Relu, Activation::Tanh, 0.5, &mut rng);
    let q1 = constant_net(OBS_DIM + 2, &[-1.0]);
    let q2 = constant_net(OBS_DIM + 2, &[-3.0]);
    let mut batch = random_batch(6, true, &mut rng);
    batch.terminals.fill(false);
    let y = td3_target(&batch, &actor, &q1, &q2, 0.5, 0.2, 0.5, &mut rng).unwrap();
    for i in 0..6 {
        assert_eq!(y[i], batch.rewards[i] + 0.5 * -3.0);
    }
    // twin critics with noise off reduce to the DDPG target
    let c = random_network(&[OBS_DIM + 2, 3, 1], Activation::Relu, Activation::Identity, 0.5, &mut rng);
    let twin = td3_target(&batch, &actor, &c, &c, 0.9, 0.0, 0.0, &mut rng).unwrap();
    assert_eq!(twin, ddpg_target(&batch, &actor, &c, 0.9).unwrap());
}

#[test]
fn sampling_needs_a_full_batch() {
    let mut buffer = ReplayBuffer::new(1000);
    for _ in 0..99 {
        buffer.push(experience(-1.0, false));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert!(buffer.sample_batch(100, &mut rng).is_none());
    buffer.push(experience(-1.0, false));
    assert!(buffer.sample_batch(100, &mut rng).is_some());
}

#[test]
fn repeated_experience_gives_identical_batch() {
    let mut buffer = ReplayBuffer::new(10);
    let e = experience(-2.5, true);
    for _ in 0..10 {
        buffer.push(e.clone());
    }
    let batch = buffer.sample_batch(7, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert!(batch.rewards.iter().all(|&r| r == -2.5));
    assert!(batch.terminals.iter().all(|&t| t));
}

/// Every index's frequency within 3 sigma of uniform.
#[test]
fn sampling_is_uniform() {
    let mut buffer = ReplayBuffer::new(1000);
    for i in 0..1000 {
        buffer.push(experience(i as f64, false));
    }
    let mut counts = vec![0u32; 1000];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        for i in buffer.sample_indices(100, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let n: f64 = 100_000.0;
    let p = 1.0 / 1000.0;
    let (mean, sigma) = (n * p, (n * p * (1.0 - p)).sqrt());
    // 3 sigma bounds ~0.27% of indices by chance; allow that many
    let outliers = counts.iter().filter(|&&c| (c as f64 - mean).abs() > 3.0 * sigma).count();
    assert!(outliers <= 8, "{outliers} indices beyond 3 sigma");
}

#[test]
fn greedy_choice_and_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut q = [0.0; 9];
    q[4] = 1.0;
    assert_eq!(select_action_value(&constant_net(OBS_DIM, &q), &[0.0; OBS_DIM], 0.0, &mut rng).unwrap(), 4);
    assert_eq!(select_action_value(&constant_net(OBS_DIM, &[0.5; 9]), &[0.0; OBS_DIM], 0.0, &mut rng).unwrap(), 0);
}

#[test]
fn full_exploration_is_uniform() {
    let net = constant_net(OBS_DIM, &[0.0, 0.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut counts = [0u32; 9];
    let n = 10_000;
    for _ in 0..n {
        counts[select_action_value(&net, &[0.0; OBS_DIM], 1.0, &mut rng).unwrap() as usize] += 1;
    }
    let expected = n as f64 / 9.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < CHI2_99_DF8, "chi-square {chi2}, counts {counts:?}");
}

#[test]
fn continuous_actions_respect_wheel_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut d = Dense::zeros(OBS_DIM, 2, Activation::Tanh);
    d.bias = Array1::from(vec![10.0, -10.0]);
    let actor = Network::new(vec![d]).unwrap();
    for _ in 0..1000 {
        let a = select_action_policy(&actor, &[0.0; OBS_DIM], 0.1, &mut rng).unwrap();
        assert!(a.iter().all(|v| v.abs() <= 0.1));
    }
    let quiet = select_action_policy(&actor, &[0.0; OBS_DIM], 0.0, &mut rng).unwrap();
    assert!((quiet[0] - 0.1 * 10f64.tanh()).abs() < 1e-15);
}

fn filled_learner(algorithm: Algorithm, seed: u64) -> Learner {
    let hyper = Hyperparameters {
        batch_size: 8,
        target_update_interval: 3,
        ..Hyperparameters::default()
    };
    let mut learner = Learner::new(algorithm, hyper, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = random_batch(16, !algorithm.is_value_based(), &mut rng);
    learner.insert((0..16).map(|i| Experience {
        observation: batch.observations.row(i).to_vec().try_into().unwrap(),
        action: batch.actions[i],
        reward: batch.rewards[i],
        next_observation: batch.next_observations.row(i).to_vec().try_into().unwrap(),
        terminal: batch.terminals[i],
    }));
    learner
}

#[test]
fn learners_skip_until_ready_then_learn() {
    for algorithm in Algorithm::ALL {
        let mut empty = Learner::new(algorithm, Hyperparameters::default(), 0);
        assert_eq!(empty.learn_step().unwrap(), None);
        assert_eq!(empty.agent.learn_steps(), 0);

        let mut learner = filled_learner(algorithm, 1);
        let before = learner.agent.policy();
        for _ in 0..6 {
            let loss = learner.learn_step().unwrap().expect("buffer is full enough");
            assert!(loss.is_finite() && loss >= 0.0);
        }
        assert_eq!(learner.agent.learn_steps(), 6);
        assert_ne!(learner.agent.policy(), before, "{algorithm} did not move its policy");
        assert!(learner.agent.networks().iter().all(|n| n.all_finite()));
    }
}

#[test]
fn td3_delays_actor_updates() {
    let mut learner = filled_learner(Algorithm::Td3, 2);
    for _ in 0..7 {
        learner.learn_step().unwrap();
    }
    match &learner.agent {
        Agent::Policy(p) => assert_eq!(p.actor_updates, 3),
        Agent::Value(_) => unreachable!(),
    }
}

#[test]
fn learning_is_deterministic_per_seed() {
    for algorithm in Algorithm::ALL {
        let run = |seed| {
            let mut l = filled_learner(algorithm, seed);
            for _ in 0..4 {
                l.learn_step().unwrap();
            }
            l.agent.networks().iter().map(|n| n.to_bytes()).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }
}

#[test]
fn agents_rebuild_from_their_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for algorithm in Algorithm::ALL {
        let agent = Agent::new(algorithm, &mut rng);
        let nets: Vec<Network> = agent.networks().into_iter().cloned().collect();
        let back = Agent::from_networks(algorithm, nets, agent.learn_steps(), 0).unwrap();
        assert_eq!(back.policy(), agent.policy());
        assert!(Agent::from_networks(algorithm, Vec::new(), 0, 0).is_err());
    }
}

#[test]
fn exploration_follows_learn_steps() {
    let mut learner = filled_learner(Algorithm::Dqn, 3);
    assert_eq!(learner.exploration().epsilon, 1.0);
    learner.learn_step().unwrap();
    assert_eq!(learner.exploration().epsilon, 1.0 - 1e-6);
    let ddpg = filled_learner(Algorithm::Ddpg, 3);
    assert_eq!(ddpg.exploration().sigma, 0.1);
}

proptest! {
    #[test]
    fn ring_buffer_keeps_the_newest(capacity in 1usize..64, extra in 0usize..200) {
        let mut buffer = ReplayBuffer::new(capacity);
        let total = capacity + extra;
        for i in 0..total {
            buffer.push(experience(i as f64, false));
        }
        prop_assert_eq!(buffer.len(), capacity);
        let mut kept: Vec<u64> = buffer.iter().map(|e| e.reward as u64).collect();
        kept.sort_unstable();
        prop_assert_eq!(kept, ((extra as u64)..(total as u64)).collect::<Vec<_>>());
    }

    #[test]
    fn epsilon_schedule(n in 0u64..5_000_000) {
        let eps = Hyperparameters::default().epsilon_after(n);
        prop_assert_eq!(eps, f64::max(0.01, 1.0 - 1e-6 * n as f64));
        prop_assert!((0.01..=1.0).contains(&eps));
    }

    #[test]
    fn terminal_targets_never_bootstrap(seed in any::<u64>(), gamma in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = random_batch(5, false, &mut rng);
        batch.terminals.fill(true);
        let target = random_network(&[OBS_DIM, 4, 9], Activation::Relu, Activation::Identity, 1.0, &mut rng);
        prop_assert_eq!(dqn_target(&batch, &target, gamma).unwrap(), batch.rewards.clone());
    }
}
