use std::fs;
use std::path::Path;

use agrl::env::ScenarioConfig;
use agrl::nn::{Activation, Dense, Network};
use agrl::rl::{Agent, Algorithm};
use agrl::trainer::{
    evaluate, list_checkpoints, run_study, select_best_checkpoint, train_into, Checkpoint, CheckpointMeta,
    RunConfig, StudyKind, StudyOptions, ZeroController, CONFIG_SNAPSHOT, FINAL_CHECKPOINT, METRICS_COLUMNS,
    METRICS_LOG,
};
use agrl::Error;
use ndarray::Array1;

fn quick(algorithm: Algorithm, episodes: u64, ticks: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.run.algorithm = algorithm;
    c.run.episodes = episodes;
    c.run.validation_episodes = 2;
    c.scenario.time_limit = ticks;
    c.training.batch_size = 8;
    c
}

fn metrics(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join(METRICS_LOG))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').map(str::to_owned).collect())
        .collect()
}

#[test]
fn thousand_episodes_give_a_hundred_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = quick(Algorithm::Dqn, 1000, 1);
    config.scenario.robot_count = 1;
    let report = train_into(&config, tmp.path()).unwrap();
    assert_eq!(report.episodes, 1000);
    let listed = list_checkpoints(tmp.path()).unwrap();
    assert_eq!(listed.len(), 100);
    assert_eq!(listed.first().unwrap().0, 10);
    assert_eq!(listed.last().unwrap().0, 1000);
    assert!(tmp.path().join("checkpoints").join(FINAL_CHECKPOINT).exists());
    assert_eq!(metrics(tmp.path()).len(), 1000);
}

#[test]
fn every_robot_contributes_every_tick() {
    let tmp = tempfile::tempdir().unwrap();
    let config = quick(Algorithm::Ddpg, 1, 37);
    train_into(&config, tmp.path()).unwrap();
    let rows = metrics(tmp.path());
    assert_eq!(rows[0][2], "37");
    // buffer_len is the last column
    assert_eq!(rows[0][8], (4 * 37).to_string());
    assert_eq!(rows[0][5], (37 - 8 / 4 + 1).to_string(), "one learn step per tick once a batch is available");
}

#[test]
fn run_directory_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = quick(Algorithm::Td3, 3, 10);
    config.run.checkpoint_interval = 2;
    config.scenario.gate_enabled = true;
    config.scenario.gate_opening = 4.0;
    config.curriculum.completion_episode = 2;
    train_into(&config, tmp.path()).unwrap();

    let snapshot = fs::read_to_string(tmp.path().join(CONFIG_SNAPSHOT)).unwrap();
    assert_eq!(RunConfig::from_toml(&snapshot).unwrap(), config);

    let text = fs::read_to_string(tmp.path().join(METRICS_LOG)).unwrap();
    assert_eq!(text.lines().next().unwrap(), format!("# {}", METRICS_COLUMNS.join("\t")));
    let rows = metrics(tmp.path());
    let openings: Vec<&str> = rows.iter().map(|r| r[7].as_str()).collect();
    assert_eq!(openings, ["20", "12", "4"]);
    assert!(rows.iter().all(|r| r.len() == METRICS_COLUMNS.len()));

    let names: Vec<u64> = list_checkpoints(tmp.path()).unwrap().into_iter().map(|(e, _)| e).collect();
    assert_eq!(names, [2]);
    let last = Checkpoint::load(&tmp.path().join("checkpoints").join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(last.meta.episode, 3);
    assert_eq!(last.meta.algorithm, Algorithm::Td3);
    assert_eq!(last.networks.len(), 6);
}

#[test]
fn unwritable_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("occupied");
    fs::write(&file, "not a directory").unwrap();
    assert!(train_into(&quick(Algorithm::Dqn, 1, 5), &file).is_err());
}

#[test]
fn invalid_config_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = quick(Algorithm::Dqn, 1, 5);
    config.training.gamma = 1.5;
    assert!(matches!(train_into(&config, &tmp.path().join("run")), Err(Error::Config(_))));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn distributed_training_covers_every_episode() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = quick(Algorithm::Dqn, 5, 12);
    config.run.workers = 2;
    config.run.checkpoint_interval = 5;
    let report = train_into(&config, tmp.path()).unwrap();
    assert_eq!(report.episodes, 5);
    let rows = metrics(tmp.path());
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.last().unwrap()[8], (5 * 4 * 12).to_string());
    assert_eq!(list_checkpoints(tmp.path()).unwrap().len(), 1);
}

/// A value network that always picks action 4, the (0, 0) wheel delta.
fn idle_checkpoint() -> Checkpoint {
    let mut head = Dense::zeros(31, 9, Activation::Identity);
    head.bias = Array1::from_iter((0..9).map(|i| if i == 4 { 1.0 } else { 0.0 }));
    let net = Network::new(vec![head]).unwrap();
    let agent = Agent::from_networks(Algorithm::Dqn, vec![net.clone(), net], 0, 0).unwrap();
    let meta = CheckpointMeta {
        algorithm: Algorithm::Dqn,
        episode: 10,
        learn_steps: 0,
        actor_updates: 0,
        epsilon: 1.0,
        successes: 0,
        last_mean_return: 0.0,
    };
    Checkpoint::from_agent(&agent, meta)
}

#[test]
fn idle_model_never_succeeds() {
    let scenario = ScenarioConfig {
        time_limit: 300,
        ..ScenarioConfig::default()
    };
    let mut policy = idle_checkpoint().policy().unwrap();
    let report = evaluate(&mut policy, &scenario, 5, 1).unwrap();
    assert_eq!(report.success_rate, Some(0.0));
    assert!(report.results.iter().all(|r| r.ticks == 300));
    let zero = evaluate(&mut ZeroController, &scenario, 5, 1).unwrap();
    assert_eq!(zero.mean_cumulative_reward, report.mean_cumulative_reward);
}

#[test]
fn zero_trials_report_not_applicable() {
    let mut policy = idle_checkpoint().policy().unwrap();
    let report = evaluate(&mut policy, &ScenarioConfig::default(), 0, 1).unwrap();
    assert_eq!(report.trials, 0);
    assert_eq!(report.success_rate, None);
    assert_eq!(report.mean_episode_length, None);
}

#[test]
fn evaluation_is_repeatable_and_count_agnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = quick(Algorithm::Td3, 1, 20);
    train_into(&config, tmp.path()).unwrap();
    let ckpt = Checkpoint::load(&tmp.path().join("checkpoints").join(FINAL_CHECKPOINT)).unwrap();
    let mut policy = ckpt.policy().unwrap();
    let scenario = ScenarioConfig {
        time_limit: 60,
        cylinder_obstacle_count: 2,
        ..ScenarioConfig::default()
    };
    let a = evaluate(&mut policy, &scenario, 3, 42).unwrap();
    let b = evaluate(&mut policy, &scenario, 3, 42).unwrap();
    assert_eq!(a, b);
    for robots in 1..=10 {
        let s = ScenarioConfig {
            robot_count: robots,
            ..scenario.clone()
        };
        evaluate(&mut policy, &s, 1, 0).unwrap();
    }
}

#[test]
fn topology_mismatch_is_rejected() {
    let mut ckpt = idle_checkpoint();
    let wrong = Network::new(vec![Dense::zeros(31, 2, Activation::Tanh)]).unwrap();
    ckpt.networks = vec![wrong.clone(), wrong];
    assert!(ckpt.policy().is_err());
}

#[test]
fn best_checkpoint_selection() {
    let tmp = tempfile::tempdir().unwrap();
    let config = quick(Algorithm::Dqn, 1, 5);
    train_into(&config, tmp.path()).unwrap();
    let dir = tmp.path().join("checkpoints");
    for e in list_checkpoints(tmp.path()).unwrap() {
        fs::remove_file(e.1).unwrap();
    }

    assert!(matches!(select_best_checkpoint(tmp.path(), 2), Err(Error::Usage(_))));

    idle_checkpoint().save(&dir.join("ep10.ckpt")).unwrap();
    let best = select_best_checkpoint(tmp.path(), 2).unwrap();
    assert_eq!(best.episode, 10);

    // identical models tie on success and reward, so the later one wins
    idle_checkpoint().save(&dir.join("ep20.ckpt")).unwrap();
    let best = select_best_checkpoint(tmp.path(), 2).unwrap();
    assert_eq!(best.episode, 20);
    assert_eq!(best.report.trials, 2);
}

#[test]
fn study_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let mut base = quick(Algorithm::Dqn, 1, 15);
    base.run.checkpoint_interval = 1;
    let options = StudyOptions {
        algorithms: vec![Algorithm::Dqn],
        trials: 2,
        train_first: false,
        root: tmp.path().to_path_buf(),
    };
    assert!(matches!(run_study(StudyKind::Scalability, &base, &options), Err(Error::Usage(_))));

    let options = StudyOptions {
        train_first: true,
        ..options
    };
    let out = run_study(StudyKind::Scalability, &base, &options).unwrap();
    assert_eq!(out.rows.len(), 2 * 5);
    let csv = fs::read_to_string(&out.csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "study,algorithm,train_robots,train_failure,train_obstacles,curriculum,test_robots,test_failure,test_obstacles,gate_opening,trials,successes,success_rate"
    );
    assert_eq!(lines.count(), 10);
    assert_eq!(out.plots.len(), 2);
    assert!(fs::read_to_string(&out.plots[0]).unwrap().contains("payload-path"));

    let gate = run_study(StudyKind::Gate, &base, &options).unwrap();
    assert_eq!(gate.rows.len(), 2);
    assert!(gate.rows.iter().all(|r| r.gate_opening == Some(4.0)));
    assert_eq!(gate.rows.iter().filter(|r| r.curriculum).count(), 1);
}

#[test]
fn same_seed_same_checkpoint_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = quick(Algorithm::Ddqn, 2, 15);
    train_into(&config, &tmp.path().join("a")).unwrap();
    train_into(&config, &tmp.path().join("b")).unwrap();
    let read = |d: &str| fs::read(tmp.path().join(d).join("checkpoints").join(FINAL_CHECKPOINT)).unwrap();
    assert_eq!(read("a"), read("b"));
}
