use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{list_checkpoints, Checkpoint, CheckpointMeta};
use super::config::RunConfig;
use super::evaluate::{evaluate, EvaluationReport};
use crate::env::{generate_scenario, Terminal};
use crate::error::{Error, Result};
use crate::rl::{Agent, Learner};
use crate::wire::{run_worker, serve_learner_with, ServeOptions, WorkerOptions};

pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const METRICS_LOG: &str = "metrics.log";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Column order of `metrics.log`, one tab-separated line per episode.
pub const METRICS_COLUMNS: [&str; 9] = [
    "episode",
    "outcome",
    "ticks",
    "mean_return",
    "mean_loss",
    "learn_steps",
    "epsilon",
    "gate_opening",
    "buffer_len",
];

// Salts separating the random streams derived from the master seed.
const SCENARIO_SALT: u64 = 0x5CE7_A210;
const EXPLORATION_SALT: u64 = 0xE8_91_0E;
const VALIDATION_SALT: u64 = 0x7A_11_DA7E;

/// Seed of the validation scenario set for a run seeded with `seed`. Never
/// used during training.
pub fn validation_seed(seed: u64) -> u64 {
    seed ^ VALIDATION_SALT
}

/// One line of `metrics.log`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub outcome: Terminal,
    pub ticks: u64,
    pub mean_return: f64,
    pub mean_loss: Option<f64>,
    pub learn_steps: u64,
    pub epsilon: f64,
    pub gate_opening: Option<f64>,
    pub buffer_len: usize,
}

impl EpisodeMetrics {
    pub fn to_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| v.to_string());
        let outcome = match self.outcome {
            Terminal::Running => "running",
            Terminal::Success => "success",
            Terminal::Timeout => "timeout",
        };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.episode,
            outcome,
            self.ticks,
            self.mean_return,
            opt(self.mean_loss),
            self.learn_steps,
            self.epsilon,
            opt(self.gate_opening),
            self.buffer_len
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub run_dir: PathBuf,
    pub episodes: u64,
    pub successes: u64,
    pub checkpoints: Vec<PathBuf>,
}

struct RunWriter<'a> {
    config: &'a RunConfig,
    dir: PathBuf,
    metrics: BufWriter<File>,
    successes: u64,
    checkpoints: Vec<PathBuf>,
}

impl<'a> RunWriter<'a> {
    fn create(config: &'a RunConfig, dir: &Path) -> Result<Self> {
        let mkdir = |p: &Path| {
            fs::create_dir_all(p).map_err(|e| Error::Usage(format!("cannot create {}: {e}", p.display())))
        };
        mkdir(dir)?;
        mkdir(&dir.join("checkpoints"))?;
        fs::write(dir.join(CONFIG_SNAPSHOT), config.to_toml())?;
        let mut metrics = BufWriter::new(File::create(dir.join(METRICS_LOG))?);
        writeln!(metrics, "# {}", METRICS_COLUMNS.join("\t"))?;
        Ok(Self {
            config,
            dir: dir.to_path_buf(),
            metrics,
            successes: 0,
            checkpoints: Vec::new(),
        })
    }

    fn episode_done(&mut self, agent: &Agent, m: &EpisodeMetrics) -> Result<()> {
        writeln!(self.metrics, "{}", m.to_line())?;
        self.successes += (m.outcome == Terminal::Success) as u64;
        let done = m.episode + 1;
        if done % self.config.run.checkpoint_interval == 0 {
            self.metrics.flush()?;
            let path = self.dir.join("checkpoints").join(format!("ep{done}.ckpt"));
            self.checkpoint(agent, m, &path)?;
            self.checkpoints.push(path);
        }
        Ok(())
    }

    fn checkpoint(&self, agent: &Agent, m: &EpisodeMetrics, path: &Path) -> Result<()> {
        let actor_updates = match agent {
            Agent::Policy(p) => p.actor_updates,
            Agent::Value(_) => 0,
        };
        let meta = CheckpointMeta {
            algorithm: agent.algorithm(),
            episode: m.episode + 1,
            learn_steps: agent.learn_steps(),
            actor_updates,
            epsilon: m.epsilon,
            successes: self.successes,
            last_mean_return: m.mean_return,
        };
        Checkpoint::from_agent(agent, meta).save(path)
    }

    fn finish(mut self, agent: &Agent, last: Option<&EpisodeMetrics>, episodes: u64) -> Result<TrainReport> {
        self.metrics.flush()?;
        let placeholder = EpisodeMetrics {
            episode: 0,
            outcome: Terminal::Running,
            ticks: 0,
            mean_return: 0.0,
            mean_loss: None,
            learn_steps: agent.learn_steps(),
            epsilon: 0.0,
            gate_opening: None,
            buffer_len: 0,
        };
        let mut m = last.cloned().unwrap_or(placeholder);
        m.episode = episodes.saturating_sub(1);
        if episodes == 0 {
            m.episode = 0;
        }
        let path = self.dir.join("checkpoints").join(FINAL_CHECKPOINT);
        self.checkpoint(agent, &m, &path)?;
        Ok(TrainReport {
            run_dir: self.dir,
            episodes,
            successes: self.successes,
            checkpoints: self.checkpoints,
        })
    }
}

/// Trains one shared model from the experiences of every robot.
///
/// With one worker everything runs in this thread and the run is fully
/// determined by the config: equal configs give byte-identical metrics logs
/// and checkpoints. With more workers, rollouts run on local worker threads
/// connected through the wire protocol and arrival order is not fixed.
pub fn train(config: &RunConfig) -> Result<TrainReport> {
    train_into(config, &config.run.output_dir)
}

/// [`train`] writing into `dir` instead of `run.output_dir`.
pub fn train_into(config: &RunConfig, dir: &Path) -> Result<TrainReport> {
    config.validate()?;
    if config.run.workers > 1 {
        return train_distributed(config, dir);
    }
    let seed = config.scenario.seed;
    let mut learner = Learner::new(config.run.algorithm, config.training.clone(), seed);
    let mut explore_rng = ChaCha8Rng::seed_from_u64(seed ^ EXPLORATION_SALT);
    let curriculum = config.curriculum();
    let mut writer = RunWriter::create(config, dir)?;
    let mut last = None;

    for k in 0..config.run.episodes {
        let mut scenario = config.scenario.clone();
        if let Some(c) = &curriculum {
            scenario.gate_opening = c.opening(k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SCENARIO_SALT);
        rng.set_stream(k);
        let mut episode = generate_scenario(&scenario, &mut rng)?;

        let mut loss_sum = 0.0;
        let mut losses = 0u64;
        while episode.is_running() {
            let exploration = learner.exploration();
            let actions = learner
                .agent
                .act_batch(&episode.observation_arrays(), exploration, &mut explore_rng)?;
            let experiences = episode.step(&actions)?;
            learner.insert(experiences);
            if let Some(loss) = learner.learn_step()? {
                loss_sum += loss;
                losses += 1;
            }
        }
        let m = EpisodeMetrics {
            episode: k,
            outcome: episode.terminal,
            ticks: episode.tick(),
            mean_return: episode.mean_return(),
            mean_loss: (losses > 0).then(|| loss_sum / losses as f64),
            learn_steps: learner.agent.learn_steps(),
            epsilon: learner.agent.epsilon(&learner.hyper),
            gate_opening: scenario.gate_enabled.then_some(scenario.gate_opening),
            buffer_len: learner.buffer.len(),
        };
        writer.episode_done(&learner.agent, &m)?;
        last = Some(m);
    }
    writer.finish(&learner.agent, last.as_ref(), config.run.episodes)
}

fn train_distributed(config: &RunConfig, dir: &Path) -> Result<TrainReport> {
    let seed = config.scenario.seed;
    let workers = config.run.workers;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let endpoint = listener.local_addr()?.to_string();

    let mut handles = Vec::new();
    for w in 0..workers {
        let share = config.run.episodes / workers as u64 + ((w as u64) < config.run.episodes % workers as u64) as u64;
        let mut opts = WorkerOptions::new(config.scenario.clone(), share, (seed ^ SCENARIO_SALT).wrapping_add(w as u64 + 1));
        // each worker walks its share of the schedule at the global pace
        opts.curriculum = config.curriculum().map(|mut c| {
            c.completion_episode = c.completion_episode.div_ceil(workers as u64);
            c
        });
        let endpoint = endpoint.clone();
        handles.push(thread::spawn(move || run_worker(&endpoint, &opts)));
    }
    let served = serve_training(config, dir, listener, Some(workers));
    for h in handles {
        h.join().map_err(|_| Error::Usage("rollout worker panicked".into()))??;
    }
    served
}

/// Trains from remote rollout workers: accepts `sessions` worker sessions
/// (or serves forever) on `listener` and writes a run directory like
/// [`train`], with one metrics line per episode in arrival order.
pub fn serve_training(
    config: &RunConfig,
    dir: &Path,
    listener: TcpListener,
    sessions: Option<usize>,
) -> Result<TrainReport> {
    config.validate()?;
    let seed = config.scenario.seed;
    let mut learner = Learner::new(config.run.algorithm, config.training.clone(), seed);
    let mut writer = RunWriter::create(config, dir)?;
    let options = ServeOptions {
        max_sessions: sessions,
        seed: seed ^ EXPLORATION_SALT,
        ..ServeOptions::default()
    };
    let mut count = 0u64;
    let mut last = None;
    serve_learner_with(listener, &mut learner, &options, |learner, summary| {
        let m = EpisodeMetrics {
            episode: count,
            outcome: summary.outcome,
            ticks: summary.ticks,
            mean_return: summary.mean_return,
            mean_loss: summary.mean_loss,
            learn_steps: learner.agent.learn_steps(),
            epsilon: learner.agent.epsilon(&learner.hyper),
            gate_opening: None,
            buffer_len: learner.buffer.len(),
        };
        count += 1;
        writer.episode_done(&learner.agent, &m)?;
        last = Some(m);
        Ok(())
    })?;
    writer.finish(&learner.agent, last.as_ref(), count)
}

/// Result of ranking a run's checkpoints.
#[derive(Debug, Clone)]
pub struct BestCheckpoint {
    pub episode: u64,
    pub path: PathBuf,
    pub report: EvaluationReport,
}

/// Evaluates every `checkpoints/ep{N}.ckpt` of a run on the same
/// `validation_episodes` fresh scenarios and returns the best one: highest
/// success rate, then highest mean cumulative reward, then latest episode.
pub fn select_best_checkpoint(run_dir: &Path, validation_episodes: usize) -> Result<BestCheckpoint> {
    let config = RunConfig::load(&run_dir.join(CONFIG_SNAPSHOT))?;
    let scenario = config.evaluation_scenario();
    let seed = validation_seed(config.scenario.seed);
    let mut candidates = Vec::new();
    for (episode, path) in list_checkpoints(run_dir)? {
        let mut policy = Checkpoint::load(&path)?.policy()?;
        let report = evaluate(&mut policy, &scenario, validation_episodes, seed)?;
        candidates.push(BestCheckpoint { episode, path, report });
    }
    pick_best(candidates).ok_or_else(|| {
        Error::Usage(format!("no checkpoints under {}", run_dir.join("checkpoints").display()))
    })
}

pub(crate) fn pick_best(candidates: Vec<BestCheckpoint>) -> Option<BestCheckpoint> {
    let key = |c: &BestCheckpoint| {
        (
            c.report.success_rate_or_zero(),
            c.report.mean_cumulative_reward.unwrap_or(f64::NEG_INFINITY),
            c.episode,
        )
    };
    candidates.into_iter().reduce(|best, c| {
        let (a, b) = (key(&best), key(&c));
        let better = b.0 > a.0 || (b.0 == a.0 && (b.1 > a.1 || (b.1 == a.1 && b.2 > a.2)));
        if better {
            c
        } else {
            best
        }
    })
}
