use std::fs;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use agrl::env::{ScenarioConfig, TrajectoryRecord};
use agrl::rl::Algorithm;
use agrl::trainer::{
    evaluate_logged, evaluation_seed, read_trajectory, render_trajectory_svg, run_study, select_best_checkpoint,
    serve_training, train, Checkpoint, RunConfig, StudyKind, StudyOptions,
};
use agrl::wire::{run_worker, WorkerOptions};
use agrl::Error;
use clap::{Args, Parser, Subcommand};

/// Train and evaluate decentralized controllers for robots carrying a shared payload.
#[derive(Parser, Debug)]
#[command(name = "agrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one shared model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint with exploration off.
    Evaluate(EvaluateArgs),
    /// Run an evaluation study and write its CSV grid and plots.
    Study(StudyArgs),
    /// Run episodes against a learner over the wire protocol.
    Worker(WorkerArgs),
    /// Serve a learner to remote workers and write a run directory.
    Serve(ServeArgs),
    /// Render a trajectory log to SVG.
    Replay(ReplayArgs),
    /// Check a configuration file and print the resolved configuration.
    ValidateConfig(ValidateArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML configuration; defaults apply to anything left out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides scenario.seed).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.scenario.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_parser = parse_algorithm)]
    algo: Option<Algorithm>,
    #[arg(long)]
    episodes: Option<u64>,
    /// Run directory (overrides run.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Also pick the best checkpoint on validation scenarios after training.
    #[arg(long)]
    select_best: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scenario settings; the checkpoint holds only the model.
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    robots: Option<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Maximum failure fraction in [0, 1].
    #[arg(long)]
    failures: Option<f64>,
    #[arg(long)]
    obstacles: Option<usize>,
    /// Enable the gate at this opening in meters.
    #[arg(long)]
    gate_opening: Option<f64>,
    /// Write every trial's trajectory as line-delimited JSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(long, value_parser = parse_study)]
    kind: StudyKind,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated algorithms; defaults to run.algorithm.
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
    algos: Vec<Algorithm>,
    /// Trials per cell; defaults to run.evaluation_trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Use 500 trials per cell.
    #[arg(long, conflicts_with = "trials")]
    full: bool,
    /// Train any model that has no checkpoints yet.
    #[arg(long)]
    train_first: bool,
    /// Directory holding runs/, studies/ and plots/ (defaults to run.output_dir).
    #[arg(long)]
    root: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WorkerArgs {
    /// Learner address as host:port.
    #[arg(long)]
    endpoint: String,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    episodes: u64,
    #[arg(long, default_value_t = 5)]
    retries: u32,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Address to listen on as host:port.
    #[arg(long)]
    endpoint: String,
    #[command(flatten)]
    config: ConfigArgs,
    /// Stop after this many worker sessions have finished.
    #[arg(long)]
    sessions: Option<usize>,
    /// Run directory (overrides run.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_study(s: &str) -> Result<StudyKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) | Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Study(a) => cmd_study(a),
        Command::Worker(a) => cmd_worker(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Replay(a) => cmd_replay(a),
        Command::ValidateConfig(a) => {
            let config = RunConfig::load(&a.config)?;
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let mut config = a.config.load()?;
    if let Some(algo) = a.algo {
        config.run.algorithm = algo;
    }
    if let Some(n) = a.episodes {
        config.run.episodes = n;
    }
    if let Some(out) = a.out {
        config.run.output_dir = out;
    }
    if let Some(w) = a.workers {
        config.run.workers = w;
    }
    config.validate()?;
    eprintln!(
        "training {} for {} episodes into {}",
        config.run.algorithm,
        config.run.episodes,
        config.run.output_dir.display()
    );
    let report = train(&config)?;
    eprintln!(
        "done: {} episodes, {} successes, {} checkpoints",
        report.episodes,
        report.successes,
        report.checkpoints.len()
    );
    if a.select_best {
        let best = select_best_checkpoint(&report.run_dir, config.run.validation_episodes)?;
        println!(
            "best checkpoint: {} (episode {}, success rate {})",
            best.path.display(),
            best.episode,
            fmt_rate(best.report.success_rate)
        );
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Error> {
    let config = a.config.load()?;
    let mut scenario: ScenarioConfig = config.evaluation_scenario();
    if let Some(n) = a.robots {
        scenario.robot_count = n;
    }
    if let Some(f) = a.failures {
        scenario.max_failure_fraction = f;
    }
    if let Some(n) = a.obstacles {
        scenario.cylinder_obstacle_count = n;
    }
    if let Some(g) = a.gate_opening {
        scenario.gate_enabled = true;
        scenario.gate_opening = g;
    }
    scenario.validate()?;
    let mut policy = Checkpoint::load(&a.checkpoint)?.policy()?;
    let mut log = match &a.log {
        Some(path) => Some(BufWriter::new(fs::File::create(path)?)),
        None => None,
    };
    let report = evaluate_logged(
        &mut policy,
        &scenario,
        a.trials,
        evaluation_seed(scenario.seed),
        |_, r: &TrajectoryRecord| match log.as_mut() {
            Some(w) => r.write_line(w),
            None => Ok(()),
        },
    )?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    println!("trials: {}", report.trials);
    println!("successes: {}", report.successes);
    println!("success_rate: {}", fmt_rate(report.success_rate));
    println!("mean_episode_length: {}", fmt_opt(report.mean_episode_length));
    println!("mean_cumulative_reward: {}", fmt_opt(report.mean_cumulative_reward));
    Ok(())
}

fn cmd_study(a: StudyArgs) -> Result<(), Error> {
    let config = a.config.load()?;
    let algorithms = if a.algos.is_empty() {
        vec![config.run.algorithm]
    } else {
        a.algos
    };
    let trials = if a.full {
        500
    } else {
        a.trials.unwrap_or(config.run.evaluation_trials)
    };
    let options = StudyOptions {
        algorithms,
        trials,
        train_first: a.train_first,
        root: a.root.unwrap_or_else(|| config.run.output_dir.clone()),
    };
    let out = run_study(a.kind, &config, &options)?;
    println!("{}", out.csv.display());
    for p in &out.plots {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_worker(a: WorkerArgs) -> Result<(), Error> {
    let config = a.config.load()?;
    let mut opts = WorkerOptions::new(config.scenario.clone(), a.episodes, config.scenario.seed);
    opts.curriculum = config.curriculum();
    opts.connect_attempts = a.retries.max(1);
    opts.backoff = Duration::from_millis(200);
    let report = run_worker(&a.endpoint, &opts)?;
    println!(
        "episodes: {}\nsuccesses: {}\nexperiences_sent: {}",
        report.episodes, report.successes, report.experiences_sent
    );
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), Error> {
    let mut config = a.config.load()?;
    if let Some(out) = a.out {
        config.run.output_dir = out;
    }
    let listener = TcpListener::bind(&a.endpoint)?;
    eprintln!("listening on {}", listener.local_addr()?);
    let report = serve_training(&config, &config.run.output_dir, listener, a.sessions)?;
    eprintln!("done: {} episodes from workers", report.episodes);
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<(), Error> {
    let text = read_text(&a.log)?;
    let records = read_trajectory(&text)?;
    fs::write(&a.out, render_trajectory_svg(&records)?)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))
}

fn fmt_rate(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.4}"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| v.to_string())
}
