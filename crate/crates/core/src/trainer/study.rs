use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::checkpoint::list_checkpoints;
use super::config::RunConfig;
use super::evaluate::{evaluate, evaluate_logged};
use super::plot::render_trajectory_svg;
use super::train::{select_best_checkpoint, train_into, validation_seed};
use super::Checkpoint;
use crate::env::ScenarioConfig;
use crate::error::{Error, Result};
use crate::rl::Algorithm;

const EVALUATION_SALT: u64 = 0xE7A1_0A7E;

/// Seed of the evaluation scenario set; distinct from training and validation.
pub fn evaluation_seed(seed: u64) -> u64 {
    validation_seed(seed) ^ EVALUATION_SALT
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    /// Models trained on 4 and 8 robots, tested on 2 to 10.
    Scalability,
    /// Trained with 0% or 50% failures, tested at 0% to 75%.
    Resilience,
    /// Trained with 0 or 2 cylinders, tested with 2 and 4.
    CylObstacles,
    /// Gate at its minimum opening, trained with and without curriculum.
    Gate,
}

impl StudyKind {
    pub const ALL: [StudyKind; 4] = [Self::Scalability, Self::Resilience, Self::CylObstacles, Self::Gate];

    pub fn name(self) -> &'static str {
        match self {
            Self::Scalability => "scalability",
            Self::Resilience => "resilience",
            Self::CylObstacles => "cyl-obstacles",
            Self::Gate => "gate",
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StudyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown study {s:?} (scalability|resilience|cyl-obstacles|gate)")))
    }
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub algorithms: Vec<Algorithm>,
    /// Evaluation trials per cell.
    pub trials: usize,
    /// Train any missing model instead of failing.
    pub train_first: bool,
    /// Holds `runs/`, `studies/` and `plots/`.
    pub root: PathBuf,
}

/// One cell of a result grid. Every study writes the same columns; the ones
/// a study does not vary hold the base configuration's value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub study: String,
    pub algorithm: Algorithm,
    pub train_robots: usize,
    pub train_failure: f64,
    pub train_obstacles: usize,
    pub curriculum: bool,
    pub test_robots: usize,
    pub test_failure: f64,
    pub test_obstacles: usize,
    /// Empty when the gate is off.
    pub gate_opening: Option<f64>,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub csv: PathBuf,
    pub plots: Vec<PathBuf>,
    pub rows: Vec<StudyRow>,
}

struct Variant {
    name: String,
    config: RunConfig,
    tests: Vec<ScenarioConfig>,
}

fn variants(kind: StudyKind, base: &RunConfig, algorithm: Algorithm) -> Vec<Variant> {
    let mut cfg = base.clone();
    cfg.run.algorithm = algorithm;
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = cfg.clone();
        f(&mut c);
        c
    };
    let test = |c: &RunConfig, f: &dyn Fn(&mut ScenarioConfig)| {
        let mut s = c.evaluation_scenario();
        f(&mut s);
        s
    };
    let mut out = Vec::new();
    match kind {
        StudyKind::Scalability => {
            for robots in [4, 8] {
                let config = with(&|c| c.scenario.robot_count = robots);
                let tests = [2, 4, 6, 8, 10]
                    .into_iter()
                    .map(|n| test(&config, &|s| s.robot_count = n))
                    .collect();
                out.push(Variant {
                    name: format!("{algorithm}-robots{robots}"),
                    config,
                    tests,
                });
            }
        }
        StudyKind::Resilience => {
            for robots in [4, 8] {
                for fail in [0.0, 0.5] {
                    let config = with(&|c| {
                        c.scenario.robot_count = robots;
                        c.scenario.max_failure_fraction = fail;
                    });
                    let tests = [0.0, 0.25, 0.5, 0.75]
                        .into_iter()
                        .map(|f| test(&config, &|s| s.max_failure_fraction = f))
                        .collect();
                    out.push(Variant {
                        name: format!("{algorithm}-robots{robots}-fail{}", (fail * 100.0) as u32),
                        config,
                        tests,
                    });
                }
            }
        }
        StudyKind::CylObstacles => {
            for trained in [0, 2] {
                let config = with(&|c| c.scenario.cylinder_obstacle_count = trained);
                let tests = [2, 4]
                    .into_iter()
                    .map(|n| test(&config, &|s| s.cylinder_obstacle_count = n))
                    .collect();
                out.push(Variant {
                    name: format!("{algorithm}-obstacles{trained}"),
                    config,
                    tests,
                });
            }
        }
        StudyKind::Gate => {
            for curriculum in [true, false] {
                let config = with(&|c| {
                    c.scenario.gate_enabled = true;
                    c.curriculum.enabled = curriculum;
                    c.scenario.gate_opening = c.scenario.min_gate_opening();
                });
                let tests = vec![test(&config, &|s| s.gate_opening = s.min_gate_opening())];
                let tag = if curriculum { "curriculum" } else { "flat" };
                out.push(Variant {
                    name: format!("{algorithm}-gate-{tag}"),
                    config,
                    tests,
                });
            }
        }
    }
    out
}

/// Evaluates the best checkpoint of every model a study needs on its test
/// grid, writing `studies/{kind}.csv` and one trajectory plot per model.
pub fn run_study(kind: StudyKind, base: &RunConfig, options: &StudyOptions) -> Result<StudyOutput> {
    base.validate()?;
    let studies = options.root.join("studies");
    let plots = options.root.join("plots");
    fs::create_dir_all(&studies)?;
    fs::create_dir_all(&plots)?;

    let mut rows = Vec::new();
    let mut plot_paths = Vec::new();
    for &algorithm in &options.algorithms {
        for v in variants(kind, base, algorithm) {
            let dir = options.root.join("runs").join(&v.name);
            ensure_trained(&v, &dir, options.train_first)?;
            let best = select_best_checkpoint(&dir, v.config.run.validation_episodes)?;
            let mut policy = Checkpoint::load(&best.path)?.policy()?;
            let seed = evaluation_seed(v.config.scenario.seed);
            for (i, scenario) in v.tests.iter().enumerate() {
                let report = if i == 0 {
                    let path = plots.join(format!("{kind}-{}.svg", v.name));
                    let mut first = Vec::new();
                    let report = evaluate_logged(&mut policy, scenario, options.trials, seed, |trial, r| {
                        if trial == 0 {
                            first.push(r.clone());
                        }
                        Ok(())
                    })?;
                    if !first.is_empty() {
                        fs::write(&path, render_trajectory_svg(&first)?)?;
                        plot_paths.push(path);
                    }
                    report
                } else {
                    evaluate(&mut policy, scenario, options.trials, seed)?
                };
                rows.push(StudyRow {
                    study: kind.name().to_owned(),
                    algorithm,
                    train_robots: v.config.scenario.robot_count,
                    train_failure: v.config.scenario.max_failure_fraction,
                    train_obstacles: v.config.scenario.cylinder_obstacle_count,
                    curriculum: v.config.curriculum().is_some(),
                    test_robots: scenario.robot_count,
                    test_failure: scenario.max_failure_fraction,
                    test_obstacles: scenario.cylinder_obstacle_count,
                    gate_opening: scenario.gate_enabled.then_some(scenario.gate_opening),
                    trials: report.trials,
                    successes: report.successes,
                    success_rate: report.success_rate,
                });
            }
        }
    }

    let csv_path = studies.join(format!("{kind}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Io(e.into()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(StudyOutput {
        csv: csv_path,
        plots: plot_paths,
        rows,
    })
}

fn ensure_trained(v: &Variant, dir: &Path, train_first: bool) -> Result<()> {
    if !list_checkpoints(dir)?.is_empty() {
        return Ok(());
    }
    if !train_first {
        return Err(Error::Usage(format!(
            "no checkpoints for model {} in {}; train it there or pass --train-first",
            v.name,
            dir.display()
        )));
    }
    train_into(&v.config, dir)?;
    Ok(())
}
