//! Training runs, checkpoints, evaluation and the evaluation studies.
//!
//! A run directory holds
//!
//! ```text
//! config.snapshot        resolved configuration (TOML)
//! metrics.log            one tab-separated line per episode, see METRICS_COLUMNS
//! checkpoints/ep{N}.ckpt every `checkpoint_interval` episodes
//! checkpoints/final.ckpt
//! ```

mod checkpoint;
mod config;
mod evaluate;
mod plot;
mod study;
mod train;

pub use checkpoint::{list_checkpoints, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{CurriculumSettings, RunConfig, RunSettings};
pub use evaluate::{
    evaluate, evaluate_logged, run_episode, Controller, EvaluationReport, ScriptedController, TrialResult,
    ZeroController,
};
pub use plot::{read_trajectory, render_trajectory_svg};
pub use study::{evaluation_seed, run_study, StudyKind, StudyOptions, StudyOutput, StudyRow};
pub use train::{
    select_best_checkpoint, serve_training, train, train_into, validation_seed, BestCheckpoint, EpisodeMetrics, TrainReport,
    CONFIG_SNAPSHOT, FINAL_CHECKPOINT, METRICS_COLUMNS, METRICS_LOG,
};
