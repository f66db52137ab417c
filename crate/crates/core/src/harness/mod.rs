//! Configuration, orchestration and the evaluation protocol.

pub mod config;
pub mod evaluate;
pub mod experiments;

pub use config::{EvalConfig, ExperimentConfig, GridConfig, GridKind, RunRecord};
pub use evaluate::{attack_heatmap, evaluate, pooled_standard_error, EvalReport, Heatmap, IdlePatrol};
pub use experiments::{
    eval_seed, export_trace, load_player, prepare, replay_trace, run_algorithm, run_pipeline, sweep_level,
    timing_report, uncertainty_sweep, write_sweep_csv, write_timing_csv, AlgorithmResult, EvalSummary, Stage,
    SweepRow, TimingRow, TraceManifest,
};
