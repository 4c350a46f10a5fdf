//! Experiment orchestration: configuration, seeded runs and output files.

pub mod closed_loop;
pub mod config;
pub mod emit;
pub mod experiments;
pub mod presets;
pub mod rng;

pub use closed_loop::{run_closed_loop, ClosedLoopRun, RunSummary, TrajectoryRow};
pub use config::ExperimentConfig;
pub use emit::{emit, read_trajectory_csv, write_json, Format, Tabular};
pub use experiments::{
    run_oscillation, run_stp_surface, run_sweep, run_verify, simulate, OscillationRun, OscillationSample, StpRecord,
    VerifyReport, VerifySettings,
};
