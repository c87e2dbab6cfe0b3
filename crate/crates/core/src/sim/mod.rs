//! Synthetic environments, reference learners, baseline strategies, drift
//! suites, and the CLI entry point.

pub mod cli;
pub mod drift;
pub mod env;
pub mod learner;
pub mod strategy;

pub use drift::{drift_suite, run_drift_sequence};
pub use env::{gen_environment, EnvironmentSpec, GeneratedEnv, GroundTruthOracle, ShiftSpec, Task};
pub use learner::{decode_learner, Learner, LearnerFactory, ENSEMBLE_MEMBERS};
pub use strategy::{
    fully_labeled, report_csv, run_strategy, strategy_config, ReportRow, SimSettings, Strategy,
    REPORT_HEADER,
};
