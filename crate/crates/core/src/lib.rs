//! Model adaptation toolkit for learning-based systems.
//!
//! Long-running learned systems accumulate trained models and observed input
//! states across deployments. When a system must adapt to a new environment,
//! this crate warm-starts the work instead of retraining from scratch:
//!
//! * [`state_math`] - kernel/MMD primitives and DKW-bounded subsampling.
//! * [`transformer`] - fits the projection that aligns a target environment's
//!   inputs with a similar prior source, with regime-aware alignment and
//!   scalable source matching over a clustered repository.
//! * [`labeling`] - estimates per-sample data utility and selects which
//!   inputs to label under a budget with heterogeneous per-sample costs.
//! * [`orchestrator`] - drives the adaptation loop: warm start, per-round
//!   label-vs-train decisions, AIMD budget sizing, round logging.
//! * [`store`] - the persistent state repository with decay-aware LFU
//!   eviction, access policy tags, and privacy noise at registration.
//! * [`service`] - a framed TCP protocol exposing the repository to remote
//!   adaptation agents.
//! * [`sim`] - synthetic environments, reference learners, baseline
//!   strategies, and the benchmark harness behind the `ema` CLI.

pub mod config;
pub mod error;
pub mod labeling;
pub mod orchestrator;
pub mod service;
pub mod sim;
pub mod state_math;
pub mod store;
pub mod transformer;

pub use error::{Error, Result};
pub use state_math::{KernelSpec, StateSample, StateSet};
