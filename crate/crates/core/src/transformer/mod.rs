//! State transformation: align a target environment's inputs with a chosen
//! source environment's state space.
//!
//! The fit solves, over a shared kernel space, for the projection that
//! minimizes the maximum mean discrepancy between the projected source and
//! target while preserving data variance (transfer-component style). Skewed,
//! regime-diverse states get regime-aware treatment: both environments are
//! partitioned into operational regimes in latent space, each target regime
//! is matched to the source regime with minimum MMD, and a per-pair
//! transform keeps rare but influential regimes from being collapsed into
//! the bulk.
//!
//! Matching a request against a repository of M candidate states scales by
//! clustering the candidates with K-medoids over pairwise MMD: a request is
//! compared against K medoids and then against the chosen cluster's members,
//! for an expected cost of K + M/K, minimized at K = sqrt(M).

mod cluster;
mod codec;
mod matching;
mod regime;
mod tca;

pub use cluster::{kmedoids, optimal_cluster_count};
pub use matching::{match_source, CandidateState, MatchResult};
pub use regime::{
    apply_regime_aware, apply_regime_aware_to_source, fit_regime_aware, fit_source_aligner,
    partition_regimes, Regime, RegimeModel, SourceAligner,
};
pub use tca::{
    fit_transform, project, project_one, project_one_to_source, SourceDecoder, TransformModel,
};

pub const DEFAULT_MU: f64 = 1.0;
pub const DEFAULT_REGIMES: usize = 4;


/// Default latent dimensionality: min(8, n_ref - 1).
pub fn default_latent_dims(n_ref: usize) -> usize {
    8.min(n_ref.saturating_sub(1)).max(1)
}
