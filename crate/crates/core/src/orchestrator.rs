//! The adaptation loop: warm-start from the repository, then per round
//! decide between continued training and a new labeling round, sizing
//! budgets by feedback.
//!
//! Per-round decision. With uncertainty totals U over a fixed evaluation
//! pool, the last round's training reduced uncertainty by R_cont =
//! U_prev - U_now at cost C. A small proxy slice of the unlabeled pool
//! (fraction p, labeled with budget p*B and trained on a throwaway clone)
//! estimates what a full labeling round would add: delta_u_label (scaled by
//! 1/p) at delta_n = selected/p new samples, inflating the next round's
//! training cost to C* = C * (1 + delta_n/n). A labeling round triggers
//! only when
//!
//! ```text
//! (R_cont + delta_u_label) / (C* + B)  >  R_cont / C
//! ```
//!
//! Budget sizing tracks the realized ratio (U_prev - U_now) / (C + B_prev)
//! between rounds: a drop means training is stalling, so the budget grows
//! additively to bring in more data; otherwise it halves to stop
//! over-labeling. The budget never falls below one median labeling cost.
//!
//! Round logs are complete and replayable: every decision can be recomputed
//! from the logged quantities.

use crate::error::{Error, Result};
use crate::labeling::{
    run_labeling_round_with, Budget, LabelingOracle, SelectionPolicy, UncertaintySource,
};
use crate::state_math::{
    dkw_sample_size, median_bandwidth, subsample, KernelSpec, StateSet, DEFAULT_DKW_DELTA,
    DEFAULT_DKW_EPSILON,
};
use crate::store::{NewEntry, StateStore};
use crate::transformer::{
    apply_regime_aware_to_source, fit_regime_aware, fit_source_aligner, match_source, MatchResult,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A trainable model as the orchestrator sees it.
pub trait AdaptiveModel: UncertaintySource {
    /// Feature dimension this model consumes. A warm-started blob whose
    /// dimension disagrees with the working pool is discarded.
    fn input_dim(&self) -> usize;
    /// One training pass over the labeled batch; returns the training cost
    /// in abstract units (sample-epochs).
    fn train_step(&mut self, batch: &StateSet, epochs: usize) -> f64;
    /// Clone used for benefit probes, so a probe cannot corrupt training
    /// state.
    fn boxed_clone(&self) -> Box<dyn AdaptiveModel>;
    fn to_blob(&self) -> Vec<u8>;
    /// Task accuracy in [0, 1] on a labeled test set.
    fn accuracy(&self, test: &StateSet) -> f64;
}

/// Builds models for the orchestrator: fresh ones for cold starts, decoded
/// ones for warm starts.
pub trait ModelFactory {
    fn fresh(&self, dim: usize, seed: u64) -> Box<dyn AdaptiveModel>;
    fn from_blob(&self, blob: &[u8]) -> Result<Box<dyn AdaptiveModel>>;
}

/// How to initialize the model and inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStart {
    /// Match a source state, fit the regime-aware transform, feed
    /// transformed inputs to the matched model.
    MatchedTransform,
    /// Reuse the most recently registered visible model, untransformed.
    LatestGlobal,
    /// Fresh model on raw inputs.
    ColdStart,
}

/// When to run labeling rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerPolicy {
    /// Proxy-probe benefit estimation against continued training.
    CostBenefit,
    /// Label every round with the initial budget (baseline behavior).
    EveryRound,
}

/// Loop configuration.
#[derive(Debug, Clone)]
pub struct AdaptationConfig {
    /// Proxy fraction p of the unlabeled pool.
    pub proxy_fraction: f64,
    /// Round-0 labeling budget B_0.
    pub initial_budget: f64,
    /// AIMD additive increment; defaults to B_0 / 10.
    pub aimd_increment: Option<f64>,
    /// Stop once test accuracy reaches this.
    pub target_accuracy: Option<f64>,
    /// Maximum training rounds.
    pub max_rounds: usize,
    /// Epochs charged per training round.
    pub epochs_per_round: usize,
    /// Latent dimensionality of the transform; `None` keeps the input
    /// dimension so model blobs stay compatible across environments.
    pub latent_dims: Option<usize>,
    pub mu: f64,
    pub regimes: usize,
    /// Cap on per-side fit samples (the DKW default is a few hundred).
    pub fit_sample_cap: usize,
    /// Training steps spent replaying the matched source's labeled samples
    /// (projected into the shared space) before round 0. This is the data
    /// half of the warm start; its compute is charged as training cost.
    pub warm_source_steps: usize,
    /// Matched sources farther than this MMD are not reused: a distant
    /// source transfers negatively, and cold-starting is cheaper. MMD under
    /// a median-heuristic bandwidth is dimensionless, so one constant
    /// serves across tasks.
    pub max_warm_mmd: f64,
    pub warm_start: WarmStart,
    pub selection: SelectionPolicy,
    pub trigger: TriggerPolicy,
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            proxy_fraction: 0.01,
            initial_budget: 100.0,
            aimd_increment: None,
            target_accuracy: None,
            max_rounds: 30,
            epochs_per_round: 1,
            latent_dims: None,
            mu: crate::transformer::DEFAULT_MU,
            regimes: 1,
            fit_sample_cap: 738,
            warm_source_steps: 3,
            max_warm_mmd: 0.15,
            warm_start: WarmStart::MatchedTransform,
            selection: SelectionPolicy::UtilityPerCost,
            trigger: TriggerPolicy::CostBenefit,
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    fn validate(&self) -> Result<()> {
        if !(self.proxy_fraction > 0.0 && self.proxy_fraction < 1.0) {
            return Err(Error::input(format!(
                "proxy fraction must lie in (0, 1), got {}",
                self.proxy_fraction
            )));
        }
        if !(self.initial_budget >= 0.0) {
            return Err(Error::input("initial budget must be nonnegative"));
        }
        if self.max_rounds == 0 || self.epochs_per_round == 0 {
            return Err(Error::input("rounds and epochs must be positive"));
        }
        Ok(())
    }
}

/// Projected benefit of one labeling round, estimated on the proxy slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenefitEstimate {
    /// Projected uncertainty reduction from labeling, scaled by 1/p.
    pub delta_u_label: f64,
    /// Projected new-sample count, |selected in proxy| / p.
    pub delta_n: f64,
}

impl BenefitEstimate {
    pub const ZERO: BenefitEstimate = BenefitEstimate {
        delta_u_label: 0.0,
        delta_n: 0.0,
    };
}

/// One row of the round log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    /// Total uncertainty over the fixed evaluation pool after this round's
    /// training step.
    pub u_t: f64,
    /// Training cost of this round.
    pub c_t: f64,
    /// Labeling budget available this round.
    pub b_t: f64,
    /// Labeled-sample count entering this round.
    pub n_t: usize,
    pub labeled_this_round: usize,
    pub cost_labeled: f64,
    pub triggered: bool,
    pub ratio_cont: f64,
    pub ratio_label: f64,
}

/// Round log header, fixed column order.
pub const ROUND_LOG_HEADER: &str =
    "t,U_t,C_t,B_t,n_t,labeled_this_round,cost_labeled,triggered,ratio_cont,ratio_label";

/// Serialize a round log as CSV.
pub fn round_log_csv(rounds: &[RoundRecord]) -> String {
    let mut out = String::from(ROUND_LOG_HEADER);
    out.push('\n');
    for r in rounds {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.u_t,
            r.c_t,
            r.b_t,
            r.n_t,
            r.labeled_this_round,
            r.cost_labeled,
            r.triggered,
            r.ratio_cont,
            r.ratio_label
        ));
    }
    out
}

/// Everything adapt() produces.
#[derive(Debug)]
pub struct AdaptOutcome {
    pub model_blob: Vec<u8>,
    /// Working pool (transformed when a transform was applied) with the
    /// labels acquired during adaptation.
    pub pool: StateSet,
    pub rounds: Vec<RoundRecord>,
    pub matched: Option<MatchResult>,
    /// Serialized transform shipped to the agent, when one was fitted.
    pub transform_blob: Option<Vec<u8>>,
    pub registered_key: Option<String>,
    pub final_accuracy: Option<f64>,
    /// First round index at which target accuracy was reached.
    pub rounds_to_target: Option<usize>,
    /// Training cost of the warm-start replay of source samples; already
    /// included in `total_training_cost`, outside the round log.
    pub warm_start_cost: f64,
    pub total_training_cost: f64,
    pub total_labeling_cost: f64,
    /// Set when the store was unavailable and the run fell back to cold
    /// start.
    pub store_warning: Option<String>,
}

/// The adaptation request.
#[derive(Debug, Clone)]
pub struct AdaptRequest {
    pub env_id: String,
    /// Unlabeled (or partially labeled) input pool.
    pub pool: StateSet,
    /// Labeled held-out set for accuracy tracking; never trained on.
    pub test: Option<StateSet>,
    pub org_tag: String,
    pub config: AdaptationConfig,
}

/// Training cost inflation from adding delta_n samples to n_t:
/// C* = C (1 + delta_n / n). A degenerate start (n = 0) doubles the cost.
pub fn projected_cost(c_t: f64, n_t: usize, delta_n: f64) -> f64 {
    if n_t == 0 {
        return c_t * 2.0;
    }
    c_t * (1.0 + delta_n / n_t as f64)
}

/// The labeling trigger, evaluated on positive reductions.
///
/// R_cont = u_prev - u_now is the last completed round's uncertainty
/// reduction at cost c_t. Labeling is projected to add delta_u_label on top
/// at inflated cost C* plus the budget b_t. When training has stalled
/// (R_cont <= 0), label whenever the probe saw any benefit at all.
pub fn should_label(
    u_prev: f64,
    u_now: f64,
    c_t: f64,
    n_t: usize,
    benefit: &BenefitEstimate,
    b_t: f64,
) -> bool {
    let r_cont = u_prev - u_now;
    if r_cont <= 0.0 {
        return benefit.delta_u_label > 0.0;
    }
    let r_label = r_cont + benefit.delta_u_label;
    let c_star = projected_cost(c_t, n_t, benefit.delta_n);
    r_label / (c_star + b_t) > r_cont / c_t
}

/// AIMD budget update: a dropping realized ratio grows the budget by
/// `alpha`; otherwise (including ties) it halves. Floored at `floor`.
pub fn update_budget_aimd(
    b_prev: f64,
    ratio_prev: f64,
    ratio_now: f64,
    alpha: f64,
    floor: f64,
) -> f64 {
    let next = if ratio_now < ratio_prev {
        b_prev + alpha
    } else {
        b_prev / 2.0
    };
    next.max(floor)
}

/// Total model uncertainty over a fixed evaluation pool.
pub fn total_uncertainty<M: UncertaintySource + ?Sized>(
    model: &M,
    pool: &StateSet,
) -> Result<f64> {
    let mut sum = 0.0;
    for s in &pool.samples {
        sum += model.utility(&s.features)?;
    }
    Ok(sum)
}

/// What a benefit probe produced: the estimate plus the proxy labels it
/// bought along the way.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOutcome {
    pub benefit: BenefitEstimate,
    pub cost_paid: f64,
    pub labeled: usize,
}

impl ProbeOutcome {
    const ZERO: ProbeOutcome = ProbeOutcome {
        benefit: BenefitEstimate::ZERO,
        cost_paid: 0.0,
        labeled: 0,
    };
}

/// Estimate the benefit of one labeling round using the proxy slice.
///
/// Labels the proxy under budget p*B_t (labels are kept), takes one training
/// step on a cloned model over the newly labeled proxy samples, and scales
/// the observed proxy-pool uncertainty reduction by 1/p. Returns zero on an
/// empty proxy.
#[allow(clippy::too_many_arguments)]
pub fn estimate_benefit(
    model: &dyn AdaptiveModel,
    pool: &mut StateSet,
    proxy_indices: &[usize],
    p: f64,
    b_t: f64,
    epochs: usize,
    oracle: &mut dyn LabelingOracle,
    seed: u64,
) -> Result<ProbeOutcome> {
    if proxy_indices.is_empty() {
        return Ok(ProbeOutcome::ZERO);
    }
    let proxy_budget = Budget::new((p * b_t).max(0.0))?;
    if proxy_budget.remaining() == 0.0 {
        return Ok(ProbeOutcome::ZERO);
    }

    let mut proxy_view = StateSet::new(
        pool.env_id.clone(),
        proxy_indices
            .iter()
            .map(|&i| pool.samples[i].clone())
            .collect(),
        pool.kernel,
    )?;

    let mut probe = model.boxed_clone();
    let u_before = total_uncertainty(probe.as_ref(), &proxy_view)?;
    let outcome = run_labeling_round_with(
        SelectionPolicy::UtilityPerCost,
        &mut proxy_view,
        Some(proxy_indices),
        probe.as_ref(),
        proxy_budget,
        oracle,
        seed,
    )?;
    // Proxy labels are retained in the main pool, not wasted.
    for &vi in &outcome.labeled {
        pool.samples[proxy_indices[vi]] = proxy_view.samples[vi].clone();
    }
    if outcome.labeled.is_empty() {
        return Ok(ProbeOutcome {
            benefit: BenefitEstimate::ZERO,
            cost_paid: outcome.cost_paid,
            labeled: 0,
        });
    }
    let newly_labeled = StateSet::new(
        proxy_view.env_id.clone(),
        outcome
            .labeled
            .iter()
            .map(|&vi| proxy_view.samples[vi].clone())
            .collect(),
        proxy_view.kernel,
    )?;
    probe.train_step(&newly_labeled, epochs);
    let u_after = total_uncertainty(probe.as_ref(), &proxy_view)?;

    Ok(ProbeOutcome {
        benefit: BenefitEstimate {
            delta_u_label: ((u_before - u_after) / p).max(0.0),
            delta_n: outcome.labeled.len() as f64 / p,
        },
        cost_paid: outcome.cost_paid,
        labeled: outcome.labeled.len(),
    })
}

/// Per-column (mean, std) over a set.
fn feature_stats(set: &StateSet) -> Vec<(f64, f64)> {
    let d = set.dim();
    let n = set.len() as f64;
    (0..d)
        .map(|j| {
            let mean = set.samples.iter().map(|s| s.features[j]).sum::<f64>() / n;
            let var = set
                .samples
                .iter()
                .map(|s| (s.features[j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let std = var.sqrt();
            (mean, if std > 1e-12 { std } else { 1.0 })
        })
        .collect()
}

fn apply_stats(set: &mut StateSet, stats: &[(f64, f64)]) {
    for s in &mut set.samples {
        for (j, f) in s.features.iter_mut().enumerate() {
            *f = (*f - stats[j].0) / stats[j].1;
        }
    }
}

fn labeled_subset(pool: &StateSet) -> Option<StateSet> {
    let labeled: Vec<_> = pool
        .samples
        .iter()
        .filter(|s| s.label.is_some())
        .cloned()
        .collect();
    if labeled.is_empty() {
        None
    } else {
        Some(StateSet::new(pool.env_id.clone(), labeled, pool.kernel).expect("nonempty"))
    }
}

fn median_cost(pool: &StateSet) -> f64 {
    let mut costs: Vec<f64> = pool.samples.iter().map(|s| s.labeling_cost).collect();
    costs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if costs.is_empty() {
        1.0
    } else {
        costs[costs.len() / 2]
    }
}

/// Run the full adaptation loop.
///
/// Warm-starts model and data from the repository, interleaves training
/// with budgeted labeling rounds per the trigger rule, and registers the
/// adapted model and a transformed sample subset back into the store. A
/// missing or failing store degrades to a cold start with a warning in the
/// outcome rather than an error.
pub fn adapt(
    request: AdaptRequest,
    mut store: Option<&mut StateStore>,
    oracle: &mut dyn LabelingOracle,
    factory: &dyn ModelFactory,
    now: f64,
) -> Result<AdaptOutcome> {
    request.config.validate()?;
    let cfg = &request.config;
    let dim = request.pool.dim();
    let latent_dims = cfg.latent_dims.unwrap_or(dim);
    let mut warning = None;

    // Warm start: source matching, transform fit, model initialization.
    let mut matched = None;
    let mut transform_blob = None;
    let mut working_pool = request.pool.clone();
    let mut test = request.test.clone();
    let mut model: Option<Box<dyn AdaptiveModel>> = None;
    // Labeled source samples projected into the shared space; replayed as
    // free training data before round 0.
    let mut warm_batch: Option<StateSet> = None;

    match cfg.warm_start {
        WarmStart::ColdStart => {}
        WarmStart::LatestGlobal => {
            if let Some(store) = store.as_deref() {
                if let Some(entry) = store
                    .lookup_visible(&request.org_tag)
                    .into_iter()
                    .max_by_key(|e| e.recency)
                {
                    match factory.from_blob(&entry.model_blob) {
                        Ok(m) => model = Some(m),
                        Err(e) => warning = Some(format!("stale model blob ignored: {e}")),
                    }
                }
            } else {
                warning = Some("store unreachable; proceeding cold".into());
            }
        }
        WarmStart::MatchedTransform => match store.as_deref() {
            None => warning = Some("store unreachable; proceeding cold".into()),
            Some(store_ref) => {
                let candidates = store_ref.candidates_for(&request.org_tag);
                if !candidates.is_empty() {
                    let res = match_source(&request.pool, &candidates)?;
                    if res.mmd_distance > cfg.max_warm_mmd {
                        warning = Some(format!(
                            "best source {} at MMD {:.4} exceeds the reuse bound {}; cold start",
                            res.source_env_id, res.mmd_distance, cfg.max_warm_mmd
                        ));
                        matched = Some(res);
                    } else {
                    let entry = store_ref
                        .entry(&res.source_env_id)
                        .expect("matched entry exists");
                    let source_samples = entry.samples.clone();
                    let blob = entry.model_blob.clone();
                    let env_id = entry.env_id.clone();

                    // Fit on DKW-capped subsets with a shared median
                    // bandwidth over the pair.
                    let cap = cfg
                        .fit_sample_cap
                        .min(dkw_sample_size(DEFAULT_DKW_EPSILON, DEFAULT_DKW_DELTA)?);
                    let mut src = subsample(&source_samples, cap, cfg.seed);
                    let mut tgt = subsample(&request.pool, cap, cfg.seed.wrapping_add(1));
                    let bw = median_bandwidth(&src, &tgt);
                    let spec = KernelSpec::gaussian(bw)?;
                    src.kernel = spec;
                    tgt.kernel = spec;
                    let regimes = cfg.regimes.min(src.len()).min(tgt.len()).max(1);
                    let ld = latent_dims.min(src.len() + tgt.len());
                    let rm = fit_regime_aware(&src, &tgt, regimes, ld, cfg.mu, cfg.seed)?;
                    // Asymmetric application: carry target inputs into the
                    // source's own input space, where the matched model and
                    // its labeled data already live.
                    let aligner = fit_source_aligner(&rm)?;
                    working_pool = apply_regime_aware_to_source(&rm, &aligner, &request.pool)?;
                    if let Some(t) = &test {
                        test = Some(apply_regime_aware_to_source(&rm, &aligner, t)?);
                    }
                    // The source's labeled samples are free training data,
                    // already in the space the pool was carried into.
                    let labeled_src: Vec<_> = source_samples
                        .samples
                        .iter()
                        .filter(|s| s.label.is_some())
                        .cloned()
                        .collect();
                    if !labeled_src.is_empty() {
                        warm_batch = Some(StateSet::new(
                            source_samples.env_id.clone(),
                            labeled_src,
                            source_samples.kernel,
                        )?);
                    }
                    transform_blob = Some(rm.to_bytes());
                    match factory.from_blob(&blob) {
                        Ok(m) => model = Some(m),
                        Err(e) => warning = Some(format!("stale model blob ignored: {e}")),
                    }
                    matched = Some(res);
                    if let Some(store) = store.as_deref_mut() {
                        let _ = store.touch(&env_id, now);
                    }
                    }
                }
            }
        },
    }
    if let Some(m) = &model {
        if m.input_dim() != working_pool.dim() {
            warning = Some(format!(
                "warm model expects dimension {}, pool has {}; starting fresh",
                m.input_dim(),
                working_pool.dim()
            ));
            model = None;
        }
    }

    // Normalize whatever the learner will see (raw or latent coordinates)
    // to pool statistics: latent charts carry eigenvalue anisotropy and raw
    // telemetry carries per-environment units, and either starves plain
    // gradient descent. The same affine map applies to the test set and the
    // replayed source batch.
    let stats = feature_stats(&working_pool);
    apply_stats(&mut working_pool, &stats);
    if let Some(t) = &mut test {
        apply_stats(t, &stats);
    }
    if let Some(b) = &mut warm_batch {
        apply_stats(b, &stats);
    }

    // Data half of the warm start: replay the source's labeled samples.
    // When a source model blob was loaded, it races a fresh model through
    // the replay and the lower-uncertainty one proceeds; a blob whose
    // training geometry disagrees with this fit's latent chart loses the
    // race instead of poisoning the run.
    let mut warm_start_cost = 0.0;
    let mut model = match (model, &warm_batch) {
        (None, None) => factory.fresh(working_pool.dim(), cfg.seed),
        (Some(m), None) => m,
        (None, Some(batch)) => {
            let mut fresh = factory.fresh(working_pool.dim(), cfg.seed);
            for _ in 0..cfg.warm_source_steps {
                warm_start_cost += fresh.train_step(batch, cfg.epochs_per_round);
            }
            fresh
        }
        (Some(mut blob_init), Some(batch)) => {
            let mut fresh = factory.fresh(working_pool.dim(), cfg.seed);
            for _ in 0..cfg.warm_source_steps {
                warm_start_cost += fresh.train_step(batch, cfg.epochs_per_round);
                warm_start_cost += blob_init.train_step(batch, cfg.epochs_per_round);
            }
            let u_fresh = total_uncertainty(fresh.as_ref(), &working_pool)?;
            let u_blob = total_uncertainty(blob_init.as_ref(), &working_pool)?;
            if u_blob <= u_fresh {
                blob_init
            } else {
                fresh
            }
        }
    };

    // Fixed evaluation pool: the working pool at adaptation start.
    let eval_pool = working_pool.clone();
    let alpha = cfg.aimd_increment.unwrap_or(cfg.initial_budget / 10.0);
    let floor = median_cost(&working_pool).min(cfg.initial_budget.max(f64::MIN_POSITIVE));

    // Fixed proxy slice of the unlabeled pool.
    let mut proxy_indices: Vec<usize> = Vec::new();
    if cfg.trigger == TriggerPolicy::CostBenefit {
        let unlabeled: Vec<usize> = working_pool
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label.is_none())
            .map(|(i, _)| i)
            .collect();
        let want = ((cfg.proxy_fraction * unlabeled.len() as f64).ceil() as usize)
            .min(unlabeled.len());
        let mut idx = unlabeled;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x70c0_57a7);
        idx.partial_shuffle(&mut rng, want);
        idx.truncate(want);
        idx.sort_unstable();
        proxy_indices = idx;
    }

    let mut rounds: Vec<RoundRecord> = Vec::new();
    let mut total_training_cost = warm_start_cost;
    let mut total_labeling_cost = 0.0;
    let mut rounds_to_target = None;
    let mut final_accuracy = None;

    let u_init = total_uncertainty(model.as_ref(), &eval_pool)?;
    let mut u_prev_prev = u_init; // U_{t-2}
    let mut u_prev = u_init; // U_{t-1}
    let mut budget_now = cfg.initial_budget; // B_t for the running round
    let mut budget_prev = cfg.initial_budget; // B_{t-1}
    let mut ratio_prev: Option<f64> = None; // realized ratio of round t-2
    let mut ratio_now: Option<f64> = None; // realized ratio of round t-1
    let mut c_prev = 0.0f64;

    for t in 0..cfg.max_rounds {
        let n_t = working_pool
            .samples
            .iter()
            .filter(|s| s.label.is_some())
            .count();

        // Budget sizing: AIMD needs two realized ratios, so the first two
        // rounds run on B_0.
        if t >= 2 {
            if let (Some(rp), Some(rn)) = (ratio_prev, ratio_now) {
                let next = update_budget_aimd(budget_now, rp, rn, alpha, floor);
                budget_prev = budget_now;
                budget_now = next;
            }
        } else {
            budget_prev = budget_now;
        }

        // Label-or-train decision.
        let (triggered, ratio_cont, ratio_label, probe) = if t == 0 {
            // Round 0 always labels: the trigger needs a completed round.
            (true, 0.0, 0.0, ProbeOutcome::ZERO)
        } else {
            match cfg.trigger {
                TriggerPolicy::EveryRound => (true, 0.0, 0.0, ProbeOutcome::ZERO),
                TriggerPolicy::CostBenefit => {
                    let probe = estimate_benefit(
                        model.as_ref(),
                        &mut working_pool,
                        &proxy_indices,
                        cfg.proxy_fraction,
                        budget_now,
                        cfg.epochs_per_round,
                        oracle,
                        cfg.seed.wrapping_add(1000 + t as u64),
                    )?;
                    let benefit = probe.benefit;
                    let r_cont = u_prev_prev - u_prev;
                    let c_star = projected_cost(c_prev, n_t, benefit.delta_n);
                    // Logged so that `triggered == (ratio_label > ratio_cont)`
                    // replays the decision exactly: when training stalled
                    // (no positive reduction), the comparison degenerates to
                    // "label iff the probe saw any benefit".
                    let (rc, rl) = if r_cont > 0.0 {
                        (
                            if c_prev > 0.0 { r_cont / c_prev } else { 0.0 },
                            if c_star + budget_now > 0.0 {
                                (r_cont + benefit.delta_u_label) / (c_star + budget_now)
                            } else {
                                0.0
                            },
                        )
                    } else {
                        (
                            0.0,
                            if c_star + budget_now > 0.0 {
                                benefit.delta_u_label / (c_star + budget_now)
                            } else {
                                0.0
                            },
                        )
                    };
                    let fire = should_label(u_prev_prev, u_prev, c_prev, n_t, &benefit, budget_now);
                    (fire, rc, rl, probe)
                }
            }
        };
        total_labeling_cost += probe.cost_paid;

        let mut labeled_this_round = probe.labeled;
        let mut cost_labeled = probe.cost_paid;
        if triggered {
            let outcome = run_labeling_round_with(
                cfg.selection,
                &mut working_pool,
                None,
                model.as_ref(),
                Budget::new(budget_now)?,
                oracle,
                cfg.seed.wrapping_add(2000 + t as u64),
            )?;
            labeled_this_round += outcome.labeled.len();
            cost_labeled += outcome.cost_paid;
            total_labeling_cost += outcome.cost_paid;
        }

        // Train on everything labeled so far.
        let c_t = match labeled_subset(&working_pool) {
            Some(batch) => model.train_step(&batch, cfg.epochs_per_round),
            None => 0.0,
        };
        total_training_cost += c_t;

        let u_t = total_uncertainty(model.as_ref(), &eval_pool)?;
        rounds.push(RoundRecord {
            t,
            u_t,
            c_t,
            b_t: budget_now,
            n_t,
            labeled_this_round,
            cost_labeled,
            triggered,
            ratio_cont,
            ratio_label,
        });

        // Realized benefit-to-cost ratio of this round, for AIMD.
        let denominator = c_t + budget_prev;
        let realized = if denominator > 0.0 {
            (u_prev - u_t) / denominator
        } else {
            0.0
        };
        ratio_prev = ratio_now;
        ratio_now = Some(realized);
        u_prev_prev = u_prev;
        u_prev = u_t;
        c_prev = c_t;

        if let Some(ts) = &test {
            let acc = model.accuracy(ts);
            final_accuracy = Some(acc);
            if let Some(target) = cfg.target_accuracy {
                if acc >= target {
                    rounds_to_target = Some(t);
                    break;
                }
            }
        }
    }

    // Register the adapted state for future reuse. The snapshot keeps the
    // env's input-space samples (labels acquired during adaptation mapped
    // back by position) so stored states stay mutually comparable for
    // matching; per-fit latent coordinates would not be.
    let model_blob = model.to_blob();
    let mut registered_key = None;
    if let Some(store) = store.as_deref_mut() {
        let mut snapshot = request.pool.clone();
        for (raw, worked) in snapshot.samples.iter_mut().zip(&working_pool.samples) {
            raw.label = worked.label;
            raw.labeling_cost = worked.labeling_cost;
        }
        let reg = store.register(
            NewEntry {
                env_id: request.env_id.clone(),
                model_blob: model_blob.clone(),
                samples: snapshot,
                accuracy: final_accuracy.unwrap_or(0.0),
                org_tag: request.org_tag.clone(),
            },
            now,
        );
        match reg {
            Ok(key) => registered_key = Some(key),
            Err(e) => warning = Some(format!("registration failed: {e}")),
        }
    }

    Ok(AdaptOutcome {
        model_blob,
        pool: working_pool,
        rounds,
        matched,
        transform_blob,
        registered_key,
        final_accuracy,
        rounds_to_target,
        warm_start_cost,
        total_training_cost,
        total_labeling_cost,
        store_warning: warning,
    })
}
