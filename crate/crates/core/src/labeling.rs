//! Cost-aware data labeling.
//!
//! Collecting ground truth for a system input means running the decision and
//! observing the outcome, which is slow, resource-hungry, and priced very
//! differently across inputs. The agent estimates each unlabeled sample's
//! utility (model prediction uncertainty), then samples inputs with
//! probability proportional to their utility-to-cost ratio until the round's
//! budget is spent. Probabilistic selection smooths out anomalously
//! high-utility outliers and near-duplicate tails that a deterministic
//! knapsack would fixate on.

use crate::error::{Error, Result};
use crate::state_math::{StateSample, StateSet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Utility and cost of one candidate, with the selection ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityEstimate {
    /// Index of the sample in the caller's pool.
    pub index: usize,
    pub utility: f64,
    pub cost: f64,
    /// utility / cost.
    pub ratio: f64,
}

impl UtilityEstimate {
    pub fn new(index: usize, utility: f64, cost: f64) -> Result<Self> {
        if !utility.is_finite() || utility < 0.0 {
            return Err(Error::input(format!(
                "utility must be finite and nonnegative, got {utility}"
            )));
        }
        if !(cost > 0.0) || !cost.is_finite() {
            return Err(Error::input(format!(
                "labeling cost must be positive, got {cost}"
            )));
        }
        Ok(UtilityEstimate {
            index,
            utility,
            cost,
            ratio: utility / cost,
        })
    }
}

/// Remaining labeling allowance in abstract cost units. Never negative;
/// labeling debits exactly the labeled samples' costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    remaining: f64,
}

impl Budget {
    pub fn new(amount: f64) -> Result<Self> {
        if !(amount >= 0.0) || !amount.is_finite() {
            return Err(Error::input(format!(
                "budget must be nonnegative and finite, got {amount}"
            )));
        }
        Ok(Budget { remaining: amount })
    }

    pub fn remaining(&self) -> f64 {
        self.remaining
    }

    pub fn can_afford(&self, cost: f64) -> bool {
        cost <= self.remaining
    }

    fn debit(&mut self, cost: f64) {
        debug_assert!(self.can_afford(cost));
        self.remaining -= cost;
    }

    fn credit(&mut self, cost: f64) {
        self.remaining += cost;
    }
}

/// Where labels come from. `sample_id` is the caller's stable identifier
/// for the sample (the append-log's `sample_id` column); the transformed
/// feature vector alone may not identify the underlying input. Returns the
/// label value and the cost actually incurred (equal to the sample's
/// declared cost in the simulator).
pub trait LabelingOracle {
    fn label(&mut self, sample_id: usize, sample: &StateSample) -> Result<(f64, f64)>;
}

/// Per-sample model uncertainty, by task kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Class probabilities (must sum to 1).
    ClassProbs(Vec<f64>),
    /// Prediction interval.
    Interval { lo: f64, hi: f64 },
}

/// Anything that can report prediction uncertainty for an input.
pub trait UncertaintySource {
    fn predict_uncertainty(&self, features: &[f64]) -> Prediction;

    /// Utility proxy for one input.
    fn utility(&self, features: &[f64]) -> Result<f64> {
        match self.predict_uncertainty(features) {
            Prediction::ClassProbs(p) => utility_classification(&p),
            Prediction::Interval { lo, hi } => utility_regression(lo, hi),
        }
    }
}

/// Classification utility: 1 minus the confidence gap between the top two
/// predicted classes. 0 for a fully confident prediction, 1 at an exact tie.
pub fn utility_classification(class_probs: &[f64]) -> Result<f64> {
    if class_probs.len() < 2 {
        return Err(Error::input("need at least two class probabilities"));
    }
    let sum: f64 = class_probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::input(format!(
            "class probabilities must sum to 1, got {sum}"
        )));
    }
    let (mut top1, mut top2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in class_probs {
        if p > top1 {
            top2 = top1;
            top1 = p;
        } else if p > top2 {
            top2 = p;
        }
    }
    Ok((1.0 - (top1 - top2)).clamp(0.0, 1.0))
}

/// Regression/RL utility: the width of the prediction interval.
pub fn utility_regression(lo: f64, hi: f64) -> Result<f64> {
    if hi < lo {
        return Err(Error::input(format!(
            "interval upper bound {hi} below lower bound {lo}"
        )));
    }
    Ok(hi - lo)
}

/// Select candidates under a budget by weighted sampling without
/// replacement, weight proportional to utility-to-cost ratio.
///
/// Implemented with exponential race keys (key = -ln(u)/weight, smallest
/// first), which draws candidates with the desired probabilities in
/// O(n log n) and is deterministic per seed. A drawn candidate whose cost no
/// longer fits the remaining budget is skipped and removed; zero-ratio
/// candidates are never drawn. Total debited cost never exceeds the initial
/// budget.
pub fn select_for_labeling(
    candidates: &[UtilityEstimate],
    budget: Budget,
    seed: u64,
) -> (Vec<usize>, Budget) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut race: Vec<(f64, &UtilityEstimate)> = candidates
        .iter()
        .map(|c| {
            // u in (0, 1]; drawn for every candidate in order so the stream
            // is stable regardless of which weights are positive.
            let u: f64 = 1.0 - rng.gen::<f64>();
            (-u.ln() / c.ratio, c)
        })
        .filter(|(key, c)| c.ratio > 0.0 && key.is_finite())
        .collect();
    race.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.index.cmp(&b.1.index)));

    let mut budget = budget;
    let mut chosen = Vec::new();
    for (_, cand) in race {
        if budget.can_afford(cand.cost) {
            budget.debit(cand.cost);
            chosen.push(cand.index);
        }
        // Unaffordable draws are dropped, not retried: termination is then
        // a single pass.
    }
    (chosen, budget)
}

/// How a labeling round picks samples. `UtilityPerCost` is the production
/// policy; the others exist as ablation baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPolicy {
    /// Weighted sampling without replacement, weight = utility/cost.
    UtilityPerCost,
    /// Seeded uniform shuffle, label what fits the budget.
    UniformRandom,
    /// Deterministic greedy by utility, ignoring cost except affordability.
    TopUtility,
}

/// Select under `policy`. See [`select_for_labeling`] for the production
/// path; baselines share the affordability walk.
pub fn select_with_policy(
    policy: SelectionPolicy,
    candidates: &[UtilityEstimate],
    budget: Budget,
    seed: u64,
) -> (Vec<usize>, Budget) {
    match policy {
        SelectionPolicy::UtilityPerCost => select_for_labeling(candidates, budget, seed),
        SelectionPolicy::UniformRandom => {
            let mut order: Vec<&UtilityEstimate> = candidates.iter().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            affordability_walk(&order, budget)
        }
        SelectionPolicy::TopUtility => {
            let mut order: Vec<&UtilityEstimate> = candidates.iter().collect();
            order.sort_by(|a, b| {
                b.utility
                    .partial_cmp(&a.utility)
                    .unwrap()
                    .then(a.index.cmp(&b.index))
            });
            affordability_walk(&order, budget)
        }
    }
}

fn affordability_walk(order: &[&UtilityEstimate], budget: Budget) -> (Vec<usize>, Budget) {
    let mut budget = budget;
    let mut chosen = Vec::new();
    for cand in order {
        if budget.can_afford(cand.cost) {
            budget.debit(cand.cost);
            chosen.push(cand.index);
        }
    }
    (chosen, budget)
}

/// Outcome of one labeling round.
#[derive(Debug, Clone)]
pub struct LabelingOutcome {
    /// Pool indices labeled this round, in selection order.
    pub labeled: Vec<usize>,
    /// Total cost actually paid.
    pub cost_paid: f64,
    pub budget: Budget,
    /// Samples the oracle failed on (skipped, budget refunded).
    pub oracle_failures: usize,
}

impl LabelingOutcome {
    /// Append-log rows for this round: `sample_id,label,cost_paid,round`.
    pub fn append_log_rows(&self, pool: &StateSet, round: usize) -> String {
        let mut out = String::new();
        for &i in &self.labeled {
            let s = &pool.samples[i];
            out.push_str(&format!(
                "{},{},{},{}\n",
                i,
                s.label.map(|l| l.to_string()).unwrap_or_default(),
                s.labeling_cost,
                round
            ));
        }
        out
    }
}

/// Run one labeling round over the unlabeled portion of `pool`.
///
/// Utilities are frozen at round start. Already-labeled samples are never
/// re-selected. An oracle failure skips that sample and refunds its cost.
/// Labeled samples get their label stored and their cost replaced by the
/// cost actually paid. Oracle calls use the pool position as the sample id.
pub fn run_labeling_round<M: UncertaintySource + ?Sized, O: LabelingOracle + ?Sized>(
    pool: &mut StateSet,
    model: &M,
    budget: Budget,
    oracle: &mut O,
    seed: u64,
) -> Result<LabelingOutcome> {
    run_labeling_round_with(SelectionPolicy::UtilityPerCost, pool, None, model, budget, oracle, seed)
}

/// [`run_labeling_round`] with an explicit selection policy and, when the
/// pool is a view into a larger set, the global sample ids of its rows.
pub fn run_labeling_round_with<M: UncertaintySource + ?Sized, O: LabelingOracle + ?Sized>(
    policy: SelectionPolicy,
    pool: &mut StateSet,
    sample_ids: Option<&[usize]>,
    model: &M,
    budget: Budget,
    oracle: &mut O,
    seed: u64,
) -> Result<LabelingOutcome> {
    if let Some(ids) = sample_ids {
        if ids.len() != pool.len() {
            return Err(Error::input(format!(
                "sample id list has {} entries for a pool of {}",
                ids.len(),
                pool.len()
            )));
        }
    }
    let mut candidates = Vec::new();
    for (i, s) in pool.samples.iter().enumerate() {
        if s.label.is_some() {
            continue;
        }
        let utility = model.utility(&s.features)?;
        candidates.push(UtilityEstimate::new(i, utility, s.labeling_cost)?);
    }
    let (selected, mut budget) = select_with_policy(policy, &candidates, budget, seed);

    let mut labeled = Vec::new();
    let mut cost_paid = 0.0;
    let mut oracle_failures = 0usize;
    for idx in selected {
        let declared = pool.samples[idx].labeling_cost;
        let id = sample_ids.map(|ids| ids[idx]).unwrap_or(idx);
        match oracle.label(id, &pool.samples[idx]) {
            Ok((value, actual)) => {
                // The selector debited the declared cost; reconcile to the
                // actual charge.
                budget.credit(declared);
                budget.debit(actual.min(budget.remaining()));
                pool.samples[idx].label = Some(value);
                pool.samples[idx].labeling_cost = actual;
                cost_paid += actual;
                labeled.push(idx);
            }
            Err(_) => {
                budget.credit(declared);
                oracle_failures += 1;
            }
        }
    }
    Ok(LabelingOutcome {
        labeled,
        cost_paid,
        budget,
        oracle_failures,
    })
}
