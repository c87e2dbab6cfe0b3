//! Kernel and sampling primitives shared by every other module.
//!
//! An environment state is an empirical distribution of system inputs. Two
//! states are compared with the maximum mean discrepancy (MMD) in a Gaussian
//! kernel space:
//!
//! ```text
//! k(x, y)     = exp(-||x - y||^2 / (2 b^2))
//! MMD^2(A, B) = mean(K_AA) + mean(K_BB) - 2 mean(K_AB)
//! ```
//!
//! The biased (V-statistic) estimator is used throughout: it is nonnegative
//! by construction, which is what a similarity score needs. Large sets are
//! cut down with [`subsample`] before any quadratic-cost operation; the
//! subset size that keeps the empirical CDF within `epsilon` of the full set
//! with confidence `delta` comes from the Dvoretzky-Kiefer-Wolfowitz bound
//! ([`dkw_sample_size`]).

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default CDF deviation bound for subsampling. Lands in the
/// few-thousand-samples regime (4612 at the default confidence).
pub const DEFAULT_DKW_EPSILON: f64 = 0.02;

/// Default confidence for the DKW bound.
pub const DEFAULT_DKW_DELTA: f64 = 0.95;

/// Kernel family. Only the Gaussian kernel is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Gaussian,
}

/// A kernel with its bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    /// Gaussian kernel with the given bandwidth (must be positive and finite).
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::input(format!(
                "kernel bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(KernelSpec {
            kind: KernelKind::Gaussian,
            bandwidth,
        })
    }
}

/// One system input: a feature vector, an optional label, and the cost of
/// acquiring that label. Labeled samples keep the cost actually paid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub features: Vec<f64>,
    pub label: Option<f64>,
    pub labeling_cost: f64,
}

impl StateSample {
    pub fn new(features: Vec<f64>, label: Option<f64>, labeling_cost: f64) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::input("sample must have at least one feature"));
        }
        if !(labeling_cost >= 0.0) || !labeling_cost.is_finite() {
            return Err(Error::input(format!(
                "labeling cost must be a nonnegative finite value, got {labeling_cost}"
            )));
        }
        Ok(StateSample {
            features,
            label,
            labeling_cost,
        })
    }

    /// Unlabeled sample with unit labeling cost.
    pub fn unlabeled(features: Vec<f64>) -> Self {
        StateSample {
            features,
            label: None,
            labeling_cost: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// A collection of samples representing one environment state.
///
/// Invariants: nonempty, and all samples share one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSet {
    pub env_id: String,
    pub samples: Vec<StateSample>,
    pub kernel: KernelSpec,
}

impl StateSet {
    pub fn new(
        env_id: impl Into<String>,
        samples: Vec<StateSample>,
        kernel: KernelSpec,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input("state set must be nonempty"));
        }
        let d = samples[0].dim();
        if let Some(bad) = samples.iter().find(|s| s.dim() != d) {
            return Err(Error::input(format!(
                "all samples must share dimension {d}, found {}",
                bad.dim()
            )));
        }
        Ok(StateSet {
            env_id: env_id.into(),
            samples,
            kernel,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Shared feature dimension.
    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    /// Serialize to CSV with header `f0,...,f{d-1},label,cost`.
    ///
    /// Floats are written in shortest round-trip form, so parsing the text
    /// back yields bit-equal values. The label column is empty for unlabeled
    /// samples.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for i in 0..d {
            out.push_str(&format!("f{i},"));
        }
        out.push_str("label,cost\n");
        for s in &self.samples {
            for f in &s.features {
                out.push_str(&format!("{f},"));
            }
            match s.label {
                Some(l) => out.push_str(&format!("{l},")),
                None => out.push(','),
            }
            out.push_str(&format!("{}\n", s.labeling_cost));
        }
        out
    }

    /// Parse the CSV form produced by [`StateSet::to_csv`].
    ///
    /// A leading `# ...` format-tag line (as written by the store) is
    /// tolerated and skipped.
    pub fn from_csv(env_id: impl Into<String>, kernel: KernelSpec, text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .skip_while(|l| l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::input("empty state set CSV"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[cols.len() - 2] != "label" || cols[cols.len() - 1] != "cost" {
            return Err(Error::input(format!(
                "bad state set CSV header: {header}"
            )));
        }
        let d = cols.len() - 2;
        let mut samples = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 2 {
                return Err(Error::input(format!(
                    "row {}: expected {} fields, got {}",
                    lineno + 2,
                    d + 2,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::input(format!("row {}: bad number {s:?}", lineno + 2)))
            };
            let features = fields[..d].iter().map(|s| parse(s)).collect::<Result<_>>()?;
            let label = if fields[d].trim().is_empty() {
                None
            } else {
                Some(parse(fields[d])?)
            };
            let cost = parse(fields[d + 1])?;
            samples.push(StateSample::new(features, label, cost)?);
        }
        StateSet::new(env_id, samples, kernel)
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Gaussian kernel k(x, y) = exp(-||x - y||^2 / (2 b^2)).
///
/// Symmetric, in (0, 1], and equal to 1 exactly when x == y.
pub fn gaussian_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "kernel arguments differ in dimension: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let KernelKind::Gaussian = spec.kind;
    Ok((-squared_distance(x, y) / (2.0 * spec.bandwidth * spec.bandwidth)).exp())
}

/// Biased empirical MMD between two sets of feature vectors under `spec`.
pub(crate) fn mmd_features(a: &[&[f64]], b: &[&[f64]], spec: &KernelSpec) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("mmd over an empty set"));
    }
    let mean_gram = |u: &[&[f64]], v: &[&[f64]]| -> Result<f64> {
        let mut acc = 0.0;
        for x in u {
            for y in v {
                acc += gaussian_kernel(x, y, spec)?;
            }
        }
        Ok(acc / (u.len() as f64 * v.len() as f64))
    };
    let sq = mean_gram(a, a)? + mean_gram(b, b)? - 2.0 * mean_gram(a, b)?;
    Ok(sq.max(0.0).sqrt())
}

/// Maximum mean discrepancy between two environment states.
///
/// Uses the biased (V-statistic) estimator, so the result is nonnegative,
/// symmetric in its arguments, and zero for identical multisets. Both sets
/// must share dimension and kernel.
pub fn mmd(a: &StateSet, b: &StateSet) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("mmd over an empty set"));
    }
    if a.dim() != b.dim() {
        return Err(Error::input(format!(
            "mmd over mismatched dimensions: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.kernel != b.kernel {
        return Err(Error::input("mmd over mismatched kernels"));
    }
    let av: Vec<&[f64]> = a.samples.iter().map(|s| s.features.as_slice()).collect();
    let bv: Vec<&[f64]> = b.samples.iter().map(|s| s.features.as_slice()).collect();
    mmd_features(&av, &bv, &a.kernel)
}

/// Median pairwise distance over a capped subset of points.
pub(crate) fn median_bandwidth_features(points: &[&[f64]]) -> f64 {
    const CAP: usize = 1000;
    // Fixed internal seed: bandwidth selection must not depend on caller state.
    const SEED: u64 = 0x00EA_BA5E;
    let capped: Vec<&[f64]> = if points.len() > CAP {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        idx.partial_shuffle(&mut rng, CAP);
        idx.truncate(CAP);
        idx.into_iter().map(|i| points[i]).collect()
    } else {
        points.to_vec()
    };
    let mut dists = Vec::with_capacity(capped.len() * (capped.len() - 1) / 2);
    for i in 0..capped.len() {
        for j in (i + 1)..capped.len() {
            dists.push(squared_distance(capped[i], capped[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = dists.len();
    let median = if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Median-heuristic bandwidth over the union of two states.
///
/// Takes the median pairwise Euclidean distance over at most 1000 points
/// (subsampled with a fixed internal seed beyond that); falls back to 1.0
/// when the median is zero (all points identical) or no pair exists.
pub fn median_bandwidth(a: &StateSet, b: &StateSet) -> f64 {
    let pts: Vec<&[f64]> = a
        .samples
        .iter()
        .chain(b.samples.iter())
        .map(|s| s.features.as_slice())
        .collect();
    median_bandwidth_features(&pts)
}

/// Subset size m such that the empirical CDF of m uniform draws stays within
/// `epsilon` of the full set's CDF with confidence `delta`:
///
/// ```text
/// m >= -ln((1 - delta) / 2) / (2 epsilon^2)
/// ```
///
/// Returns the smallest integer satisfying the bound.
pub fn dkw_sample_size(epsilon: f64, delta: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::input(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let bound = -((1.0 - delta) / 2.0).ln() / (2.0 * epsilon * epsilon);
    Ok(bound.ceil() as usize)
}

/// Uniform subsample without replacement, deterministic for a fixed seed.
///
/// Returns the set unchanged when `m >= |a|`. Selected samples keep their
/// original relative order.
pub fn subsample(a: &StateSet, m: usize, seed: u64) -> StateSet {
    assert!(m >= 1, "subsample size must be at least 1");
    if m >= a.len() {
        return a.clone();
    }
    let mut idx: Vec<usize> = (0..a.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.partial_shuffle(&mut rng, m);
    idx.truncate(m);
    idx.sort_unstable();
    let samples = idx.into_iter().map(|i| a.samples[i].clone()).collect();
    StateSet {
        env_id: a.env_id.clone(),
        samples,
        kernel: a.kernel,
    }
}
