//! Synthetic environment generator.
//!
//! An environment is a two-component Gaussian mixture over inputs plus a
//! linear (or logistic) labeling function. The shift knobs move the mixture
//! means, scale the spreads, tilt the mixture weights, and drift the label
//! function, standing in for the infrastructure/workload/objective
//! variation a deployed system sees. Labeling costs are heterogeneous and
//! heavy-tailed in the input norm: cost = 1 + beta * ||x||.

use crate::error::Result;
use crate::labeling::LabelingOracle;
use crate::state_math::{KernelSpec, StateSample, StateSet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

/// Distribution and label-function shift relative to the base environment.
#[derive(Debug, Clone, Default)]
pub struct ShiftSpec {
    /// Added to both mixture component means.
    pub mean_offset: Vec<f64>,
    /// Multiplies component spreads (0 keeps the base spread of 1).
    pub cov_scale_delta: f64,
    /// Shifts the first component's mixture weight (base 0.65).
    pub mixture_delta: f64,
    /// Drift coefficient of the labeling function.
    pub label_drift: f64,
}

#[derive(Debug, Clone)]
pub struct EnvironmentSpec {
    pub env_id: String,
    pub seed: u64,
    pub task: Task,
    pub dim: usize,
    pub shift: ShiftSpec,
    /// Heavy-tail coefficient of the labeling cost model.
    pub cost_beta: f64,
    /// Standard deviation of label measurement noise in the pool.
    pub label_noise: f64,
    /// Fraction of the pool that is junk telemetry: far-out samples whose
    /// labels are coin flips. They look maximally uncertain to a model,
    /// cost a fortune to label, and teach nothing.
    pub outlier_fraction: f64,
    pub pool_size: usize,
    pub test_size: usize,
    /// Observed-representation warp: environments sharing a warp seed report
    /// telemetry in the same units and axes; across warp seeds the observed
    /// feature space differs (rotation, scale, offset), the way different
    /// infrastructures report differently. `None` observes canonical
    /// coordinates.
    pub warp_seed: Option<u64>,
}

impl EnvironmentSpec {
    pub fn base(env_id: impl Into<String>, seed: u64, task: Task, dim: usize) -> Self {
        EnvironmentSpec {
            env_id: env_id.into(),
            seed,
            task,
            dim,
            shift: ShiftSpec {
                mean_offset: vec![0.0; dim],
                ..ShiftSpec::default()
            },
            cost_beta: 0.5,
            label_noise: 0.6,
            outlier_fraction: 0.0,
            pool_size: 600,
            test_size: 300,
            warp_seed: None,
        }
    }
}

/// Deterministic feature warp: Givens rotations, per-axis scales in
/// [0.6, 1.8], and an offset in [-1, 1]^d.
struct Warp {
    rotation: Vec<Vec<f64>>,
    scale: Vec<f64>,
    offset: Vec<f64>,
}

impl Warp {
    fn new(seed: u64, d: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rotation: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for i in 0..d {
            for j in (i + 1)..d {
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let (s, c) = theta.sin_cos();
                for row in rotation.iter_mut() {
                    let (a, b) = (row[i], row[j]);
                    row[i] = c * a - s * b;
                    row[j] = s * a + c * b;
                }
            }
        }
        Warp {
            rotation,
            scale: (0..d).map(|_| rng.gen_range(0.6..1.8)).collect(),
            offset: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..d)
            .map(|i| {
                let r: f64 = (0..d).map(|j| self.rotation[i][j] * x[j]).sum();
                self.scale[i] * r + self.offset[i]
            })
            .collect()
    }
}

/// Ground-truth labeler for one generated environment: returns the true
/// label by sample id and charges the declared cost.
pub struct GroundTruthOracle {
    labels: Vec<f64>,
    pub calls: usize,
    pub total_cost: f64,
    /// When set, fail every request past this many calls (exhaustion).
    pub fail_after: Option<usize>,
}

impl GroundTruthOracle {
    /// Ground-truth labels by sample id. Only the hypothetical
    /// oracle-all-data baseline and test assertions may look at this.
    pub fn peek_all(&self) -> &[f64] {
        &self.labels
    }
}

impl LabelingOracle for GroundTruthOracle {
    fn label(&mut self, sample_id: usize, sample: &StateSample) -> Result<(f64, f64)> {
        if let Some(limit) = self.fail_after {
            if self.calls >= limit {
                return Err(crate::error::Error::input("labeling backend exhausted"));
            }
        }
        let value = *self
            .labels
            .get(sample_id)
            .ok_or_else(|| crate::error::Error::input(format!("unknown sample id {sample_id}")))?;
        self.calls += 1;
        self.total_cost += sample.labeling_cost;
        Ok((value, sample.labeling_cost))
    }
}

/// A generated environment: unlabeled pool, labeled held-out test set, and
/// the labeling oracle.
pub struct GeneratedEnv {
    pub spec: EnvironmentSpec,
    pub pool: StateSet,
    pub test: StateSet,
    pub oracle: GroundTruthOracle,
}

struct LabelFn {
    w: Vec<f64>,
    w_drift: Vec<f64>,
    drift: f64,
    task: Task,
    /// Classification threshold; sits inside the sparser, dearer-to-label
    /// mixture component so boundary information is not free.
    threshold: f64,
}

impl LabelFn {
    fn eval(&self, x: &[f64], noise: f64) -> f64 {
        let mut score = 0.0;
        for i in 0..x.len() {
            score += (self.w[i] + self.drift * self.w_drift[i]) * x[i];
        }
        match self.task {
            Task::Regression => score + noise,
            Task::Classification => {
                if score + noise > self.threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-300..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draw pools from the spec's distribution. The pool is unlabeled with
/// per-sample costs; the test set is labeled for free (evaluation only);
/// the oracle returns ground truth and debits the cost model.
pub fn gen_environment(spec: &EnvironmentSpec) -> Result<GeneratedEnv> {
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Fixed base geometry; the label function is shared structure so that
    // similar environments have similar models. The bulk component sits
    // near the origin where labels are cheap; the minority component sits
    // far out where labels are dear.
    let base_means = [vec![0.3; 2], vec![2.2; 2]];
    let mut mean0: Vec<f64> = (0..d).map(|i| base_means[0][i % 2]).collect();
    let mut mean1: Vec<f64> = (0..d).map(|i| base_means[1][i % 2]).collect();
    for i in 0..d {
        let off = spec.shift.mean_offset.get(i).copied().unwrap_or(0.0);
        mean0[i] += off;
        mean1[i] += off;
    }
    let spread = 0.6 * (1.0 + spec.shift.cov_scale_delta).max(0.05);
    let w0 = (0.65 + spec.shift.mixture_delta).clamp(0.05, 0.95);

    let w_base: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let w_drift: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { -0.6 } else { 1.0 }).collect();
    // Place the class boundary most of the way toward the second mixture
    // component: the informative region is sparse and far from the origin,
    // where labels are dearest.
    let score_at = |mean: &[f64]| -> f64 {
        (0..d)
            .map(|i| (w_base[i] + spec.shift.label_drift * w_drift[i]) * mean[i])
            .sum()
    };
    let threshold = match spec.task {
        Task::Regression => 0.0,
        Task::Classification => {
            let (s0, s1) = (score_at(&mean0), score_at(&mean1));
            s0 + 0.75 * (s1 - s0)
        }
    };
    let label_fn = LabelFn {
        w: w_base,
        w_drift,
        drift: spec.shift.label_drift,
        task: spec.task,
        threshold,
    };

    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let comp = if rng.gen_range(0.0..1.0) < w0 {
            &mean0
        } else {
            &mean1
        };
        (0..d).map(|i| comp[i] + spread * normal(rng)).collect()
    };

    let warp = spec.warp_seed.map(|ws| Warp::new(ws, d));
    let observe = |x: &[f64]| -> Vec<f64> {
        match &warp {
            Some(w) => w.apply(x),
            None => x.to_vec(),
        }
    };

    let mut pool_samples = Vec::with_capacity(spec.pool_size);
    let mut labels = Vec::with_capacity(spec.pool_size);
    let outliers = (spec.outlier_fraction * spec.pool_size as f64).round() as usize;
    for k in 0..spec.pool_size {
        if k < outliers {
            // Junk telemetry: far from everything, random label.
            let x: Vec<f64> = (0..d).map(|_| 8.0 * normal(&mut rng)).collect();
            let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cost = 1.0 + spec.cost_beta * norm;
            labels.push(if rng.gen_range(0.0..1.0) < 0.5 { 1.0 } else { 0.0 });
            pool_samples.push(StateSample::new(observe(&x), None, cost)?);
            continue;
        }
        let x = draw(&mut rng);
        // Labels and costs attach to the underlying state; the system only
        // observes the warped telemetry. Acquired labels carry measurement
        // noise, so hitting a tight target needs label volume.
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cost = 1.0 + spec.cost_beta * norm;
        let noise = spec.label_noise * normal(&mut rng);
        labels.push(label_fn.eval(&x, noise));
        pool_samples.push(StateSample::new(observe(&x), None, cost)?);
    }

    // The held-out test set is evaluation-only and noiseless: accuracy
    // measures distance to the true labeling function.
    let mut test_samples = Vec::with_capacity(spec.test_size);
    for _ in 0..spec.test_size {
        let x = draw(&mut rng);
        let y = label_fn.eval(&x, 0.0);
        test_samples.push(StateSample::new(observe(&x), Some(y), 0.0)?);
    }

    let kernel = KernelSpec::gaussian(1.0)?;
    Ok(GeneratedEnv {
        spec: spec.clone(),
        pool: StateSet::new(spec.env_id.clone(), pool_samples, kernel)?,
        test: StateSet::new(format!("{}-test", spec.env_id), test_samples, kernel)?,
        oracle: GroundTruthOracle {
            labels,
            calls: 0,
            total_cost: 0.0,
            fail_after: None,
        },
    })
}
