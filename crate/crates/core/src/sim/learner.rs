//! Reference learners: a bootstrap ensemble of linear regressors and a
//! logistic classifier.
//!
//! The regression ensemble is five linear models, each trained by gradient
//! descent on a bootstrap resample of the labeled batch; the spread of
//! member predictions gives an honest prediction interval, which is exactly
//! the uncertainty interface the labeling agent consumes. The classifier is
//! a single logistic model whose top-two class-probability gap plays the
//! same role. Training cost is charged as one unit per sample-epoch.

use crate::error::{Error, Result};
use crate::labeling::{Prediction, UncertaintySource};
use crate::orchestrator::{AdaptiveModel, ModelFactory};
use crate::sim::env::Task;
use crate::state_math::StateSet;

pub const ENSEMBLE_MEMBERS: usize = 5;
/// Step gain; the realized rate is this over the batch's mean squared
/// sample norm, which keeps full-batch descent stable at any feature scale.
const STEP_GAIN: f64 = 1.0;
const BLOB_TAG: u8 = 0xE5;

#[derive(Debug, Clone, PartialEq)]
struct LinearModel {
    w: Vec<f64>,
    b: f64,
}

impl LinearModel {
    fn zeros(dim: usize) -> Self {
        LinearModel {
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    fn raw(&self, x: &[f64]) -> f64 {
        self.b + self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Full-batch gradient descent for squared loss (regression) or
    /// log-loss (classification). The step size backs off with the batch's
    /// mean squared sample norm, which upper-bounds the quadratic term's
    /// largest eigenvalue, so the iteration stays stable for any feature
    /// scale.
    fn fit_epochs(&mut self, xs: &[&[f64]], ys: &[f64], epochs: usize, logistic: bool) {
        let n = xs.len();
        if n == 0 {
            return;
        }
        let dim = self.w.len();
        let mean_sq_norm = xs
            .iter()
            .map(|x| 1.0 + x.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        let rate = STEP_GAIN / mean_sq_norm.max(1.0);
        for _ in 0..epochs {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for (x, &y) in xs.iter().zip(ys) {
                let pred = if logistic {
                    sigmoid(self.raw(x))
                } else {
                    self.raw(x)
                };
                let err = pred - y;
                for (g, &xi) in gw.iter_mut().zip(*x) {
                    *g += err * xi;
                }
                gb += err;
            }
            let scale = rate / n as f64;
            for (w, g) in self.w.iter_mut().zip(&gw) {
                *w -= scale * g;
            }
            self.b -= scale * gb;
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// FNV-style hash of a member id and a sample's feature bits.
fn content_hash(seed: u64, member: u64, x: &[f64]) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x100000001b3);
    h = (h ^ member).wrapping_mul(0x100000001b3);
    for &v in x {
        h = (h ^ v.to_bits()).wrapping_mul(0x100000001b3);
    }
    h
}

/// The simulator's learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    task: Task,
    dim: usize,
    members: Vec<LinearModel>,
    seed: u64,
    steps: u64,
}

impl Learner {
    pub fn new(task: Task, dim: usize, seed: u64) -> Self {
        let members = match task {
            Task::Regression => ENSEMBLE_MEMBERS,
            Task::Classification => 1,
        };
        Learner {
            task,
            dim,
            members: (0..members).map(|_| LinearModel::zeros(dim)).collect(),
            seed,
            steps: 0,
        }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.task {
            Task::Regression => {
                self.members.iter().map(|m| m.raw(x)).sum::<f64>() / self.members.len() as f64
            }
            Task::Classification => sigmoid(self.members[0].raw(x)),
        }
    }

    /// Ensemble prediction interval: (min, max) over member predictions.
    pub fn predict_interval(&self, x: &[f64]) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in &self.members {
            let p = m.raw(x);
            lo = lo.min(p);
            hi = hi.max(p);
        }
        (lo, hi)
    }

    pub fn class_probs(&self, x: &[f64]) -> Vec<f64> {
        let p = sigmoid(self.members[0].raw(x));
        vec![1.0 - p, p]
    }
}

impl UncertaintySource for Learner {
    fn predict_uncertainty(&self, features: &[f64]) -> Prediction {
        match self.task {
            Task::Regression => {
                let (lo, hi) = self.predict_interval(features);
                // An untrained ensemble collapses to identical zero members;
                // report full uncertainty so round zero has signal.
                if self.steps == 0 && lo == hi {
                    Prediction::Interval {
                        lo: 0.0,
                        hi: 1.0 + features.iter().map(|v| v.abs()).sum::<f64>(),
                    }
                } else {
                    Prediction::Interval { lo, hi }
                }
            }
            Task::Classification => Prediction::ClassProbs(self.class_probs(features)),
        }
    }
}

impl AdaptiveModel for Learner {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn train_step(&mut self, batch: &StateSet, epochs: usize) -> f64 {
        let labeled: Vec<(&[f64], f64)> = batch
            .samples
            .iter()
            .filter_map(|s| s.label.map(|y| (s.features.as_slice(), y)))
            .collect();
        if labeled.is_empty() {
            return 0.0;
        }
        self.steps += 1;
        let logistic = self.task == Task::Classification;
        if self.members.len() == 1 {
            let xs: Vec<&[f64]> = labeled.iter().map(|(x, _)| *x).collect();
            let ys: Vec<f64> = labeled.iter().map(|(_, y)| *y).collect();
            self.members[0].fit_epochs(&xs, &ys, epochs, logistic);
        } else {
            // Each member owns a stable resampled view of the data, keyed
            // by sample content: a sample's multiplicity for a member never
            // changes as the labeled set grows, so member spread reflects
            // data sensitivity rather than reshuffling churn.
            let members = self.members.len() as u64;
            for (mi, member) in self.members.iter_mut().enumerate() {
                let mut xs = Vec::with_capacity(labeled.len());
                let mut ys = Vec::with_capacity(labeled.len());
                for (x, y) in &labeled {
                    let h = content_hash(self.seed, mi as u64, x);
                    // Multiplicities 0/1/2 approximating a bootstrap draw:
                    // skip with probability 1/members, double with the same.
                    let slot = h % (2 * members);
                    let mult = if slot == 0 {
                        0
                    } else if slot == 1 {
                        2
                    } else {
                        1
                    };
                    for _ in 0..mult {
                        xs.push(*x);
                        ys.push(*y);
                    }
                }
                if xs.is_empty() {
                    continue;
                }
                member.fit_epochs(&xs, &ys, epochs, logistic);
            }
        }
        (labeled.len() * epochs) as f64
    }

    fn boxed_clone(&self) -> Box<dyn AdaptiveModel> {
        Box::new(self.clone())
    }

    fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(BLOB_TAG);
        out.push(match self.task {
            Task::Regression => 0,
            Task::Classification => 1,
        });
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.members.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.steps.to_le_bytes());
        for m in &self.members {
            for &w in &m.w {
                out.extend_from_slice(&w.to_le_bytes());
            }
            out.extend_from_slice(&m.b.to_le_bytes());
        }
        out
    }

    /// Regression accuracy is 1 - normalized MSE (clamped to [0, 1]);
    /// classification accuracy is the fraction correctly classified.
    fn accuracy(&self, test: &StateSet) -> f64 {
        let labeled: Vec<(&[f64], f64)> = test
            .samples
            .iter()
            .filter_map(|s| s.label.map(|y| (s.features.as_slice(), y)))
            .collect();
        if labeled.is_empty() {
            return 0.0;
        }
        match self.task {
            Task::Regression => {
                let n = labeled.len() as f64;
                let mean_y: f64 = labeled.iter().map(|(_, y)| y).sum::<f64>() / n;
                let var: f64 =
                    labeled.iter().map(|(_, y)| (y - mean_y).powi(2)).sum::<f64>() / n;
                let mse: f64 = labeled
                    .iter()
                    .map(|(x, y)| (self.predict(x) - y).powi(2))
                    .sum::<f64>()
                    / n;
                let nmse = if var > 1e-12 { mse / var } else { mse };
                (1.0 - nmse).clamp(0.0, 1.0)
            }
            Task::Classification => {
                let correct = labeled
                    .iter()
                    .filter(|(x, y)| (self.predict(x) > 0.5) == (*y > 0.5))
                    .count();
                correct as f64 / labeled.len() as f64
            }
        }
    }
}

/// Builds learners and decodes their blobs.
pub struct LearnerFactory {
    pub task: Task,
}

impl ModelFactory for LearnerFactory {
    fn fresh(&self, dim: usize, seed: u64) -> Box<dyn AdaptiveModel> {
        Box::new(Learner::new(self.task, dim, seed))
    }

    fn from_blob(&self, blob: &[u8]) -> Result<Box<dyn AdaptiveModel>> {
        let learner = decode_learner(blob)?;
        Ok(Box::new(learner))
    }
}

pub fn decode_learner(blob: &[u8]) -> Result<Learner> {
    let fail = || Error::input("malformed learner blob");
    if blob.len() < 26 || blob[0] != BLOB_TAG {
        return Err(fail());
    }
    let task = match blob[1] {
        0 => Task::Regression,
        1 => Task::Classification,
        _ => return Err(fail()),
    };
    let rd_u32 = |at: usize| -> Result<u32> {
        Ok(u32::from_le_bytes(
            blob.get(at..at + 4).ok_or_else(fail)?.try_into().unwrap(),
        ))
    };
    let rd_u64 = |at: usize| -> Result<u64> {
        Ok(u64::from_le_bytes(
            blob.get(at..at + 8).ok_or_else(fail)?.try_into().unwrap(),
        ))
    };
    let dim = rd_u32(2)? as usize;
    let members = rd_u32(6)? as usize;
    let seed = rd_u64(10)?;
    let steps = rd_u64(18)?;
    if dim == 0 || members == 0 || members > 64 {
        return Err(fail());
    }
    let mut pos = 26;
    let mut ms = Vec::with_capacity(members);
    for _ in 0..members {
        let mut w = Vec::with_capacity(dim);
        for _ in 0..dim {
            w.push(f64::from_le_bytes(
                blob.get(pos..pos + 8).ok_or_else(fail)?.try_into().unwrap(),
            ));
            pos += 8;
        }
        let b = f64::from_le_bytes(
            blob.get(pos..pos + 8).ok_or_else(fail)?.try_into().unwrap(),
        );
        pos += 8;
        ms.push(LinearModel { w, b });
    }
    if pos != blob.len() {
        return Err(fail());
    }
    Ok(Learner {
        task,
        dim,
        members: ms,
        seed,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::LabelingOracle;
    use crate::sim::env::{gen_environment, EnvironmentSpec};
    use crate::state_math::{KernelSpec, StateSample};

    fn labeled_set(n: usize, f: impl Fn(f64) -> f64) -> StateSet {
        let samples = (0..n)
            .map(|i| {
                let x = i as f64 / n as f64 * 4.0 - 2.0;
                StateSample::new(vec![x], Some(f(x)), 1.0).unwrap()
            })
            .collect();
        StateSet::new("train", samples, KernelSpec::gaussian(1.0).unwrap()).unwrap()
    }

    #[test]
    fn regression_learner_fits_linear_data() {
        let mut l = Learner::new(Task::Regression, 1, 3);
        let data = labeled_set(100, |x| 2.0 * x + 1.0);
        for _ in 0..40 {
            l.train_step(&data, 5);
        }
        let acc = l.accuracy(&data);
        assert!(acc > 0.95, "accuracy {acc}");
        assert!((l.predict(&[1.0]) - 3.0).abs() < 0.3);
    }

    #[test]
    fn classifier_fits_separable_data() {
        let mut l = Learner::new(Task::Classification, 1, 4);
        let data = labeled_set(100, |x| if x > 0.0 { 1.0 } else { 0.0 });
        for _ in 0..60 {
            l.train_step(&data, 5);
        }
        assert!(l.accuracy(&data) > 0.9);
        let probs = l.class_probs(&[2.0]);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(probs[1] > 0.8);
    }

    #[test]
    fn interval_matches_member_extremes() {
        let mut l = Learner::new(Task::Regression, 1, 5);
        let data = labeled_set(60, |x| x);
        l.train_step(&data, 10);
        let (lo, hi) = l.predict_interval(&[0.7]);
        let preds: Vec<f64> = l.members.iter().map(|m| m.raw(&[0.7])).collect();
        let min = preds.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = preds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (min, max));
        assert!(hi >= lo);
    }

    #[test]
    fn uncertainty_shrinks_with_training() {
        let spec = EnvironmentSpec::base("e", 12, Task::Regression, 2);
        let env = gen_environment(&spec).unwrap();
        let mut l = Learner::new(Task::Regression, 2, 6);
        let mut train = env.pool.clone();
        // Label everything via ground truth for this check.
        let mut oracle = gen_environment(&spec).unwrap().oracle;
        for (i, s) in train.samples.iter_mut().enumerate() {
            let (y, _) = oracle.label(i, s).unwrap();
            s.label = Some(y);
        }
        let before = crate::orchestrator::total_uncertainty(&l, &env.pool).unwrap();
        for _ in 0..25 {
            l.train_step(&train, 4);
        }
        let after = crate::orchestrator::total_uncertainty(&l, &env.pool).unwrap();
        assert!(after < before, "uncertainty did not shrink: {before} -> {after}");
    }

    #[test]
    fn blob_round_trip_is_exact() {
        let mut l = Learner::new(Task::Regression, 3, 7);
        let data = labeled_set(40, |x| x * 0.5);
        let mut widened = StateSet::new(
            "w",
            data.samples
                .iter()
                .map(|s| {
                    StateSample::new(
                        vec![s.features[0], s.features[0] * 2.0, 1.0],
                        s.label,
                        1.0,
                    )
                    .unwrap()
                })
                .collect(),
            data.kernel,
        )
        .unwrap();
        widened.env_id = "w".into();
        l.train_step(&widened, 8);
        let blob = l.to_blob();
        let back = decode_learner(&blob).unwrap();
        assert_eq!(l, back);
    }

    #[test]
    fn malformed_blob_rejected() {
        assert!(decode_learner(&[1, 2, 3]).is_err());
        let mut blob = Learner::new(Task::Regression, 2, 0).to_blob();
        blob.truncate(blob.len() - 3);
        assert!(decode_learner(&blob).is_err());
    }

    #[test]
    fn training_cost_is_samples_times_epochs() {
        let mut l = Learner::new(Task::Regression, 1, 8);
        let data = labeled_set(30, |x| x);
        assert_eq!(l.train_step(&data, 4), 120.0);
    }
}
