//! Drift suites: ordered sequences of related environments arriving at a
//! long-running deployment. The repository grows as each arrival is
//! adapted, so later arrivals can warm-start from their family's prior
//! states.

use crate::error::Result;
use crate::sim::env::{gen_environment, EnvironmentSpec, ShiftSpec, Task};
use crate::sim::strategy::{run_strategy, ReportRow, SimSettings, Strategy};
use crate::store::{StateStore, StorePolicy};
use std::path::Path;

/// Twelve environments in three families (near, medium, far shift), four
/// instances each, interleaved so consecutive arrivals come from different
/// families.
pub fn drift_suite(seed: u64, task: Task, dim: usize) -> Vec<EnvironmentSpec> {
    let families: [(&str, f64, f64, f64, f64); 3] = [
        // (name, offset magnitude, cov delta, mixture delta, label drift)
        ("near", 0.15, 0.05, 0.02, 0.05),
        ("medium", 1.2, 0.3, 0.1, 0.6),
        ("far", 2.6, 0.7, -0.25, 1.4),
    ];
    let direction = |fam: usize, i: usize| -> f64 {
        match fam {
            0 => 1.0,
            1 => {
                if i % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            _ => -1.0,
        }
    };
    let mut specs = Vec::with_capacity(12);
    for instance in 0..4usize {
        for (fam, (name, mag, cov, mix, drift)) in families.iter().enumerate() {
            // Small deterministic within-family wiggle per instance.
            let wiggle = 0.06 * instance as f64;
            let norm = (dim as f64).sqrt();
            let offset: Vec<f64> = (0..dim)
                .map(|i| (mag + wiggle) * direction(fam, i) / norm)
                .collect();
            specs.push(EnvironmentSpec {
                env_id: format!("{name}-{instance}"),
                seed: seed
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add((fam * 4 + instance) as u64),
                task,
                dim,
                shift: ShiftSpec {
                    mean_offset: offset,
                    cov_scale_delta: cov + 0.02 * instance as f64,
                    mixture_delta: *mix,
                    label_drift: drift + 0.03 * instance as f64,
                },
                cost_beta: 3.0,
                label_noise: 0.6,
                outlier_fraction: 0.0,
                pool_size: 600,
                test_size: 300,
                // One observed representation per family: instances of a
                // family report telemetry in shared units, families differ.
                warp_seed: Some(seed.wrapping_add(1 + fam as u64)),
            });
        }
    }
    specs
}

/// Process environments in order under one strategy with a persistent,
/// strategy-private store. Returns one report row per arrival.
pub fn run_drift_sequence(
    envs: &[EnvironmentSpec],
    strategy: Strategy,
    store_root: &Path,
    settings: &SimSettings,
) -> Result<Vec<ReportRow>> {
    let mut store = StateStore::open(
        store_root.join(strategy.name()),
        StorePolicy {
            capacity: 64,
            ..StorePolicy::default()
        },
    )?;
    let mut rows = Vec::with_capacity(envs.len());
    for (step, spec) in envs.iter().enumerate() {
        let mut env = gen_environment(spec)?;
        let (row, _outcome) =
            run_strategy(strategy, &mut env, Some(&mut store), settings, step)?;
        rows.push(row);
    }
    Ok(rows)
}
