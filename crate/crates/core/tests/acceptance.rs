//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers. Run with
//! `cargo test --release --test acceptance -- --nocapture --test-threads=1`
//! to see the full report (the suite also passes under parallel runs).

use ema_core::labeling::SelectionPolicy;
use ema_core::orchestrator::{
    adapt, projected_cost, should_label, update_budget_aimd, AdaptRequest, AdaptationConfig,
    BenefitEstimate, TriggerPolicy, WarmStart,
};
use ema_core::sim::{
    drift_suite, gen_environment, run_drift_sequence, run_strategy, EnvironmentSpec, Learner,
    LearnerFactory, SimSettings, Strategy, Task,
};
use ema_core::state_math::{
    dkw_sample_size, gaussian_kernel, median_bandwidth, mmd, subsample, KernelSpec, StateSample,
    StateSet,
};
use ema_core::store::{add_privacy_noise, NewEntry, NoiseSpec, StateStore, StorePolicy};
use ema_core::transformer::{
    fit_transform, match_source, optimal_cluster_count, project, CandidateState,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use tempfile::TempDir;

fn gaussian_cloud(seed: u64, n: usize, mean: &[f64], scale: f64) -> Vec<StateSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let f = mean
                .iter()
                .map(|&m| {
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    m + scale
                        * (-2.0 * u1.ln()).sqrt()
                        * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            StateSample::unlabeled(f)
        })
        .collect()
}

fn set_of(env: &str, samples: Vec<StateSample>, bw: f64) -> StateSet {
    StateSet::new(env, samples, KernelSpec::gaussian(bw).unwrap()).unwrap()
}

#[test]
fn criterion_01_mmd_correctness() {
    let t0 = Instant::now();
    let pts = gaussian_cloud(1, 50, &[0.0, 1.0, -1.0], 1.0);
    let a = set_of("a", pts.clone(), 1.3);

    // Identity.
    assert!(mmd(&a, &a).unwrap() <= 1e-9);

    // Symmetry.
    let b = set_of("b", gaussian_cloud(2, 40, &[0.5, 0.5, 0.0], 1.2), 1.3);
    assert!((mmd(&a, &b).unwrap() - mmd(&b, &a).unwrap()).abs() <= 1e-12);

    // Kernel-mean form equals the brute-force double sum on <= 50-point
    // sets.
    let spec = a.kernel;
    let k = |x: &StateSample, y: &StateSample| {
        gaussian_kernel(&x.features, &y.features, &spec).unwrap()
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut saa = 0.0;
    for x in &a.samples {
        for y in &a.samples {
            saa += k(x, y);
        }
    }
    let mut sbb = 0.0;
    for x in &b.samples {
        for y in &b.samples {
            sbb += k(x, y);
        }
    }
    let mut sab = 0.0;
    for x in &a.samples {
        for y in &b.samples {
            sab += k(x, y);
        }
    }
    let brute = (saa / (na * na) + sbb / (nb * nb) - 2.0 * sab / (na * nb))
        .max(0.0)
        .sqrt();
    let fast = mmd(&a, &b).unwrap();
    assert!((fast - brute).abs() <= 1e-10, "fast {fast} vs brute {brute}");

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    println!(
        "acceptance criterion 1 (mmd correctness): PASS ({:.0} ms)",
        elapsed.as_secs_f64() * 1e3
    );
}

#[test]
fn criterion_02_dkw_bound() {
    let t0 = Instant::now();
    // Closed form over the (epsilon, delta) grid; values frozen from a
    // high-precision evaluation of -ln((1-delta)/2) / (2 eps^2).
    let expected = [
        ((0.05, 0.90), 600),
        ((0.05, 0.95), 738),
        ((0.05, 0.99), 1060),
        ((0.02, 0.90), 3745),
        ((0.02, 0.95), 4612),
        ((0.02, 0.99), 6623),
        ((0.01, 0.90), 14979),
        ((0.01, 0.95), 18445),
        ((0.01, 0.99), 26492),
    ];
    for ((eps, delta), want) in expected {
        assert_eq!(dkw_sample_size(eps, delta).unwrap(), want);
    }

    // Empirical: the sup-CDF deviation of DKW-sized subsamples stays within
    // epsilon in at least delta of 200 seeded trials.
    let (eps, delta) = (0.05, 0.95);
    let m = dkw_sample_size(eps, delta).unwrap();
    let n = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let full: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0f64).powi(2)).collect();
    let full_set = set_of(
        "full",
        full.iter().map(|&v| StateSample::unlabeled(vec![v])).collect(),
        1.0,
    );
    let mut sorted_full = full.clone();
    sorted_full.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sup_dev = |sub: &[f64]| -> f64 {
        let mut s: Vec<f64> = sub.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (nf, ns) = (sorted_full.len() as f64, s.len() as f64);
        let (mut i, mut j) = (0usize, 0usize);
        let mut sup: f64 = 0.0;
        while i < sorted_full.len() || j < s.len() {
            let x = match (sorted_full.get(i), s.get(j)) {
                (Some(&a), Some(&b)) => a.min(b),
                (Some(&a), None) => a,
                (None, Some(&b)) => b,
                (None, None) => break,
            };
            while i < sorted_full.len() && sorted_full[i] <= x {
                i += 1;
            }
            while j < s.len() && s[j] <= x {
                j += 1;
            }
            sup = sup.max((i as f64 / nf - j as f64 / ns).abs());
        }
        sup
    };
    let trials = 200;
    let mut within = 0;
    for t in 0..trials {
        let sub = subsample(&full_set, m, 31_000 + t as u64);
        let vals: Vec<f64> = sub.samples.iter().map(|s| s.features[0]).collect();
        if sup_dev(&vals) <= eps {
            within += 1;
        }
    }
    assert!(
        within as f64 >= delta * trials as f64,
        "{within}/{trials} trials within epsilon"
    );

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}, budget 30 s");
    println!(
        "acceptance criterion 2 (dkw bound): PASS (grid exact, {within}/{trials} trials within eps, {:.1} s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_03_transform_reduces_discrepancy() {
    let t0 = Instant::now();
    let mut worst_ratio: f64 = 0.0;
    for seed in 0..5u64 {
        // 2-D Gaussians shifted by 3 sigma, 500 points per side.
        let src_pts = gaussian_cloud(100 + seed, 500, &[0.0, 0.0], 1.0);
        let tgt_pts = gaussian_cloud(200 + seed, 500, &[3.0, 3.0], 1.0);
        let mut src = set_of("s", src_pts, 1.0);
        let mut tgt = set_of("t", tgt_pts, 1.0);
        let bw = median_bandwidth(&src, &tgt);
        src.kernel = KernelSpec::gaussian(bw).unwrap();
        tgt.kernel = src.kernel;
        let before = mmd(&src, &tgt).unwrap();
        let model = fit_transform(&src, &tgt, 8, 1.0).unwrap();
        let after = mmd(
            &project(&model, &src).unwrap(),
            &project(&model, &tgt).unwrap(),
        )
        .unwrap();
        let ratio = after / before;
        worst_ratio = worst_ratio.max(ratio);
        assert!(
            after < 0.5 * before,
            "seed {seed}: post {after} not below half of pre {before}"
        );
    }

    // Identical distributions give (numerically) zero aligned MMD.
    let pts = gaussian_cloud(400, 300, &[0.0, 0.0], 1.0);
    let src = set_of("s", pts.clone(), 1.0);
    let tgt = set_of("t", pts, 1.0);
    let model = fit_transform(&src, &tgt, 8, 1.0).unwrap();
    let same = mmd(
        &project(&model, &src).unwrap(),
        &project(&model, &tgt).unwrap(),
    )
    .unwrap();
    assert!(same <= 1e-6, "identical sets map to MMD {same}");

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 20.0, "took {elapsed:?}, budget 20 s");
    println!(
        "acceptance criterion 3 (transform reduces discrepancy): PASS (worst post/pre ratio {:.3}, identical {:.2e}, {:.1} s)",
        worst_ratio, same, elapsed.as_secs_f64()
    );
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    cov / (vx.sqrt() * vy.sqrt()).max(1e-12)
}

#[test]
fn criterion_04_source_selection_fidelity() {
    use ema_core::orchestrator::AdaptiveModel;
    let t0 = Instant::now();
    // Over a seeded family of shifted environments, -MMD must predict
    // warm-start accuracy gain better than -L2 distance between feature
    // means, in at least 4 of 5 seed batches.
    let mut mmd_wins = 0;
    for batch in 0..5u64 {
        let base_seed = 9000 + batch * 100;
        let target_spec = {
            let mut s = EnvironmentSpec::base("t", base_seed, Task::Regression, 4);
            s.label_noise = 0.2;
            s
        };
        let target = gen_environment(&target_spec).unwrap();
        let target_sub = subsample(&target.pool, 300, 0);

        // Cold reference: a few rounds of training on a fixed labeled
        // subset of the target.
        let mut target_train = target.pool.clone();
        let truth = target.oracle.peek_all().to_vec();
        for (i, s) in target_train.samples.iter_mut().enumerate() {
            if i % 12 == 0 {
                s.label = Some(truth[i]);
            }
        }
        let fine_tune_rounds = 2;
        let cold_acc = {
            let mut m = Learner::new(Task::Regression, 4, batch);
            for _ in 0..fine_tune_rounds {
                m.train_step(&target_train, 4);
            }
            m.accuracy(&target.test)
        };

        let mut neg_mmd = Vec::new();
        let mut neg_l2 = Vec::new();
        let mut gains = Vec::new();
        for i in 0..20u64 {
            // Half the sources shift their mean; half shift shape only
            // (mean distance is blind to those).
            let theta = 0.15 * (i % 10) as f64;
            let mut s = EnvironmentSpec::base(
                format!("s{i}"),
                base_seed + 1 + i,
                Task::Regression,
                4,
            );
            s.label_noise = 0.2;
            if i % 2 == 0 {
                s.shift.mean_offset = vec![theta; 4];
            } else {
                s.shift.cov_scale_delta = theta;
                s.shift.mixture_delta = theta / 6.0;
            }
            s.shift.label_drift = theta;
            let source = gen_environment(&s).unwrap();
            let source_sub = subsample(&source.pool, 300, 0);

            // Distances between raw input distributions.
            let bw = median_bandwidth(&target_sub, &source_sub);
            let mut a = target_sub.clone();
            let mut b = source_sub.clone();
            a.kernel = KernelSpec::gaussian(bw).unwrap();
            b.kernel = a.kernel;
            neg_mmd.push(-mmd(&a, &b).unwrap());
            let mean_of = |s: &StateSet| -> Vec<f64> {
                (0..s.dim())
                    .map(|j| {
                        s.samples.iter().map(|x| x.features[j]).sum::<f64>()
                            / s.len() as f64
                    })
                    .collect()
            };
            let (ma, mb) = (mean_of(&target_sub), mean_of(&source_sub));
            let l2: f64 = ma
                .iter()
                .zip(&mb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            neg_l2.push(-l2);

            // Warm-start gain: train on the source, fine-tune briefly on
            // the target, compare against the cold reference.
            let mut warm = Learner::new(Task::Regression, 4, batch);
            let mut source_train = source.pool.clone();
            let source_truth = source.oracle.peek_all().to_vec();
            for (k, smp) in source_train.samples.iter_mut().enumerate() {
                if k % 4 == 0 {
                    smp.label = Some(source_truth[k]);
                }
            }
            for _ in 0..6 {
                warm.train_step(&source_train, 4);
            }
            for _ in 0..fine_tune_rounds {
                warm.train_step(&target_train, 4);
            }
            gains.push(warm.accuracy(&target.test) - cold_acc);
        }
        let r_mmd = pearson(&neg_mmd, &gains);
        let r_l2 = pearson(&neg_l2, &gains);
        if r_mmd > r_l2 {
            mmd_wins += 1;
        }
        println!(
            "  batch {batch}: pearson(-mmd, gain) = {r_mmd:.3}, pearson(-l2, gain) = {r_l2:.3}"
        );
    }
    assert!(mmd_wins >= 4, "MMD outranked L2 in only {mmd_wins}/5 batches");

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}, budget 2 min");
    println!(
        "acceptance criterion 4 (source-selection fidelity): PASS ({mmd_wins}/5 batches, {:.1} s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_05_clustered_matching() {
    let t0 = Instant::now();
    // K + M/K minimized over integers for all M <= 10^4, by enumeration.
    for m in 1..=10_000usize {
        let k = optimal_cluster_count(m);
        let cost = |kk: usize| kk as f64 + m as f64 / kk as f64;
        let best = (1..=m).map(cost).fold(f64::INFINITY, f64::min);
        assert!(cost(k) <= best + 1e-9, "M={m}");
    }

    // Planted well-separated repository of M = 100 environments in 10
    // families; clustered matching must return the exhaustive argmin in
    // all 50 trials at about K + M/K = 20 comparisons.
    let stored: Vec<StateSet> = (0..100u64)
        .map(|i| {
            let family = (i % 10) as f64 * 8.0;
            set_of(
                &format!("env-{i}"),
                gaussian_cloud(5000 + i, 60, &[family, family], 0.4),
                1.0,
            )
        })
        .collect();
    let candidates: Vec<CandidateState> = stored
        .iter()
        .enumerate()
        .map(|(i, s)| CandidateState {
            env_id: &s.env_id,
            samples: s,
            cluster: i % 10,
            is_medoid: i < 10,
            recency: i as u64,
        })
        .collect();

    let mut total_comparisons = 0usize;
    for trial in 0..50u64 {
        let family = (trial % 10) as f64 * 8.0;
        let target = set_of(
            "req",
            gaussian_cloud(91_000 + trial, 80, &[family + 0.1, family], 0.4),
            1.0,
        );
        let result = match_source(&target, &candidates).unwrap();
        total_comparisons += result.comparisons;

        // Exhaustive oracle with the same subsample/bandwidth convention.
        let m = dkw_sample_size(0.02, 0.95).unwrap();
        let request = subsample(&target, m, 0);
        let spec = KernelSpec::gaussian(median_bandwidth(&request, &request)).unwrap();
        let best = stored
            .iter()
            .map(|s| {
                let mut a = request.clone();
                let mut b = s.clone();
                a.kernel = spec;
                b.kernel = spec;
                (s.env_id.clone(), mmd(&a, &b).unwrap())
            })
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        assert_eq!(
            result.source_env_id, best.0,
            "trial {trial}: clustered match disagrees with exhaustive scan"
        );
        assert!(
            result.comparisons <= 20,
            "trial {trial}: {} comparisons",
            result.comparisons
        );
    }
    let mean_comparisons = total_comparisons as f64 / 50.0;
    assert!(
        (14.0..=20.0).contains(&mean_comparisons),
        "mean comparisons {mean_comparisons}"
    );

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 1 min");
    println!(
        "acceptance criterion 5 (clustered matching): PASS (50/50 exact, mean {:.1} comparisons, {:.1} s)",
        mean_comparisons, elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_06_orchestrator_arithmetic() {
    let t0 = Instant::now();
    // Cost-inflation arithmetic, exact.
    assert_eq!(projected_cost(10.0, 1000, 500.0), 15.0);
    assert_eq!(projected_cost(10.0, 100, 200.0), 30.0);
    assert_eq!(projected_cost(7.0, 500, 0.0), 7.0);

    // Trigger arithmetic on both sides of the inequality.
    assert!(should_label(
        100.0,
        95.0,
        10.0,
        1000,
        &BenefitEstimate {
            delta_u_label: 20.0,
            delta_n: 200.0
        },
        5.0
    ));
    assert!(!should_label(
        100.0,
        95.0,
        10.0,
        100,
        &BenefitEstimate {
            delta_u_label: 0.1,
            delta_n: 200.0
        },
        100.0
    ));

    // AIMD arithmetic.
    assert_eq!(update_budget_aimd(100.0, 0.5, 0.4, 10.0, 1.0), 110.0);
    assert_eq!(update_budget_aimd(100.0, 0.4, 0.5, 10.0, 1.0), 50.0);
    assert_eq!(update_budget_aimd(100.0, 0.4, 0.4, 10.0, 1.0), 50.0);

    // A real run: the log replays.
    let spec = EnvironmentSpec::base("arith", 5, Task::Classification, 4);
    let run = || {
        let mut env = gen_environment(&spec).unwrap();
        let factory = LearnerFactory { task: Task::Classification };
        let request = AdaptRequest {
            env_id: "arith".into(),
            pool: env.pool.clone(),
            test: Some(env.test.clone()),
            org_tag: "org".into(),
            config: AdaptationConfig {
                initial_budget: 120.0,
                max_rounds: 12,
                epochs_per_round: 6,
                proxy_fraction: 0.08,
                warm_start: WarmStart::ColdStart,
                trigger: TriggerPolicy::CostBenefit,
                selection: SelectionPolicy::UtilityPerCost,
                seed: 17,
                ..AdaptationConfig::default()
            },
        };
        adapt(request, None, &mut env.oracle, &factory, 0.0).unwrap()
    };
    let out = run();
    let replay = run();
    assert_eq!(out.rounds, replay.rounds, "round log is not replayable");

    let alpha = 120.0 / 10.0;
    for (i, r) in out.rounds.iter().enumerate() {
        // Training cost identity: everything labeled so far, times epochs.
        let labeled_after = r.n_t + r.labeled_this_round;
        assert!(
            (r.c_t - (labeled_after * 6) as f64).abs() < 1e-9,
            "round {i}: c_t {} vs {} labeled x 6 epochs",
            r.c_t,
            labeled_after
        );
        // Trigger decisions replay from their logged ratios.
        if r.t >= 1 {
            assert_eq!(r.triggered, r.ratio_label > r.ratio_cont, "round {i}");
        }
    }
    // Budget transitions are AIMD-exact (+alpha, halving, warmup hold, or
    // the floor).
    for w in out.rounds.windows(2) {
        let (a, b) = (w[0].b_t, w[1].b_t);
        let additive = (b - (a + alpha)).abs() < 1e-9;
        let halved = (b - a / 2.0).abs() < 1e-9;
        let held = (b - a).abs() < 1e-9;
        let floored = b > a / 2.0 - 1e-9 && b < a + alpha + 1e-9;
        assert!(
            additive || halved || held || floored,
            "budget moved {a} -> {b}, not an AIMD transition"
        );
    }

    let elapsed = t0.elapsed();
    println!(
        "acceptance criterion 6 (orchestrator arithmetic): PASS ({} rounds replayed, {:.1} s)",
        out.rounds.len(),
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_07_cost_aware_beats_cost_agnostic() {
    let t0 = Instant::now();
    // Heavy-tailed costs plus a slice of junk telemetry (far-out samples
    // with coin-flip labels): utility-only selection chases the junk.
    let mut wins = 0;
    for seed in 1..=5u64 {
        let tmp = TempDir::new().unwrap();
        let mut suite = drift_suite(seed, Task::Classification, 4);
        for spec in &mut suite {
            spec.outlier_fraction = 0.05;
        }
        let settings = SimSettings {
            seed,
            ..SimSettings::default()
        };
        let mut totals = Vec::new();
        for strategy in [Strategy::EmaFull, Strategy::CostAgnosticLa] {
            let rows = run_drift_sequence(&suite, strategy, tmp.path(), &settings).unwrap();
            let total: f64 = rows.iter().map(|r| r.total_cost).sum();
            let reached = rows.iter().filter(|r| r.rounds_to_target.is_some()).count();
            totals.push((total, reached));
        }
        let (ema, agn) = (totals[0], totals[1]);
        let cheaper_enough = ema.0 <= 0.9 * agn.0;
        if cheaper_enough && ema.1 >= agn.1 {
            wins += 1;
        }
        println!(
            "  seed {seed}: ema {:.0} ({} reached) vs cost-agnostic {:.0} ({} reached)",
            ema.0, ema.1, agn.0, agn.1
        );
    }
    assert!(wins >= 4, "cost-aware won only {wins}/5 seeds");

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 180.0, "took {elapsed:?}, budget 3 min");
    println!(
        "acceptance criterion 7 (cost-aware labeling): PASS ({wins}/5 seeds, {:.0} s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_08_end_to_end_directional() {
    let t0 = Instant::now();
    let mut passes = 0;
    for seed in 1..=5u64 {
        let tmp = TempDir::new().unwrap();
        let suite = drift_suite(seed, Task::Classification, 4);
        let settings = SimSettings {
            seed,
            ..SimSettings::default()
        };
        let mut total = std::collections::BTreeMap::new();
        for strategy in [
            Strategy::ColdStart,
            Strategy::ContinuousLearning,
            Strategy::EmaFull,
            Strategy::EmaNoSt,
            Strategy::EmaNoLa,
        ] {
            let rows = run_drift_sequence(&suite, strategy, tmp.path(), &settings).unwrap();
            total.insert(
                strategy.name(),
                rows.iter().map(|r| r.total_cost).sum::<f64>(),
            );
        }
        let ema = total["ema_full"];
        let vs_cold = 1.0 - ema / total["cold_start"];
        let vs_cont = 1.0 - ema / total["continuous_learning"];
        let ablations_worse = total["ema_no_st"] > ema && total["ema_no_la"] > ema;
        let pass = vs_cold >= 0.15 && vs_cont >= 0.05 && ablations_worse;
        if pass {
            passes += 1;
        }
        println!(
            "  seed {seed}: vs cold {:+.0}%, vs continuous {:+.0}%, no_st {:.0}, no_la {:.0}, ema {:.0} -> {}",
            vs_cold * 100.0,
            vs_cont * 100.0,
            total["ema_no_st"],
            total["ema_no_la"],
            ema,
            if pass { "pass" } else { "fail" }
        );
    }
    assert!(passes >= 4, "directional reproduction held in only {passes}/5 seeds");

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}, budget 10 min");
    println!(
        "acceptance criterion 8 (end-to-end directional): PASS ({passes}/5 seeds, {:.0} s)",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_09_privacy_robustness() {
    let t0 = Instant::now();
    // End-to-end: clamped noise at registration must not dent final
    // accuracy by 2% absolute.
    let mut accuracy_by_sigma = Vec::new();
    for &sigma in &[0.0, 0.5, 1.0] {
        let tmp = TempDir::new().unwrap();
        let suite = &drift_suite(3, Task::Classification, 4)[..6];
        let settings = SimSettings {
            seed: 3,
            ..SimSettings::default()
        };
        let mut store = StateStore::open(
            tmp.path().join("store"),
            StorePolicy {
                capacity: 64,
                noise: NoiseSpec::new(sigma, 1.0).unwrap(),
                ..StorePolicy::default()
            },
        )
        .unwrap();
        let mut mean_acc = 0.0;
        for (step, spec) in suite.iter().enumerate() {
            let mut env = gen_environment(spec).unwrap();
            let (row, _) =
                run_strategy(Strategy::EmaFull, &mut env, Some(&mut store), &settings, step)
                    .unwrap();
            mean_acc += row.final_accuracy / suite.len() as f64;
        }
        accuracy_by_sigma.push((sigma, mean_acc));
    }
    let base = accuracy_by_sigma[0].1;
    for &(sigma, acc) in &accuracy_by_sigma[1..] {
        assert!(
            base - acc < 0.02,
            "sigma {sigma}: accuracy fell {base} -> {acc}"
        );
    }

    // MMD inflation consistent with an O(clamp^2) fit, stable across
    // sigmas, on seeded 2-D Gaussians.
    let clamps = [0.2, 0.35, 0.5];
    let mut coefficients = Vec::new();
    for &sigma in &[0.5, 1.0] {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut fitted_points = Vec::new();
        for &clamp in &clamps {
            let mut inflation_sum = 0.0;
            let trials = 3;
            for t in 0..trials {
                // Same distribution on both sides: the baseline MMD is the
                // sampling floor and noise can only lift it, so the
                // coefficient is cleanly positive.
                let source = set_of(
                    "s",
                    gaussian_cloud(70_000 + t, 400, &[0.0, 0.0], 1.0),
                    1.0,
                );
                let target = set_of(
                    "t",
                    gaussian_cloud(80_000 + t, 400, &[0.0, 0.0], 1.0),
                    1.0,
                );
                let bw = median_bandwidth(&source, &target);
                let mut a = source.clone();
                let mut b = target.clone();
                a.kernel = KernelSpec::gaussian(bw).unwrap();
                b.kernel = a.kernel;
                let before = mmd(&a, &b).unwrap();
                let mut noised =
                    add_privacy_noise(&a, &NoiseSpec::new(sigma, clamp).unwrap(), 7 + t);
                noised.kernel = a.kernel;
                let after = mmd(&noised, &b).unwrap();
                inflation_sum += after - before;
            }
            let inflation = inflation_sum / trials as f64;
            fitted_points.push((clamp, inflation));
            num += inflation * clamp * clamp;
            den += clamp.powi(4);
        }
        let c = num / den;
        assert!(c > 0.0, "sigma {sigma}: nonpositive inflation coefficient {c}");
        // The quadratic-through-origin fit must explain the data.
        let mean_inf: f64 =
            fitted_points.iter().map(|(_, i)| i).sum::<f64>() / fitted_points.len() as f64;
        let ss_tot: f64 = fitted_points
            .iter()
            .map(|(_, i)| (i - mean_inf).powi(2))
            .sum();
        let ss_res: f64 = fitted_points
            .iter()
            .map(|(cl, i)| (i - c * cl * cl).powi(2))
            .sum();
        let r2 = 1.0 - ss_res / ss_tot.max(1e-12);
        assert!(r2 > 0.6, "sigma {sigma}: quadratic fit r2 {r2}");
        coefficients.push(c);
        println!("  sigma {sigma}: inflation coefficient {c:.4}, r2 {r2:.3}");
    }
    let (c1, c2) = (coefficients[0], coefficients[1]);
    assert!(
        c1.max(c2) / c1.min(c2) <= 3.0,
        "coefficient unstable across sigmas: {c1} vs {c2}"
    );

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs_f64() < 180.0, "took {elapsed:?}, budget 3 min");
    println!(
        "acceptance criterion 9 (privacy robustness): PASS (accuracy drop < 2%, c stable {:.3}x, {:.0} s)",
        c1.max(c2) / c1.min(c2),
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_10_store_discipline() {
    let t0 = Instant::now();
    // Decay arithmetic, exact hand values at 0.9/day.
    let tmp = TempDir::new().unwrap();
    let mut store = StateStore::open(
        tmp.path().join("decay"),
        StorePolicy {
            capacity: 8,
            ..StorePolicy::default()
        },
    )
    .unwrap();
    store
        .register(
            NewEntry {
                env_id: "d".into(),
                model_blob: vec![1],
                samples: set_of("d", gaussian_cloud(1, 20, &[0.0], 1.0), 1.0),
                accuracy: 0.5,
                org_tag: "org".into(),
            },
            0.0,
        )
        .unwrap();
    for _ in 0..9 {
        store.touch("d", 0.0).unwrap();
    }
    assert_eq!(store.latest("d").unwrap().decayed_freq, 10.0);
    store.decay_all(1.0).unwrap();
    assert!((store.latest("d").unwrap().decayed_freq - 9.0).abs() < 1e-12);
    store.decay_all(2.0).unwrap();
    assert!((store.latest("d").unwrap().decayed_freq - 8.1).abs() < 1e-12);

    // Similar-pair eviction removes the lower-accuracy entry.
    let tmp2 = TempDir::new().unwrap();
    let mut store2 = StateStore::open(
        tmp2.path().join("sim"),
        StorePolicy {
            capacity: 8,
            ..StorePolicy::default()
        },
    )
    .unwrap();
    let mk = |env: &str, seed: u64, center: f64, acc: f64| NewEntry {
        env_id: env.into(),
        model_blob: vec![1],
        samples: set_of(env, gaussian_cloud(seed, 60, &[center, center], 0.3), 1.0),
        accuracy: acc,
        org_tag: "org".into(),
    };
    store2.register(mk("cold-accurate", 7, 0.0, 0.95), 0.0).unwrap();
    store2.register(mk("hot-sloppy", 7, 0.0, 0.5), 0.0).unwrap();
    store2.register(mk("far", 8, 50.0, 0.9), 0.0).unwrap();
    for _ in 0..5 {
        store2.touch("hot-sloppy", 0.0).unwrap();
        store2.touch("far", 0.0).unwrap();
    }
    assert_eq!(store2.evict(0.0).unwrap(), "hot-sloppy");

    // Capacity discipline under 100k fuzzed operations.
    let tmp3 = TempDir::new().unwrap();
    let mut store3 = StateStore::open(
        tmp3.path().join("fuzz"),
        StorePolicy {
            capacity: 6,
            ..StorePolicy::default()
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut registered = 0u64;
    for op in 0..100_000u64 {
        let now = op as f64 / 1000.0;
        match rng.gen_range(0..10) {
            0 | 1 => {
                let id = format!("f{}", rng.gen_range(0..25));
                let samples = StateSet::new(
                    id.clone(),
                    (0..3)
                        .map(|i| {
                            StateSample::new(
                                vec![registered as f64 + i as f64],
                                None,
                                1.0,
                            )
                            .unwrap()
                        })
                        .collect(),
                    KernelSpec::gaussian(1.0).unwrap(),
                )
                .unwrap();
                store3
                    .register(
                        NewEntry {
                            env_id: id,
                            model_blob: vec![(registered % 255) as u8 + 1],
                            samples,
                            accuracy: rng.gen_range(0.0..1.0),
                            org_tag: "org".into(),
                        },
                        now,
                    )
                    .unwrap();
                registered += 1;
            }
            2..=6 => {
                let id = format!("f{}", rng.gen_range(0..25));
                let _ = store3.touch(&id, now);
            }
            7 => {
                if !store3.is_empty() && rng.gen_bool(0.3) {
                    store3.evict(now).unwrap();
                }
            }
            _ => {
                if rng.gen_bool(0.02) {
                    store3.decay_all(now).unwrap();
                }
            }
        }
        assert!(store3.len() <= 6, "capacity exceeded at op {op}");
    }

    let elapsed = t0.elapsed();
    println!(
        "acceptance criterion 10 (store discipline): PASS (100k ops, {} registrations, {:.0} s)",
        registered,
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_11_matching_latency() {
    let t0 = Instant::now();
    // 200 stored entries with DKW-sized sample subsets; matching one
    // request must finish within 4 seconds on one core.
    let m = dkw_sample_size(0.05, 0.95).unwrap(); // store default: 738
    let stored: Vec<StateSet> = (0..200u64)
        .map(|i| {
            let family = (i % 14) as f64 * 5.0;
            set_of(
                &format!("env-{i}"),
                gaussian_cloud(40_000 + i, m, &[family, family, 0.0], 0.8),
                1.0,
            )
        })
        .collect();
    let candidates: Vec<CandidateState> = stored
        .iter()
        .enumerate()
        .map(|(i, s)| CandidateState {
            env_id: &s.env_id,
            samples: s,
            cluster: i % 14,
            is_medoid: i < 14,
            recency: i as u64,
        })
        .collect();
    let target = set_of(
        "req",
        gaussian_cloud(99_999, 2000, &[25.0, 25.0, 0.0], 0.8),
        1.0,
    );
    let setup = t0.elapsed();

    let t1 = Instant::now();
    let result = match_source(&target, &candidates).unwrap();
    let match_time = t1.elapsed();
    assert!(
        match_time.as_secs_f64() < 4.0,
        "match took {match_time:?}, budget 4 s"
    );
    println!(
        "acceptance criterion 11 (matching latency): PASS (matched {} over 200 entries in {:.2} s, {} comparisons; setup {:.1} s)",
        result.source_env_id,
        match_time.as_secs_f64(),
        result.comparisons,
        setup.as_secs_f64()
    );
}

#[test]
fn criterion_12_service_round_trips() {
    use ema_core::service::{serve, Client, ServiceConfig};
    use ema_core::transformer::{
        apply_regime_aware_to_source, fit_source_aligner, RegimeModel,
    };
    let t0 = Instant::now();
    let dir = TempDir::new().unwrap();
    let handle = serve(ServiceConfig::new("127.0.0.1:0", dir.path().join("store"))).unwrap();
    let addr = handle.addr().to_string();

    let mut client = Client::connect(&addr).unwrap();
    client.create_agent("agent", "org").unwrap();
    let blob: Vec<u8> = (0..200u8).map(|b| b.wrapping_mul(7)).collect();
    let stored = set_of("prior", gaussian_cloud(61, 150, &[0.0, 0.0], 0.5), 1.0);
    client
        .register("agent", "prior", &blob, &stored, 0.88)
        .unwrap();

    // Registered blob comes back byte-identical.
    let target = set_of("req", gaussian_cloud(62, 120, &[0.2, 0.0], 0.5), 1.0);
    let resp = client.transform_state("agent", &target).unwrap();
    assert_eq!(resp.model_blob, blob);

    // Client-side projection with the returned transform equals the
    // server-side projection bitwise.
    let rm = RegimeModel::from_bytes(&resp.transform_blob).unwrap();
    let aligner = fit_source_aligner(&rm).unwrap();
    let local = apply_regime_aware_to_source(&rm, &aligner, &target).unwrap();
    for (a, b) in local.samples.iter().zip(&resp.transformed_samples.samples) {
        assert_eq!(a.features, b.features);
    }

    // Sixteen concurrent agents, no lost updates.
    let mut threads = Vec::new();
    for agent in 0..16u64 {
        let addr = addr.clone();
        threads.push(std::thread::spawn(move || {
            let mut c = Client::connect(&addr).unwrap();
            let id = format!("agent-{agent}");
            c.create_agent(&id, "org").unwrap();
            c.register(
                &id,
                &format!("c12-{agent}"),
                &[agent as u8 + 1],
                &set_of(
                    "x",
                    gaussian_cloud(63 + agent, 60, &[agent as f64, 0.0], 0.5),
                    1.0,
                ),
                0.5,
            )
            .unwrap();
        }));
    }
    for t in threads {
        t.join().unwrap();
    }
    let (entries, _) = client.health().unwrap();
    assert_eq!(entries, 17, "expected 1 + 16 entries, found {entries}");
    handle.shutdown();

    let elapsed = t0.elapsed();
    println!(
        "acceptance criterion 12 (service round-trips): PASS ({:.1} s)",
        elapsed.as_secs_f64()
    );
}
