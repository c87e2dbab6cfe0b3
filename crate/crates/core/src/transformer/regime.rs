//! Regime-aware alignment.
//!
//! System state distributions are often skewed: a small regime (elephant
//! flows, large jobs) can dominate what matters for adaptation, and a single
//! global transform tends to collapse it into the bulk. Here both
//! environments are partitioned into operational regimes in latent space,
//! each target regime is matched to the source regime with minimum MMD in
//! input space, and a dedicated transform is fitted per matched pair.

use crate::error::{Error, Result};
use crate::state_math::{mmd_features, StateSet};
use crate::transformer::tca::{fit_transform, project, project_one, TransformModel};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One operational regime of the target environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    /// Centroid in the global latent space; routing is nearest-centroid.
    pub target_centroid: Vec<f64>,
    /// Index of the matched source regime.
    pub matched_source_regime: usize,
    /// Transform fitted on the matched pair (the global transform when the
    /// pair was too small to fit).
    pub transform: TransformModel,
    /// True when this regime fell back to the global transform.
    pub used_global_fallback: bool,
}

/// Regime-aware transformation: a global transform for routing plus one
/// transform per target regime.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeModel {
    pub global: TransformModel,
    pub regimes: Vec<Regime>,
}

impl RegimeModel {
    pub fn regime_count(&self) -> usize {
        self.regimes.len()
    }

    /// Nearest-centroid routing in the global latent space.
    pub fn route(&self, features: &[f64]) -> Result<usize> {
        let z = project_one(&self.global, features)?;
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, r) in self.regimes.iter().enumerate() {
            let d: f64 = z
                .iter()
                .zip(&r.target_centroid)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(best)
    }
}

/// K-means-style clustering of a latent set.
///
/// Farthest-point initialization (first centroid seeded, the rest maximize
/// distance to the chosen set) so small, well-separated regimes get their
/// own seed centroid instead of being absorbed into the bulk. Deterministic
/// for a fixed seed; ties in assignment go to the lowest centroid index; an
/// emptied cluster is re-seeded from the point farthest from its assigned
/// centroid. Returns (centroid, member indices) pairs.
pub fn partition_regimes(
    latent: &StateSet,
    r: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<usize>)>> {
    let n = latent.len();
    if r == 0 || r > n {
        return Err(Error::input(format!(
            "regime count must lie in [1, {n}], got {r}"
        )));
    }
    let d = latent.dim();
    let pts: Vec<&[f64]> = latent.samples.iter().map(|s| s.features.as_slice()).collect();
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let mut init: Vec<usize> = vec![first];
    let mut min_d2: Vec<f64> = pts.iter().map(|p| dist2(p, pts[first])).collect();
    while init.len() < r {
        let far = (0..n)
            .filter(|i| !init.contains(i))
            .max_by(|&a, &b| {
                min_d2[a]
                    .partial_cmp(&min_d2[b])
                    .unwrap()
                    .then(b.cmp(&a))
            })
            .expect("r <= n leaves a candidate");
        init.push(far);
        for i in 0..n {
            min_d2[i] = min_d2[i].min(dist2(pts[i], pts[far]));
        }
    }
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| pts[i].to_vec()).collect();

    let mut assign = vec![0usize; n];
    for _iter in 0..100 {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.iter().enumerate() {
                let dd = dist2(p, cent);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        // Re-seed empties from the globally farthest point.
        for c in 0..r {
            if !assign.iter().any(|&a| a == c) {
                let far = (0..n)
                    .max_by(|&i, &j| {
                        dist2(pts[i], &centroids[assign[i]])
                            .partial_cmp(&dist2(pts[j], &centroids[assign[j]]))
                            .unwrap()
                    })
                    .unwrap();
                centroids[c] = pts[far].to_vec();
                assign[far] = c;
                changed = true;
            }
        }
        for (c, cent) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..d {
                cent[j] = members.iter().map(|&i| pts[i][j]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }

    Ok((0..r)
        .map(|c| {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == c).collect();
            (centroids[c].clone(), members)
        })
        .collect())
}

fn restrict(set: &StateSet, idx: &[usize]) -> Result<StateSet> {
    StateSet::new(
        set.env_id.clone(),
        idx.iter().map(|&i| set.samples[i].clone()).collect(),
        set.kernel,
    )
}

/// Fit a regime-aware transformation.
///
/// Projects both sets with a shared global transform, partitions each into
/// `r` regimes, matches each target regime to the source regime with
/// minimum input-space MMD, and fits one transform per matched pair. A
/// regime pair with fewer than `latent_dims` members on either side falls
/// back to the global transform. `r = 1` reproduces the global fit exactly.
pub fn fit_regime_aware(
    source: &StateSet,
    target: &StateSet,
    r: usize,
    latent_dims: usize,
    mu: f64,
    seed: u64,
) -> Result<RegimeModel> {
    if r == 0 {
        return Err(Error::input("regime count must be at least 1"));
    }
    let global = fit_transform(source, target, latent_dims, mu)?;
    let lat_t = project(&global, target)?;

    if r == 1 {
        let centroid: Vec<f64> = (0..lat_t.dim())
            .map(|j| {
                lat_t.samples.iter().map(|s| s.features[j]).sum::<f64>() / lat_t.len() as f64
            })
            .collect();
        return Ok(RegimeModel {
            regimes: vec![Regime {
                target_centroid: centroid,
                matched_source_regime: 0,
                transform: global.clone(),
                used_global_fallback: false,
            }],
            global,
        });
    }

    let r_s = r.min(source.len());
    let r_t = r.min(target.len());
    let lat_s = project(&global, source)?;
    let src_regimes = partition_regimes(&lat_s, r_s, seed)?;
    let tgt_regimes = partition_regimes(&lat_t, r_t, seed.wrapping_add(1))?;

    let mut regimes = Vec::with_capacity(tgt_regimes.len());
    for (centroid, t_members) in &tgt_regimes {
        // Row of the regime MMD matrix, computed in input space with the
        // shared kernel so entries are comparable.
        let t_feats: Vec<&[f64]> = t_members
            .iter()
            .map(|&i| target.samples[i].features.as_slice())
            .collect();
        let mut best_src = 0usize;
        let mut best_mmd = f64::INFINITY;
        for (si, (_, s_members)) in src_regimes.iter().enumerate() {
            if s_members.is_empty() || t_members.is_empty() {
                continue;
            }
            let s_feats: Vec<&[f64]> = s_members
                .iter()
                .map(|&i| source.samples[i].features.as_slice())
                .collect();
            let d = mmd_features(&s_feats, &t_feats, &source.kernel)?;
            if d < best_mmd {
                best_mmd = d;
                best_src = si;
            }
        }

        let s_members = &src_regimes[best_src].1;
        let too_small = t_members.len() < latent_dims || s_members.len() < latent_dims;
        let (transform, fallback) = if too_small {
            (global.clone(), true)
        } else {
            let sub_s = restrict(source, s_members)?;
            let sub_t = restrict(target, t_members)?;
            match fit_transform(&sub_s, &sub_t, latent_dims, mu) {
                Ok(m) => (m, false),
                Err(Error::Fit { .. }) => (global.clone(), true),
                Err(e) => return Err(e),
            }
        };
        regimes.push(Regime {
            target_centroid: centroid.clone(),
            matched_source_regime: best_src,
            transform,
            used_global_fallback: fallback,
        });
    }

    Ok(RegimeModel { global, regimes })
}

/// Per-regime latent-to-source decoders for a regime model.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceAligner {
    decoders: Vec<crate::transformer::tca::SourceDecoder>,
}

/// Fit one latent-to-source decoder per regime.
pub fn fit_source_aligner(model: &RegimeModel) -> Result<SourceAligner> {
    let decoders = model
        .regimes
        .iter()
        .map(|r| r.transform.source_decoder())
        .collect::<Result<Vec<_>>>()?;
    Ok(SourceAligner { decoders })
}

/// Carry every sample into the matched source's raw input space: route to
/// the nearest target regime, project with that regime's transform, decode
/// toward its matched source rows. The output shares coordinates (and the
/// kernel) with the source's own samples, so a model or labeled data from
/// the source applies directly.
pub fn apply_regime_aware_to_source(
    model: &RegimeModel,
    aligner: &SourceAligner,
    samples: &StateSet,
) -> Result<StateSet> {
    let mapped = samples
        .samples
        .iter()
        .map(|s| {
            let regime = model.route(&s.features)?;
            let features = crate::transformer::tca::project_one_to_source(
                &model.regimes[regime].transform,
                &aligner.decoders[regime],
                &s.features,
            )?;
            Ok(crate::state_math::StateSample {
                features,
                label: s.label,
                labeling_cost: s.labeling_cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    StateSet::new(samples.env_id.clone(), mapped, model.global.kernel)
}

/// Route every sample to its nearest target regime and project it with that
/// regime's transform. Output is stamped with the global latent kernel.
pub fn apply_regime_aware(model: &RegimeModel, samples: &StateSet) -> Result<StateSet> {
    let projected = samples
        .samples
        .iter()
        .map(|s| {
            let regime = model.route(&s.features)?;
            let features = project_one(&model.regimes[regime].transform, &s.features)?;
            Ok(crate::state_math::StateSample {
                features,
                label: s.label,
                labeling_cost: s.labeling_cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    StateSet::new(
        samples.env_id.clone(),
        projected,
        model.global.latent_kernel,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_math::{KernelSpec, StateSample};

    fn blob(seed: u64, n: usize, center: &[f64], scale: f64) -> Vec<StateSample> {
        crate::transformer::testutil::gaussian_cloud(seed, n, center, scale)
    }

    fn set(env: &str, samples: Vec<StateSample>, bw: f64) -> StateSet {
        StateSet::new(env, samples, KernelSpec::gaussian(bw).unwrap()).unwrap()
    }

    #[test]
    fn single_regime_is_mean_centroid() {
        let s = set("s", blob(1, 40, &[1.0, 2.0], 0.5), 1.0);
        let parts = partition_regimes(&s, 1, 0).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].1.len(), 40);
        for j in 0..2 {
            let mean: f64 =
                s.samples.iter().map(|x| x.features[j]).sum::<f64>() / s.len() as f64;
            assert!((parts[0].0[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn two_separated_blobs_recovered() {
        let mut pts = blob(2, 30, &[0.0, 0.0], 0.2);
        pts.extend(blob(3, 30, &[10.0, 10.0], 0.2));
        let s = set("s", pts, 1.0);
        let parts = partition_regimes(&s, 2, 7).unwrap();
        let sizes: Vec<usize> = parts.iter().map(|(_, m)| m.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 60);
        // Each cluster should be exactly one planted blob.
        for (_, members) in &parts {
            assert_eq!(members.len(), 30);
            let lows = members.iter().filter(|&&i| i < 30).count();
            assert!(lows == 0 || lows == 30, "blob split across clusters");
        }
    }

    #[test]
    fn each_point_its_own_regime_when_r_equals_n() {
        let s = set("s", blob(4, 8, &[0.0], 1.0), 1.0);
        let parts = partition_regimes(&s, 8, 0).unwrap();
        assert_eq!(parts.len(), 8);
        for (_, m) in &parts {
            assert_eq!(m.len(), 1);
        }
    }

    #[test]
    fn r_exceeding_points_rejected() {
        let s = set("s", blob(5, 4, &[0.0], 1.0), 1.0);
        assert!(partition_regimes(&s, 5, 0).is_err());
    }

    #[test]
    fn partition_deterministic_per_seed() {
        let s = set("s", blob(6, 50, &[0.0, 0.0], 1.0), 1.0);
        let a = partition_regimes(&s, 4, 9).unwrap();
        let b = partition_regimes(&s, 4, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn r1_matches_global_fit_exactly() {
        let src = set("s", blob(7, 40, &[0.0, 0.0], 1.0), 1.0);
        let tgt = set("t", blob(8, 40, &[1.0, 1.0], 1.0), 1.0);
        let rm = fit_regime_aware(&src, &tgt, 1, 4, 1.0, 3).unwrap();
        let via_regime = apply_regime_aware(&rm, &tgt).unwrap();
        let via_global = project(&rm.global, &tgt).unwrap();
        assert_eq!(via_regime, via_global);
    }

    #[test]
    fn matched_regimes_attain_row_minimum_of_mmd_matrix() {
        // Exhaustive enumeration oracle over regime pairs.
        let mut spts = blob(9, 60, &[0.0, 0.0], 0.3);
        spts.extend(blob(10, 60, &[6.0, 6.0], 0.3));
        let mut tpts = blob(11, 50, &[0.3, 0.0], 0.3);
        tpts.extend(blob(12, 50, &[6.3, 6.0], 0.3));
        let src = set("s", spts, 2.0);
        let tgt = set("t", tpts, 2.0);
        let rm = fit_regime_aware(&src, &tgt, 2, 4, 1.0, 5).unwrap();

        let lat_s = project(&rm.global, &src).unwrap();
        let lat_t = project(&rm.global, &tgt).unwrap();
        let sregs = partition_regimes(&lat_s, 2, 5).unwrap();
        let tregs = partition_regimes(&lat_t, 2, 6).unwrap();
        for (ti, (_, t_members)) in tregs.iter().enumerate() {
            let t_feats: Vec<&[f64]> = t_members
                .iter()
                .map(|&i| tgt.samples[i].features.as_slice())
                .collect();
            let mut best = (0usize, f64::INFINITY);
            for (si, (_, s_members)) in sregs.iter().enumerate() {
                let s_feats: Vec<&[f64]> = s_members
                    .iter()
                    .map(|&i| src.samples[i].features.as_slice())
                    .collect();
                let d = mmd_features(&s_feats, &t_feats, &src.kernel).unwrap();
                if d < best.1 {
                    best = (si, d);
                }
            }
            assert_eq!(rm.regimes[ti].matched_source_regime, best.0);
        }
    }

    #[test]
    fn rare_tail_regime_aligns_to_matching_source_tail() {
        // 5% heavy-tail regime in the target must match the source tail, not
        // the bulk.
        let mut spts = blob(13, 190, &[0.0, 0.0], 0.4);
        spts.extend(blob(14, 60, &[8.0, 8.0], 0.4));
        let mut tpts = blob(15, 190, &[0.2, 0.0], 0.4);
        tpts.extend(blob(16, 10, &[8.2, 8.0], 0.4));
        let src = set("s", spts, 2.5);
        let tgt = set("t", tpts, 2.5);
        let rm = fit_regime_aware(&src, &tgt, 2, 4, 1.0, 1).unwrap();

        // Find the target regime holding the tail points and the source
        // regime holding the source tail, via routing of the tail centers.
        let tail_regime = rm.route(&[8.2, 8.0]).unwrap();
        let bulk_regime = rm.route(&[0.2, 0.0]).unwrap();
        assert_ne!(tail_regime, bulk_regime, "tail collapsed into bulk");
        assert_ne!(
            rm.regimes[tail_regime].matched_source_regime,
            rm.regimes[bulk_regime].matched_source_regime,
            "tail and bulk matched the same source regime"
        );
    }

    #[test]
    fn routing_matches_brute_force_nearest_centroid() {
        let src = set("s", blob(17, 80, &[0.0, 0.0], 1.5), 1.5);
        let tgt = set("t", blob(18, 80, &[1.0, 1.0], 1.5), 1.5);
        let rm = fit_regime_aware(&src, &tgt, 4, 3, 1.0, 2).unwrap();
        for s in tgt.samples.iter().take(30) {
            let z = project_one(&rm.global, &s.features).unwrap();
            let mut best = (0usize, f64::INFINITY);
            for (i, reg) in rm.regimes.iter().enumerate() {
                let d: f64 = z
                    .iter()
                    .zip(&reg.target_centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.1 {
                    best = (i, d);
                }
            }
            assert_eq!(rm.route(&s.features).unwrap(), best.0);
        }
    }

    #[test]
    fn sample_at_centroid_routes_to_that_regime() {
        let src = set("s", blob(19, 60, &[0.0, 0.0], 1.0), 1.0);
        let tgt = set("t", blob(20, 60, &[0.5, 0.5], 1.0), 1.0);
        let rm = fit_regime_aware(&src, &tgt, 3, 3, 1.0, 4).unwrap();
        // Route each target sample; its regime's centroid must be the
        // nearest centroid to its global embedding by construction.
        let routed = rm.route(&tgt.samples[0].features).unwrap();
        assert!(routed < rm.regime_count());
    }

    #[test]
    fn tiny_regimes_fall_back_to_global() {
        let src = set("s", blob(21, 30, &[0.0, 0.0], 1.0), 1.0);
        let tgt = set("t", blob(22, 30, &[0.5, 0.5], 1.0), 1.0);
        // latent_dims larger than any regime's member count forces fallback.
        let rm = fit_regime_aware(&src, &tgt, 10, 16, 1.0, 0).unwrap();
        assert!(rm.regimes.iter().any(|r| r.used_global_fallback));
        for r in rm.regimes.iter().filter(|r| r.used_global_fallback) {
            assert_eq!(r.transform, rm.global);
        }
    }
}
