//! Source matching against a clustered repository of candidate states.

use crate::error::{Error, Result};
use crate::state_math::{
    dkw_sample_size, median_bandwidth, mmd_features, subsample, KernelSpec, StateSet,
    DEFAULT_DKW_DELTA, DEFAULT_DKW_EPSILON,
};
use std::collections::BTreeMap;

/// A repository entry as seen by the matcher: already filtered by the
/// caller's access policy.
#[derive(Debug, Clone)]
pub struct CandidateState<'a> {
    pub env_id: &'a str,
    pub samples: &'a StateSet,
    /// Medoid cluster this entry belongs to.
    pub cluster: usize,
    /// True when this entry is its cluster's medoid.
    pub is_medoid: bool,
    /// Registration order; larger is more recent. Breaks MMD ties.
    pub recency: u64,
}

/// Result of matching a request against the repository.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub source_env_id: String,
    /// Measured MMD between the (subsampled) request and the matched entry.
    pub mmd_distance: f64,
    pub medoid_cluster: usize,
    /// Number of MMD evaluations performed (expected K + M/K).
    pub comparisons: usize,
}

/// Match a target state against candidate entries: compare to each cluster
/// representative, then to every member of the nearest cluster.
///
/// The request is subsampled to the default DKW size first, and a single
/// median-heuristic bandwidth over the request makes all distances
/// comparable. Ties break toward the most recently registered entry.
pub fn match_source(target: &StateSet, candidates: &[CandidateState]) -> Result<MatchResult> {
    if candidates.is_empty() {
        return Err(Error::NotFound("no visible repository entries".into()));
    }
    let m = dkw_sample_size(DEFAULT_DKW_EPSILON, DEFAULT_DKW_DELTA)?;
    let request = subsample(target, m, 0);
    let spec = KernelSpec::gaussian(median_bandwidth(&request, &request))?;
    let req_feats: Vec<&[f64]> = request
        .samples
        .iter()
        .map(|s| s.features.as_slice())
        .collect();

    let mut comparisons = 0usize;
    let mut cache: BTreeMap<String, f64> = BTreeMap::new();
    let mut distance = |cand: &CandidateState| -> Result<f64> {
        if let Some(&d) = cache.get(cand.env_id) {
            return Ok(d);
        }
        let feats: Vec<&[f64]> = cand
            .samples
            .samples
            .iter()
            .map(|s| s.features.as_slice())
            .collect();
        let d = mmd_features(&req_feats, &feats, &spec)?;
        comparisons += 1;
        cache.insert(cand.env_id.to_string(), d);
        Ok(d)
    };

    let mut groups: BTreeMap<usize, Vec<&CandidateState>> = BTreeMap::new();
    for c in candidates {
        groups.entry(c.cluster).or_default().push(c);
    }

    // Representative: the medoid when visible, else the most recent member.
    let mut best_cluster: Option<(usize, f64, u64)> = None;
    for (&cluster, members) in &groups {
        let rep = members
            .iter()
            .find(|c| c.is_medoid)
            .copied()
            .unwrap_or_else(|| {
                members
                    .iter()
                    .max_by_key(|c| c.recency)
                    .copied()
                    .expect("nonempty group")
            });
        let d = distance(rep)?;
        let better = match best_cluster {
            None => true,
            Some((_, bd, br)) => d < bd || (d == bd && rep.recency > br),
        };
        if better {
            best_cluster = Some((cluster, d, rep.recency));
        }
    }
    let (cluster, _, _) = best_cluster.expect("candidates nonempty");

    let mut best: Option<(&CandidateState, f64)> = None;
    for cand in &groups[&cluster] {
        let d = distance(cand)?;
        let better = match best {
            None => true,
            Some((bc, bd)) => d < bd || (d == bd && cand.recency > bc.recency),
        };
        if better {
            best = Some((cand, d));
        }
    }
    let (chosen, dist) = best.expect("cluster nonempty");
    Ok(MatchResult {
        source_env_id: chosen.env_id.to_string(),
        mmd_distance: dist,
        medoid_cluster: chosen.cluster,
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_math::mmd;

    fn cloud(seed: u64, n: usize, center: f64) -> StateSet {
        let samples = crate::transformer::testutil::gaussian_cloud(
            seed,
            n,
            &[center, center],
            0.3,
        );
        StateSet::new(
            format!("env-{seed}"),
            samples,
            KernelSpec::gaussian(1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn exact_copy_matches_with_near_zero_mmd() {
        let target = cloud(1, 120, 0.0);
        let mut copy = target.clone();
        copy.env_id = "stored".into();
        let far = cloud(2, 120, 5.0);
        let cands = vec![
            CandidateState {
                env_id: "stored",
                samples: &copy,
                cluster: 0,
                is_medoid: true,
                recency: 0,
            },
            CandidateState {
                env_id: "far",
                samples: &far,
                cluster: 1,
                is_medoid: true,
                recency: 1,
            },
        ];
        let res = match_source(&target, &cands).unwrap();
        assert_eq!(res.source_env_id, "stored");
        assert!(res.mmd_distance < 1e-9);
    }

    #[test]
    fn matched_entry_is_cluster_argmin_by_full_scan() {
        let target = cloud(3, 100, 1.0);
        let stored: Vec<StateSet> = (0..6).map(|i| cloud(10 + i, 100, i as f64)).collect();
        let cands: Vec<CandidateState> = stored
            .iter()
            .enumerate()
            .map(|(i, s)| CandidateState {
                env_id: &s.env_id,
                samples: s,
                cluster: 0,
                is_medoid: i == 0,
                recency: i as u64,
            })
            .collect();
        let res = match_source(&target, &cands).unwrap();
        // Full-scan oracle over the cluster with the same subsample/bandwidth
        // scheme.
        let m = dkw_sample_size(DEFAULT_DKW_EPSILON, DEFAULT_DKW_DELTA).unwrap();
        let request = subsample(&target, m, 0);
        let spec = KernelSpec::gaussian(median_bandwidth(&request, &request)).unwrap();
        let best = stored
            .iter()
            .map(|s| {
                let mut a = request.clone();
                a.kernel = spec;
                let mut b = s.clone();
                b.kernel = spec;
                (s.env_id.clone(), mmd(&a, &b).unwrap())
            })
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        assert_eq!(res.source_env_id, best.0);
    }

    #[test]
    fn clustered_matching_agrees_with_exhaustive_scan_on_planted_instance() {
        // Well-separated families of environments; clustered matching must
        // return the global argmin.
        let mut stored = Vec::new();
        for fam in 0..4u64 {
            for i in 0..5u64 {
                stored.push((fam, cloud(100 + fam * 10 + i, 80, fam as f64 * 10.0)));
            }
        }
        let target = cloud(999, 80, 20.0); // nearest family 2
        let cands: Vec<CandidateState> = stored
            .iter()
            .enumerate()
            .map(|(i, (fam, s))| CandidateState {
                env_id: &s.env_id,
                samples: s,
                cluster: *fam as usize,
                is_medoid: i % 5 == 0,
                recency: i as u64,
            })
            .collect();
        let res = match_source(&target, &cands).unwrap();

        let m = dkw_sample_size(DEFAULT_DKW_EPSILON, DEFAULT_DKW_DELTA).unwrap();
        let request = subsample(&target, m, 0);
        let spec = KernelSpec::gaussian(median_bandwidth(&request, &request)).unwrap();
        let req_feats: Vec<&[f64]> = request
            .samples
            .iter()
            .map(|s| s.features.as_slice())
            .collect();
        let best = stored
            .iter()
            .map(|(_, s)| {
                let feats: Vec<&[f64]> =
                    s.samples.iter().map(|x| x.features.as_slice()).collect();
                (
                    s.env_id.clone(),
                    mmd_features(&req_feats, &feats, &spec).unwrap(),
                )
            })
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        assert_eq!(res.source_env_id, best.0);
        // K clusters + members of one cluster, far fewer than a full scan.
        assert!(res.comparisons <= 4 + 5);
    }

    #[test]
    fn empty_repository_is_not_found() {
        let target = cloud(5, 50, 0.0);
        assert!(matches!(
            match_source(&target, &[]),
            Err(Error::NotFound(_))
        ));
    }
}
