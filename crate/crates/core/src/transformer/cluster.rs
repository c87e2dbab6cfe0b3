//! Offline clustering of candidate environments.
//!
//! With M candidates, matching a request costs K medoid comparisons plus on
//! average M/K comparisons inside the chosen cluster, so the expected cost
//! C(K) = K + M/K is minimized at K = sqrt(M). K-medoids over the pairwise
//! MMD matrix keeps real environments as cluster representatives, so a
//! medoid is always something a request can be compared against directly.

use crate::error::{Error, Result};

/// Number of clusters minimizing K + M/K over positive integers.
///
/// round(sqrt(M)) clamped to [1, M]; at a tie (M = f(f+1)) the smaller K
/// wins, which rounding already produces.
pub fn optimal_cluster_count(m: usize) -> usize {
    assert!(m >= 1, "candidate count must be at least 1");
    ((m as f64).sqrt().round() as usize).clamp(1, m)
}

/// PAM-style K-medoids over a precomputed distance matrix.
///
/// `pairwise` must be square and symmetric with a zero diagonal. Greedy
/// build initialization followed by best-improvement swaps until no swap
/// strictly lowers the total assignment cost. The procedure is
/// deterministic (ties break on the lowest index); `_seed` is accepted for
/// interface stability.
///
/// Returns (medoid indices, assignment of each point to a medoid slot).
pub fn kmedoids(
    pairwise: &[Vec<f64>],
    k: usize,
    _seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = pairwise.len();
    if k == 0 || k > m {
        return Err(Error::input(format!(
            "cluster count must lie in [1, {m}], got {k}"
        )));
    }
    for (i, row) in pairwise.iter().enumerate() {
        if row.len() != m {
            return Err(Error::input("distance matrix must be square"));
        }
        if row[i].abs() > 1e-12 {
            return Err(Error::input("distance matrix diagonal must be zero"));
        }
        for j in 0..m {
            if (row[j] - pairwise[j][i]).abs() > 1e-9 {
                return Err(Error::input("distance matrix must be symmetric"));
            }
        }
    }

    // Greedy build: first medoid minimizes total distance, then repeatedly
    // add the point with the largest cost reduction.
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    let first = (0..m)
        .min_by(|&a, &b| {
            let ca: f64 = (0..m).map(|j| pairwise[a][j]).sum();
            let cb: f64 = (0..m).map(|j| pairwise[b][j]).sum();
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        })
        .unwrap();
    medoids.push(first);
    let mut nearest: Vec<f64> = (0..m).map(|j| pairwise[first][j]).collect();
    while medoids.len() < k {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for cand in 0..m {
            if medoids.contains(&cand) {
                continue;
            }
            let gain: f64 = (0..m)
                .map(|j| (nearest[j] - pairwise[cand][j]).max(0.0))
                .sum();
            if gain > best.1 {
                best = (cand, gain);
            }
        }
        let chosen = best.0;
        medoids.push(chosen);
        for j in 0..m {
            nearest[j] = nearest[j].min(pairwise[chosen][j]);
        }
    }
    medoids.sort_unstable();

    let assignment_cost = |meds: &[usize]| -> (Vec<usize>, f64) {
        let mut assign = vec![0usize; m];
        let mut cost = 0.0;
        for j in 0..m {
            let mut slot = 0usize;
            let mut best = f64::INFINITY;
            for (s, &med) in meds.iter().enumerate() {
                if pairwise[med][j] < best {
                    best = pairwise[med][j];
                    slot = s;
                }
            }
            assign[j] = slot;
            cost += best;
        }
        (assign, cost)
    };

    let (mut assign, mut cost) = assignment_cost(&medoids);
    loop {
        let mut best_swap: Option<(usize, usize, f64)> = None;
        for slot in 0..k {
            for cand in 0..m {
                if medoids.contains(&cand) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let (_, c) = assignment_cost(&trial);
                if c < cost - 1e-12 {
                    match best_swap {
                        Some((_, _, bc)) if bc <= c => {}
                        _ => best_swap = Some((slot, cand, c)),
                    }
                }
            }
        }
        match best_swap {
            Some((slot, cand, c)) => {
                medoids[slot] = cand;
                cost = c;
                let (a, _) = assignment_cost(&medoids);
                assign = a;
            }
            None => break,
        }
    }

    Ok((medoids, assign))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimal_cluster_count_minimizes_by_enumeration() {
        for m in 1..=2000usize {
            let k = optimal_cluster_count(m);
            let cost = |kk: usize| kk as f64 + m as f64 / kk as f64;
            let best = (1..=m)
                .map(cost)
                .fold(f64::INFINITY, f64::min);
            assert!(
                cost(k) <= best + 1e-9,
                "M={m}: K={k} cost {} vs best {best}",
                cost(k)
            );
        }
    }

    #[test]
    fn optimal_cluster_count_examples() {
        assert_eq!(optimal_cluster_count(100), 10);
        assert_eq!(optimal_cluster_count(1), 1);
        // M=2 ties C(1)=C(2)=3; the smaller K wins.
        assert_eq!(optimal_cluster_count(2), 1);
    }

    fn planted_matrix(groups: &[(f64, usize)], spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        // Points on a line: group g at position groups[g].0, sizes given.
        let mut pos = Vec::new();
        let mut labels = Vec::new();
        for (g, &(center, size)) in groups.iter().enumerate() {
            for i in 0..size {
                pos.push(center + spread * i as f64 / size.max(1) as f64);
                labels.push(g);
            }
        }
        let m = pos.len();
        let mat = (0..m)
            .map(|i| (0..m).map(|j| (pos[i] - pos[j]).abs()).collect())
            .collect();
        (mat, labels)
    }

    #[test]
    fn k_equals_m_gives_zero_cost() {
        let (mat, _) = planted_matrix(&[(0.0, 3), (10.0, 2)], 0.1);
        let (medoids, assign) = kmedoids(&mat, 5, 0).unwrap();
        assert_eq!(medoids.len(), 5);
        let cost: f64 = assign
            .iter()
            .enumerate()
            .map(|(j, &s)| mat[medoids[s]][j])
            .sum();
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn three_separated_groups_get_one_medoid_each() {
        let (mat, labels) = planted_matrix(&[(0.0, 7), (50.0, 6), (100.0, 7)], 1.0);
        let (medoids, assign) = kmedoids(&mat, 3, 0).unwrap();
        // Each medoid must come from a distinct planted group.
        let medoid_groups: std::collections::BTreeSet<usize> =
            medoids.iter().map(|&m| labels[m]).collect();
        assert_eq!(medoid_groups.len(), 3);
        // And every point must be assigned to its own group's medoid.
        for (j, &slot) in assign.iter().enumerate() {
            assert_eq!(labels[medoids[slot]], labels[j]);
        }
    }

    #[test]
    fn swap_phase_never_worsens_greedy_build() {
        let (mat, _) = planted_matrix(&[(0.0, 5), (3.0, 5), (9.0, 5)], 2.0);
        // Greedy-only cost: replicate build by calling with k and measuring
        // cost before swaps is not exposed, so check the global optimum
        // bound instead: result cost must not exceed any single-medoid-set
        // cost drawn from a few heuristic choices.
        let (medoids, assign) = kmedoids(&mat, 2, 0).unwrap();
        let cost: f64 = assign
            .iter()
            .enumerate()
            .map(|(j, &s)| mat[medoids[s]][j])
            .sum();
        for alt in [[0usize, 5], [2, 12], [4, 9]] {
            let alt_cost: f64 = (0..mat.len())
                .map(|j| mat[alt[0]][j].min(mat[alt[1]][j]))
                .sum();
            assert!(cost <= alt_cost + 1e-9);
        }
    }

    #[test]
    fn kmedoids_rejects_bad_inputs() {
        let mat = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(kmedoids(&mat, 3, 0).is_err());
        assert!(kmedoids(&mat, 0, 0).is_err());
        let asym = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        assert!(kmedoids(&asym, 1, 0).is_err());
    }

    #[test]
    fn kmedoids_deterministic() {
        let (mat, _) = planted_matrix(&[(0.0, 10), (7.0, 10)], 3.0);
        assert_eq!(kmedoids(&mat, 3, 1).unwrap(), kmedoids(&mat, 3, 2).unwrap());
    }
}
