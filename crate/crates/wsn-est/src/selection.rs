//! Sensor selection by maximal-relevance minimal-redundancy scoring, with an
//! exhaustive oracle, a first-order incremental search, and a cluster-wise
//! variant under a per-cluster energy budget.

use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::error::{Error, Result};

/// Largest pool the exhaustive search will enumerate.
pub const EXHAUSTIVE_MAX_POOL: usize = 15;

/// Per-cluster energy budget: selecting m_k sensors costs r (m_k - 1) E_t,
/// the first response being free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionBudget {
    pub alpha_k: f64,
    pub r: f64,
    pub e_t: f64,
}

impl Default for SelectionBudget {
    fn default() -> Self {
        SelectionBudget {
            alpha_k: 2.0,
            r: 1.0,
            e_t: 1.0,
        }
    }
}

impl SelectionBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0) || !(self.e_t > 0.0) {
            return Err(Error::Config(format!(
                "request rate and transmission energy must be positive, got r = {}, e_t = {}",
                self.r, self.e_t
            )));
        }
        if !(self.alpha_k >= 0.0) {
            return Err(Error::Config(format!(
                "energy bound must be nonnegative, got {}",
                self.alpha_k
            )));
        }
        Ok(())
    }

    /// Largest admissible selection size; the 1e-9 slack absorbs rounding in
    /// the division so exact integer quotients are not truncated.
    pub fn max_selected(&self) -> usize {
        (self.alpha_k / (self.r * self.e_t) + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Indices in pick order (exhaustive results are sorted ascending).
    pub selected: Vec<usize>,
    /// Criterion value at each pick; a single entry for the exhaustive search.
    pub objective_trace: Vec<f64>,
}

fn validate_inputs(relevance: &[f64], redundancy: &[Vec<f64>]) -> Result<()> {
    let l = relevance.len();
    if redundancy.len() != l || redundancy.iter().any(|row| row.len() != l) {
        return Err(Error::Dimension(format!(
            "redundancy matrix does not match {l} sensors"
        )));
    }
    if relevance.iter().any(|x| !x.is_finite())
        || redundancy.iter().flatten().any(|x| !x.is_finite())
    {
        return Err(Error::InvalidArgument(
            "relevance and redundancy must be finite".into(),
        ));
    }
    Ok(())
}

/// Mean relevance minus mean pairwise redundancy of `subset`. The redundancy
/// sum runs over all ordered pairs including i = j, so keep the matrix
/// diagonal at zero.
pub fn subset_objective(relevance: &[f64], redundancy: &[Vec<f64>], subset: &[usize]) -> f64 {
    let m = subset.len();
    if m == 0 {
        return f64::NEG_INFINITY;
    }
    let rel: f64 = subset.iter().map(|&i| relevance[i]).sum();
    let mut red = 0.0;
    for &i in subset {
        for &j in subset {
            red += redundancy[i][j];
        }
    }
    rel / m as f64 - red / (m * m) as f64
}

/// Scores every size-m subset and keeps the best; ties go to the
/// lexicographically smallest subset. Meant as an oracle for small pools.
pub fn mrmr_exhaustive(
    relevance: &[f64],
    redundancy: &[Vec<f64>],
    m: usize,
) -> Result<SelectionResult> {
    validate_inputs(relevance, redundancy)?;
    let l = relevance.len();
    if m == 0 || m > l {
        return Err(Error::InvalidArgument(format!(
            "cannot select {m} of {l} sensors"
        )));
    }
    if l > EXHAUSTIVE_MAX_POOL {
        return Err(Error::InvalidArgument(format!(
            "exhaustive search capped at {EXHAUSTIVE_MAX_POOL} sensors, got {l}"
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut subset: Vec<usize> = (0..m).collect();
    loop {
        let obj = subset_objective(relevance, redundancy, &subset);
        if best.as_ref().is_none_or(|(_, b)| obj > *b) {
            best = Some((subset.clone(), obj));
        }
        // advance to the next combination in lexicographic order
        let mut i = m;
        while i > 0 {
            i -= 1;
            if subset[i] < l - m + i {
                subset[i] += 1;
                for j in i + 1..m {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
            if i == 0 {
                let (selected, obj) = best.unwrap();
                return Ok(SelectionResult {
                    selected,
                    objective_trace: vec![obj],
                });
            }
        }
    }
}

/// Greedy search over `pool`: the first pick maximizes relevance, each later
/// pick maximizes relevance minus the mean redundancy against the sensors
/// already chosen. Ties go to the lowest index.
pub fn mrmr_incremental(
    relevance: &[f64],
    redundancy: &[Vec<f64>],
    m: usize,
    pool: &[usize],
) -> Result<SelectionResult> {
    validate_inputs(relevance, redundancy)?;
    let l = relevance.len();
    if pool.iter().any(|&i| i >= l) {
        return Err(Error::InvalidArgument(
            "candidate pool references unknown sensor".into(),
        ));
    }
    let mut seen = vec![false; l];
    for &i in pool {
        if seen[i] {
            return Err(Error::InvalidArgument(format!(
                "sensor {i} appears twice in the candidate pool"
            )));
        }
        seen[i] = true;
    }
    if m == 0 || m > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {m} of {} candidates",
            pool.len()
        )));
    }
    let mut remaining: Vec<usize> = pool.to_vec();
    remaining.sort_unstable();
    let mut selected = Vec::with_capacity(m);
    let mut objective_trace = Vec::with_capacity(m);
    // cumulative redundancy of each candidate against the current selection
    let mut red_sum = vec![0.0f64; l];
    for _ in 0..m {
        let picked = selected.len() as f64;
        let mut best_pos = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (pos, &j) in remaining.iter().enumerate() {
            let score = if selected.is_empty() {
                relevance[j]
            } else {
                relevance[j] - red_sum[j] / picked
            };
            if score > best_score {
                best_score = score;
                best_pos = pos;
            }
        }
        let j = remaining.remove(best_pos);
        selected.push(j);
        objective_trace.push(best_score);
        for &c in &remaining {
            red_sum[c] += redundancy[c][j];
        }
    }
    Ok(SelectionResult {
        selected,
        objective_trace,
    })
}

/// Runs the incremental search inside each cluster with the budget-capped
/// size min(max_selected, cluster size); every cluster contributes at least
/// one sensor.
pub fn cluster_mrmr(
    clustering: &Clustering,
    relevance: &[f64],
    redundancy: &[Vec<f64>],
    budget: &SelectionBudget,
) -> Result<Vec<SelectionResult>> {
    budget.validate()?;
    validate_inputs(relevance, redundancy)?;
    if clustering.sensor_count() != relevance.len() {
        return Err(Error::Dimension(format!(
            "clustering covers {} sensors, relevance has {}",
            clustering.sensor_count(),
            relevance.len()
        )));
    }
    let cap = budget.max_selected();
    clustering
        .clusters
        .iter()
        .map(|pool| {
            let m_k = cap.min(pool.len()).max(1);
            mrmr_incremental(relevance, redundancy, m_k, pool)
        })
        .collect()
}

/// One equivalence trial: does the union of the cluster-wise picks equal the
/// global incremental pick of the same total size, as a set?
pub fn selection_agreement_trial(
    clustering: &Clustering,
    relevance: &[f64],
    redundancy: &[Vec<f64>],
    budget: &SelectionBudget,
) -> Result<bool> {
    let per_cluster = cluster_mrmr(clustering, relevance, redundancy, budget)?;
    let mut union: Vec<usize> = per_cluster
        .iter()
        .flat_map(|r| r.selected.iter().copied())
        .collect();
    union.sort_unstable();
    let m = union.len();
    let pool: Vec<usize> = (0..relevance.len()).collect();
    let mut global = mrmr_incremental(relevance, redundancy, m, &pool)?.selected;
    global.sort_unstable();
    Ok(union == global)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn zeros(l: usize) -> Vec<Vec<f64>> {
        vec![vec![0.0; l]; l]
    }

    #[test]
    fn exhaustive_zero_redundancy_is_top_by_relevance() {
        let rel = [0.1, 0.9, 0.5, 0.7];
        let res = mrmr_exhaustive(&rel, &zeros(4), 2).unwrap();
        assert_eq!(res.selected, vec![1, 3]);
        assert!((res.objective_trace[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_avoids_redundant_pair() {
        let rel = [0.5, 0.3, 0.2];
        let mut red = zeros(3);
        red[0][1] = 10.0;
        red[1][0] = 10.0;
        let res = mrmr_exhaustive(&rel, &red, 2).unwrap();
        assert_eq!(res.selected, vec![0, 2]);
        assert!((res.objective_trace[0] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_full_set_and_bounds() {
        let rel = [0.5, 0.3, 0.2];
        let res = mrmr_exhaustive(&rel, &zeros(3), 3).unwrap();
        assert_eq!(res.selected, vec![0, 1, 2]);
        assert!(mrmr_exhaustive(&rel, &zeros(3), 4).is_err());
        let big = vec![0.1; 16];
        assert!(mrmr_exhaustive(&big, &zeros(16), 2).is_err());
    }

    #[test]
    fn exhaustive_tie_is_lexicographically_smallest() {
        let rel = [0.5, 0.5, 0.5];
        let res = mrmr_exhaustive(&rel, &zeros(3), 2).unwrap();
        assert_eq!(res.selected, vec![0, 1]);
    }

    #[test]
    fn incremental_matches_hand_trace() {
        let rel = [0.5, 0.3, 0.2];
        let mut red = zeros(3);
        red[0][1] = 10.0;
        red[1][0] = 10.0;
        let pool = [0, 1, 2];
        let res = mrmr_incremental(&rel, &red, 2, &pool).unwrap();
        assert_eq!(res.selected, vec![0, 2]);
        assert!((res.objective_trace[0] - 0.5).abs() < 1e-12);
        assert!((res.objective_trace[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn incremental_zero_redundancy_sorts_by_relevance() {
        let rel = [0.1, 0.9, 0.5, 0.7];
        let res = mrmr_incremental(&rel, &zeros(4), 3, &[0, 1, 2, 3]).unwrap();
        assert_eq!(res.selected, vec![1, 3, 2]);
    }

    #[test]
    fn incremental_rejects_bad_pools() {
        let rel = [0.1, 0.9];
        assert!(mrmr_incremental(&rel, &zeros(2), 3, &[0, 1]).is_err());
        assert!(mrmr_incremental(&rel, &zeros(2), 1, &[0, 0]).is_err());
        assert!(mrmr_incremental(&rel, &zeros(2), 1, &[2]).is_err());
    }

    #[test]
    fn exhaustive_dominates_greedy_on_adversarial_instance() {
        let rel = [1.0, 0.99, 0.98];
        let mut red = zeros(3);
        red[0][1] = 0.5;
        red[1][0] = 0.5;
        red[0][2] = 0.5;
        red[2][0] = 0.5;
        let ex = mrmr_exhaustive(&rel, &red, 2).unwrap();
        let inc = mrmr_incremental(&rel, &red, 2, &[0, 1, 2]).unwrap();
        assert_eq!(ex.selected, vec![1, 2]);
        assert_eq!(inc.selected, vec![0, 1]);
        let inc_obj = subset_objective(&rel, &red, &inc.selected);
        assert!(ex.objective_trace[0] > inc_obj);
    }

    #[test]
    fn greedy_matches_oracle_under_weak_redundancy() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let l = rng.gen_range(3..=10);
            let m = rng.gen_range(1..=4.min(l));
            let rel: Vec<f64> = (0..l).map(|_| rng.gen_range(0.5..1.5)).collect();
            let min_rel = rel.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut red = zeros(l);
            for i in 0..l {
                for j in 0..i {
                    let v = rng.gen_range(0.0..0.05 * min_rel);
                    red[i][j] = v;
                    red[j][i] = v;
                }
            }
            let ex = mrmr_exhaustive(&rel, &red, m).unwrap();
            let mut inc = mrmr_incremental(&rel, &red, m, &(0..l).collect::<Vec<_>>())
                .unwrap()
                .selected;
            inc.sort_unstable();
            assert_eq!(ex.selected, inc);
        }
    }

    fn toy_clustering() -> Clustering {
        Clustering {
            clusters: vec![vec![0, 1, 2], vec![3, 4]],
            medoids: vec![0, 3],
        }
    }

    #[test]
    fn zero_budget_selects_one_relevance_argmax_per_cluster() {
        let rel = [0.2, 0.9, 0.4, 0.1, 0.6];
        let budget = SelectionBudget {
            alpha_k: 0.0,
            ..SelectionBudget::default()
        };
        let picks = cluster_mrmr(&toy_clustering(), &rel, &zeros(5), &budget).unwrap();
        assert_eq!(picks[0].selected, vec![1]);
        assert_eq!(picks[1].selected, vec![4]);
    }

    #[test]
    fn budget_caps_and_pool_exhaustion() {
        let rel = [0.2, 0.9, 0.4, 0.1, 0.6];
        let budget = SelectionBudget::default();
        assert_eq!(budget.max_selected(), 3);
        let picks = cluster_mrmr(&toy_clustering(), &rel, &zeros(5), &budget).unwrap();
        assert_eq!(picks[0].selected.len(), 3);
        assert_eq!(picks[1].selected.len(), 2);
        for (res, cluster) in picks.iter().zip(&toy_clustering().clusters) {
            let cost = budget.r * (res.selected.len() as f64 - 1.0) * budget.e_t;
            assert!(cost <= budget.alpha_k + 1e-9);
            assert!(res.selected.iter().all(|s| cluster.contains(s)));
        }
    }

    #[test]
    fn independent_clusters_agree_with_global_pick() {
        let clustering = Clustering {
            clusters: vec![vec![0, 1], vec![2, 3]],
            medoids: vec![0, 2],
        };
        let rel = [0.9, 0.1, 0.8, 0.2];
        let mut red = zeros(4);
        red[0][1] = 0.01;
        red[1][0] = 0.01;
        red[2][3] = 0.01;
        red[3][2] = 0.01;
        let budget = SelectionBudget {
            alpha_k: 0.0,
            ..SelectionBudget::default()
        };
        assert!(selection_agreement_trial(&clustering, &rel, &red, &budget).unwrap());
    }

    #[test]
    fn agreement_decays_as_clusters_couple() {
        let clustering = Clustering {
            clusters: vec![
                (0..5).collect(),
                (5..9).collect(),
                (9..13).collect(),
            ],
            medoids: vec![0, 5, 9],
        };
        let budget = SelectionBudget::default();
        let labels: Vec<usize> = (0..13).map(|s| match s {
            0..=4 => 0,
            5..=8 => 1,
            _ => 2,
        }).collect();
        let mut rates = Vec::new();
        for cross in [0.0, 0.25, 0.5] {
            let mut red = zeros(13);
            for i in 0..13 {
                for j in 0..13 {
                    if i != j {
                        red[i][j] = if labels[i] == labels[j] { 0.8 } else { cross };
                    }
                }
            }
            let mut rng = ChaCha12Rng::seed_from_u64(77);
            let mut agree = 0;
            for _ in 0..300 {
                let rel: Vec<f64> = (0..13).map(|_| rng.gen_range(0.03..0.14)).collect();
                if selection_agreement_trial(&clustering, &rel, &red, &budget).unwrap() {
                    agree += 1;
                }
            }
            rates.push(agree as f64 / 300.0);
        }
        assert!(rates[0] >= 0.95, "decoupled clusters: {rates:?}");
        assert!(
            rates[0] >= rates[1] && rates[1] >= rates[2],
            "agreement should not rise with coupling: {rates:?}"
        );
    }

    #[test]
    fn single_cluster_always_agrees() {
        let clustering = Clustering {
            clusters: vec![vec![0, 1, 2]],
            medoids: vec![0],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..20 {
            let rel: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut red = zeros(3);
            for i in 0..3 {
                for j in 0..i {
                    let v = rng.gen_range(0.0..1.0);
                    red[i][j] = v;
                    red[j][i] = v;
                }
            }
            let budget = SelectionBudget {
                alpha_k: 1.0,
                ..SelectionBudget::default()
            };
            assert!(selection_agreement_trial(&clustering, &rel, &red, &budget).unwrap());
        }
    }
}
