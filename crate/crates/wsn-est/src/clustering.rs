//! Merge-based K-medoid clustering on a rank-dissimilarity matrix, plus
//! matched-assignment accuracy scoring.
//!
//! Every tie (nearest center, medoid argmin, merge direction) breaks to the
//! lowest sensor or cluster index so runs are deterministic.

use serde::{Deserialize, Serialize};

use crate::dependence::{self, DependenceMeasure};
use crate::error::{Error, Result};

/// A partition of sensors 0..L into disjoint non-empty clusters, each with a
/// medoid drawn from its members. Cluster member lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub clusters: Vec<Vec<usize>>,
    pub medoids: Vec<usize>,
}

impl Clustering {
    pub fn k_hat(&self) -> usize {
        self.clusters.len()
    }

    pub fn sensor_count(&self) -> usize {
        self.clusters.iter().map(|c| c.len()).sum()
    }

    /// Cluster position index per sensor.
    pub fn labels(&self) -> Vec<usize> {
        let l = self.sensor_count();
        let mut out = vec![0; l];
        for (k, members) in self.clusters.iter().enumerate() {
            for &m in members {
                out[m] = k;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub d_th: f64,
    pub measure: DependenceMeasure,
    pub max_iterations: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            d_th: 0.83,
            measure: DependenceMeasure::Tau,
            max_iterations: 100,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_th > 0.0 && self.d_th < 1.0) {
            return Err(Error::Config(format!(
                "d_th must lie in (0, 1), got {}",
                self.d_th
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Greedy farthest-point center selection: starting from `start_index`, keep
/// adding the sensor farthest from the current centers while that distance
/// exceeds `d_th`.
pub fn init_centers(dmat: &[Vec<f64>], d_th: f64, start_index: usize) -> Vec<usize> {
    let l = dmat.len();
    let mut centers = vec![start_index];
    let mut is_center = vec![false; l];
    is_center[start_index] = true;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..l {
            if is_center[i] {
                continue;
            }
            let dmin = centers
                .iter()
                .map(|&c| dmat[i][c])
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, b)| dmin > b) {
                best = Some((i, dmin));
            }
        }
        match best {
            Some((i, dmin)) if dmin > d_th => {
                centers.push(i);
                is_center[i] = true;
            }
            _ => break,
        }
    }
    centers
}

/// Runs the full clustering on raw observations (rows = time, columns =
/// sensors).
pub fn cluster(obs: &[Vec<f64>], cfg: &ClusteringConfig) -> Result<Clustering> {
    let l = obs.first().map_or(0, |row| row.len());
    if l == 0 {
        return Err(Error::InvalidArgument("no sensor columns".into()));
    }
    if l == 1 {
        return Ok(Clustering {
            clusters: vec![vec![0]],
            medoids: vec![0],
        });
    }
    let dmat = dependence::dissimilarity_matrix(obs, cfg.measure)?;
    cluster_from_dissimilarity(&dmat, cfg)
}

/// As [`cluster`], starting from a precomputed dissimilarity matrix.
pub fn cluster_from_dissimilarity(dmat: &[Vec<f64>], cfg: &ClusteringConfig) -> Result<Clustering> {
    Ok(cluster_steps(dmat, cfg)?.pop().expect("at least one step"))
}

/// Step-mode variant: returns the state after initialization and after every
/// loop iteration, ending with the converged partition. Lets tests check the
/// partition and K-monotonicity invariants at each step.
pub fn cluster_steps(dmat: &[Vec<f64>], cfg: &ClusteringConfig) -> Result<Vec<Clustering>> {
    cfg.validate()?;
    let l = dmat.len();
    if l == 0 {
        return Err(Error::InvalidArgument("empty dissimilarity matrix".into()));
    }
    if dmat.iter().any(|row| row.len() != l) {
        return Err(Error::Dimension("dissimilarity matrix not square".into()));
    }
    let mut state = initial_state(dmat, cfg.d_th);
    let mut steps = vec![snapshot(&state)];
    for _ in 0..cfg.max_iterations {
        let before = canonical(&state.clusters);
        center_update(&mut state, dmat);
        merge_step(&mut state, dmat, cfg.d_th);
        cluster_update(&mut state, dmat);
        steps.push(snapshot(&state));
        if canonical(&state.clusters) == before {
            break;
        }
    }
    Ok(steps)
}

struct State {
    clusters: Vec<Vec<usize>>,
    medoids: Vec<usize>,
}

fn initial_state(dmat: &[Vec<f64>], d_th: f64) -> State {
    let centers = init_centers(dmat, d_th, 0);
    let mut clusters = vec![Vec::new(); centers.len()];
    for i in 0..dmat.len() {
        let mut best = 0;
        for (k, &c) in centers.iter().enumerate() {
            if dmat[i][c] < dmat[i][centers[best]] {
                best = k;
            }
        }
        clusters[best].push(i);
    }
    State {
        clusters,
        medoids: centers,
    }
}

fn center_update(state: &mut State, dmat: &[Vec<f64>]) {
    for (k, members) in state.clusters.iter().enumerate() {
        let mut best = members[0];
        let mut best_sum = f64::INFINITY;
        for &cand in members {
            let sum: f64 = members.iter().map(|&m| dmat[cand][m]).sum();
            if sum < best_sum {
                best_sum = sum;
                best = cand;
            }
        }
        state.medoids[k] = best;
    }
}

fn merge_step(state: &mut State, dmat: &[Vec<f64>], d_th: f64) {
    'scan: loop {
        let k = state.clusters.len();
        for a in 0..k {
            for b in a + 1..k {
                if dmat[state.medoids[a]][state.medoids[b]] > d_th {
                    continue;
                }
                // fold the cluster whose members sit closer to the other's
                // medoid; on ties keep the lower-indexed cluster
                let sum_a: f64 = state.clusters[a]
                    .iter()
                    .map(|&m| dmat[state.medoids[b]][m])
                    .sum();
                let sum_b: f64 = state.clusters[b]
                    .iter()
                    .map(|&m| dmat[state.medoids[a]][m])
                    .sum();
                let (keep, gone) = if sum_a < sum_b { (b, a) } else { (a, b) };
                let members = std::mem::take(&mut state.clusters[gone]);
                state.clusters[keep].extend(members);
                state.clusters[keep].sort_unstable();
                state.clusters.remove(gone);
                state.medoids.remove(gone);
                // indices shifted, restart the pair scan
                continue 'scan;
            }
        }
        break;
    }
}

fn cluster_update(state: &mut State, dmat: &[Vec<f64>]) {
    let labels_now: Vec<(usize, usize)> = state
        .clusters
        .iter()
        .enumerate()
        .flat_map(|(k, ms)| ms.iter().map(move |&m| (m, k)))
        .collect();
    for (sensor, current) in labels_now {
        let mut best = current;
        for (k, &mu) in state.medoids.iter().enumerate() {
            if dmat[sensor][mu] < dmat[sensor][state.medoids[best]] {
                best = k;
            }
        }
        if best != current {
            state.clusters[current].retain(|&m| m != sensor);
            state.clusters[best].push(sensor);
        }
    }
    // reassignment can empty a cluster; drop it
    let mut k = 0;
    while k < state.clusters.len() {
        if state.clusters[k].is_empty() {
            state.clusters.remove(k);
            state.medoids.remove(k);
        } else {
            state.clusters[k].sort_unstable();
            k += 1;
        }
    }
}

fn snapshot(state: &State) -> Clustering {
    Clustering {
        clusters: state.clusters.clone(),
        medoids: state.medoids.clone(),
    }
}

/// Clusters sorted by smallest member; partition-level equality key.
fn canonical(clusters: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut sorted: Vec<Vec<usize>> = clusters
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.sort_unstable();
            c
        })
        .collect();
    sorted.sort();
    sorted
}

/// Fraction of sensors placed consistently with `truth`, maximized over
/// injective assignments of predicted clusters to true labels. Exact via
/// subset DP; the smaller of (clusters, labels) must not exceed 24.
pub fn clustering_accuracy(predicted: &Clustering, truth: &[usize]) -> f64 {
    let l = truth.len();
    assert_eq!(
        predicted.sensor_count(),
        l,
        "predicted partition covers a different sensor count"
    );
    if l == 0 {
        return 1.0;
    }
    let mut label_ids: Vec<usize> = Vec::new();
    let mut compact = vec![0usize; l];
    for (i, &t) in truth.iter().enumerate() {
        compact[i] = match label_ids.iter().position(|&x| x == t) {
            Some(p) => p,
            None => {
                label_ids.push(t);
                label_ids.len() - 1
            }
        };
    }
    let t = label_ids.len();
    let k = predicted.k_hat();
    let mut w = vec![vec![0u32; t]; k];
    for (ki, members) in predicted.clusters.iter().enumerate() {
        for &m in members {
            w[ki][compact[m]] += 1;
        }
    }
    // mask the smaller side
    let (rows, cols, wt): (usize, usize, Vec<Vec<u32>>) = if t <= k {
        (k, t, w)
    } else {
        let mut tr = vec![vec![0u32; k]; t];
        for (i, row) in w.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                tr[j][i] = v;
            }
        }
        (t, k, tr)
    };
    assert!(cols <= 24, "accuracy matching supports at most 24 clusters");
    let mut dp = vec![0u32; 1 << cols];
    for r in 0..rows {
        let prev = dp.clone();
        for mask in 0..(1u32 << cols) {
            let mut best = prev[mask as usize];
            let mut bits = mask;
            while bits != 0 {
                let c = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let cand = prev[(mask & !(1 << c)) as usize] + wt[r][c];
                if cand > best {
                    best = cand;
                }
            }
            dp[mask as usize] = best;
        }
    }
    dp[(1usize << cols) - 1] as f64 / l as f64
}
