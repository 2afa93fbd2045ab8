//! Average consensus across cluster estimates on a fixed balanced topology,
//! and the empirical standard-deviation bound check for the fused estimate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_BETA_FRACTION: f64 = 0.9;

/// Coupling sign of the update. `Standard` applies
/// theta_i += beta * sum_j A_ij (theta_j - theta_i) and converges on
/// balanced strongly connected graphs; `Flipped` negates the coupling term
/// and is kept only for comparison runs, with no convergence guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateSign {
    #[default]
    Standard,
    Flipped,
}

/// Binary adjacency (no self-loops) plus step size. Construction validates
/// that the graph is balanced (in-degree = out-degree per node), strongly
/// connected, and that 0 < beta < 1/max_degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    adjacency: Vec<Vec<u8>>,
    beta: f64,
}

impl Topology {
    pub fn new(adjacency: Vec<Vec<u8>>, beta: f64) -> Result<Self> {
        let k = adjacency.len();
        if k == 0 {
            return Err(Error::Config("empty topology".into()));
        }
        if adjacency.iter().any(|row| row.len() != k) {
            return Err(Error::Config("adjacency matrix not square".into()));
        }
        for (i, row) in adjacency.iter().enumerate() {
            if row[i] != 0 {
                return Err(Error::Config(format!("self-loop at node {i}")));
            }
            if row.iter().any(|&a| a > 1) {
                return Err(Error::Config("adjacency entries must be 0 or 1".into()));
            }
        }
        for i in 0..k {
            let out: u32 = adjacency[i].iter().map(|&a| a as u32).sum();
            let inn: u32 = adjacency.iter().map(|row| row[i] as u32).sum();
            if out != inn {
                return Err(Error::Config(format!(
                    "node {i} unbalanced: out-degree {out}, in-degree {inn}"
                )));
            }
        }
        if !strongly_connected(&adjacency) {
            return Err(Error::Config("topology not strongly connected".into()));
        }
        let delta = max_degree(&adjacency);
        let beta_max = if delta == 0 { f64::INFINITY } else { 1.0 / delta as f64 };
        if !(beta > 0.0 && beta < beta_max) {
            return Err(Error::Config(format!(
                "beta = {beta} outside (0, {beta_max})"
            )));
        }
        Ok(Topology { adjacency, beta })
    }

    /// Complete graph on `k` nodes with beta = beta_fraction / max_degree.
    pub fn complete(k: usize, beta_fraction: f64) -> Result<Self> {
        let mut adj = vec![vec![1u8; k]; k];
        for (i, row) in adj.iter_mut().enumerate() {
            row[i] = 0;
        }
        Self::from_adjacency_fraction(adj, beta_fraction)
    }

    /// Directed ring 0 -> 1 -> ... -> k-1 -> 0 (balanced by construction).
    pub fn ring(k: usize, beta_fraction: f64) -> Result<Self> {
        let mut adj = vec![vec![0u8; k]; k];
        if k > 1 {
            for i in 0..k {
                adj[i][(i + 1) % k] = 1;
            }
        }
        Self::from_adjacency_fraction(adj, beta_fraction)
    }

    /// A random directed cycle (keeps the graph balanced and strongly
    /// connected) plus up to `extra_pairs` random symmetric edges.
    pub fn random_balanced<R: Rng + ?Sized>(
        k: usize,
        extra_pairs: usize,
        beta_fraction: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut order: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut adj = vec![vec![0u8; k]; k];
        if k > 1 {
            for w in 0..k {
                adj[order[w]][order[(w + 1) % k]] = 1;
            }
            let mut added = 0;
            let mut attempts = 0;
            while added < extra_pairs && attempts < 20 * (extra_pairs + 1) {
                attempts += 1;
                let i = rng.gen_range(0..k);
                let j = rng.gen_range(0..k);
                if i == j || adj[i][j] == 1 || adj[j][i] == 1 {
                    continue;
                }
                adj[i][j] = 1;
                adj[j][i] = 1;
                added += 1;
            }
        }
        Self::from_adjacency_fraction(adj, beta_fraction)
    }

    fn from_adjacency_fraction(adj: Vec<Vec<u8>>, beta_fraction: f64) -> Result<Self> {
        if !(beta_fraction > 0.0 && beta_fraction < 1.0) {
            return Err(Error::Config(format!(
                "beta_fraction = {beta_fraction} outside (0, 1)"
            )));
        }
        let delta = max_degree(&adj);
        let beta = if delta == 0 {
            beta_fraction
        } else {
            beta_fraction / delta as f64
        };
        Self::new(adj, beta)
    }

    pub fn k(&self) -> usize {
        self.adjacency.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn adjacency(&self) -> &[Vec<u8>] {
        &self.adjacency
    }
}

fn max_degree(adj: &[Vec<u8>]) -> u32 {
    adj.iter()
        .map(|row| row.iter().map(|&a| a as u32).sum())
        .max()
        .unwrap_or(0)
}

fn strongly_connected(adj: &[Vec<u8>]) -> bool {
    let k = adj.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let edge = if forward { adj[i][j] } else { adj[j][i] };
                if edge == 1 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    };
    reach(true) && reach(false)
}

/// One synchronous round: every node reads the previous vector.
pub fn consensus_step(estimates: &[f64], topo: &Topology) -> Vec<f64> {
    consensus_step_with(estimates, topo, UpdateSign::Standard)
}

pub fn consensus_step_with(estimates: &[f64], topo: &Topology, sign: UpdateSign) -> Vec<f64> {
    assert_eq!(estimates.len(), topo.k(), "estimate vector length != K");
    let beta = match sign {
        UpdateSign::Standard => topo.beta,
        UpdateSign::Flipped => -topo.beta,
    };
    estimates
        .iter()
        .enumerate()
        .map(|(i, &ti)| {
            let coupling: f64 = topo.adjacency[i]
                .iter()
                .zip(estimates)
                .map(|(&a, &tj)| a as f64 * (tj - ti))
                .sum();
            ti + beta * coupling
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusRun {
    /// Estimate vectors per iteration, starting with the initial one.
    pub trajectory: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Mean of the final vector.
    pub theta_hat: f64,
}

/// Iterates until the spread max - min drops below `tol` or `max_iter` is
/// reached. Non-convergence is flagged, not fatal.
pub fn run_consensus(
    initial: &[f64],
    topo: &Topology,
    tol: f64,
    max_iter: usize,
) -> Result<ConsensusRun> {
    if initial.len() != topo.k() {
        return Err(Error::Dimension(format!(
            "{} initial estimates for K = {}",
            initial.len(),
            topo.k()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tol must be positive, got {tol}")));
    }
    let mut current = initial.to_vec();
    let mut trajectory = vec![current.clone()];
    let mut iterations = 0;
    let mut converged = spread(&current) < tol;
    while !converged && iterations < max_iter {
        current = consensus_step(&current, topo);
        trajectory.push(current.clone());
        iterations += 1;
        converged = spread(&current) < tol;
    }
    let theta_hat = current.iter().sum::<f64>() / current.len() as f64;
    Ok(ConsensusRun {
        trajectory,
        iterations,
        converged,
        theta_hat,
    })
}

fn spread(v: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    hi - lo
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdBoundCheck {
    /// Sample standard deviation of the per-trial averages.
    pub lhs: f64,
    /// Average of the per-cluster sample standard deviations.
    pub rhs: f64,
    pub holds: bool,
}

/// Checks that the fused estimate's standard deviation does not exceed the
/// average per-cluster standard deviation. `samples[k]` holds cluster k's
/// estimates over M aligned trials, M >= 30.
pub fn check_std_bound(samples: &[Vec<f64>]) -> StdBoundCheck {
    let k = samples.len();
    assert!(k >= 1, "need at least one cluster");
    let m = samples[0].len();
    assert!(m >= 30, "need at least 30 trials, got {m}");
    assert!(
        samples.iter().all(|s| s.len() == m),
        "clusters disagree on trial count"
    );
    let averages: Vec<f64> = (0..m)
        .map(|t| samples.iter().map(|s| s[t]).sum::<f64>() / k as f64)
        .collect();
    let lhs = sample_std(&averages);
    let rhs = samples.iter().map(|s| sample_std(s)).sum::<f64>() / k as f64;
    let mc_se = rhs / (2.0 * (m as f64 - 1.0)).sqrt();
    let holds = lhs <= rhs + 1e-12 + 3.0 * mc_se;
    StdBoundCheck { lhs, rhs, holds }
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}
