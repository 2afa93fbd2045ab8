//! MAP estimation of the common parameter theta: per-cluster estimators that
//! combine Gaussian marginal likelihoods, a fitted copula over the cluster's
//! sensors, and a Gaussian prior; plus the single global MAP that sums all
//! cluster likelihoods.
//!
//! The copula is fitted once from EPIT pseudo-observations and frozen; the
//! theta search evaluates it at the parametric CDFs Phi((z - theta)/sigma_l).

use serde::{Deserialize, Serialize};

use crate::copula::{self, CopulaModel};
use crate::error::{Error, Result};
use crate::numeric;

/// Clamp for CDF values handed to the copula, keeping them off the
/// hypercube boundary.
const CDF_EPS: f64 = 1e-9;

pub const DEFAULT_GRID_POINTS: usize = 201;
const SEARCH_HALF_WIDTH_SIGMAS: f64 = 6.0;
const THETA_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub theta_p: f64,
    pub sigma_p2: f64,
}

impl GaussianPrior {
    pub fn new(theta_p: f64, sigma_p2: f64) -> Result<Self> {
        if !(sigma_p2 > 0.0 && sigma_p2.is_finite() && theta_p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "prior needs finite mean and positive variance, got ({theta_p}, {sigma_p2})"
            )));
        }
        Ok(GaussianPrior { theta_p, sigma_p2 })
    }

    pub fn log_pdf(&self, theta: f64) -> f64 {
        numeric::norm_logpdf(theta, self.theta_p, self.sigma_p2.sqrt())
    }
}

/// Gaussian observation marginal with mean theta and known variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub sigma2: f64,
}

impl MarginalModel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "marginal variance must be positive, got {sigma2}"
            )));
        }
        Ok(MarginalModel { sigma2 })
    }

    pub fn log_pdf(&self, z: f64, theta: f64) -> f64 {
        numeric::norm_logpdf(z, theta, self.sigma2.sqrt())
    }

    pub fn cdf(&self, z: f64, theta: f64) -> f64 {
        numeric::norm_cdf((z - theta) / self.sigma2.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    Copula,
    Independence,
}

/// Optimizer settings for the theta search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSettings {
    pub grid_points: usize,
}

impl Default for MapSettings {
    fn default() -> Self {
        MapSettings {
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapEstimate {
    pub theta: f64,
    pub log_posterior: f64,
}

/// One cluster's estimator: member sensors (global indices), the frozen
/// copula (`None` means independence), per-member marginals, and the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEstimator {
    pub sensors: Vec<usize>,
    pub copula: Option<CopulaModel>,
    pub marginals: Vec<MarginalModel>,
    pub prior: GaussianPrior,
}

/// Fits a cluster estimator from that cluster's observation columns
/// (rows = time, one column per member sensor).
pub fn fit_cluster_estimator(
    sensors: Vec<usize>,
    obs: &[Vec<f64>],
    marginals: Vec<MarginalModel>,
    prior: GaussianPrior,
    mode: EstimatorMode,
) -> Result<ClusterEstimator> {
    let d = sensors.len();
    if d == 0 {
        return Err(Error::InvalidArgument("empty cluster".into()));
    }
    if marginals.len() != d {
        return Err(Error::Dimension(format!(
            "{} marginals for {d} sensors",
            marginals.len()
        )));
    }
    if obs.iter().any(|row| row.len() != d) {
        return Err(Error::Dimension("observation columns != cluster size".into()));
    }
    let copula = match mode {
        EstimatorMode::Independence => None,
        // a single sensor has no dependence structure to fit
        EstimatorMode::Copula if d == 1 => None,
        EstimatorMode::Copula => {
            let u = copula::epit_transform(obs)?;
            let sel = copula::select_copula_aic(&copula::default_library(), &u)?;
            Some(sel.model)
        }
    };
    Ok(ClusterEstimator {
        sensors,
        copula,
        marginals,
        prior,
    })
}

impl ClusterEstimator {
    /// Marginal plus copula log-likelihood of the cluster's observations,
    /// without the prior term.
    pub fn log_likelihood(&self, theta: f64, obs: &[Vec<f64>]) -> Result<f64> {
        let d = self.sensors.len();
        let mut acc = 0.0;
        let mut u_row = vec![0.0; d];
        for row in obs {
            if row.len() != d {
                return Err(Error::Dimension(
                    "observation columns != cluster size".into(),
                ));
            }
            for (l, (&z, m)) in row.iter().zip(&self.marginals).enumerate() {
                acc += m.log_pdf(z, theta);
                u_row[l] = m.cdf(z, theta).clamp(CDF_EPS, 1.0 - CDF_EPS);
            }
            if let Some(model) = &self.copula {
                acc += model.log_density(&u_row)?;
            }
        }
        Ok(acc)
    }

    /// The MAP objective: log-likelihood plus log prior.
    pub fn log_posterior(&self, theta: f64, obs: &[Vec<f64>]) -> Result<f64> {
        Ok(self.log_likelihood(theta, obs)? + self.prior.log_pdf(theta))
    }

    pub fn map_estimate(&self, obs: &[Vec<f64>]) -> Result<MapEstimate> {
        self.map_estimate_with(obs, &MapSettings::default())
    }

    pub fn map_estimate_with(&self, obs: &[Vec<f64>], settings: &MapSettings) -> Result<MapEstimate> {
        let prior = self.prior;
        maximize_posterior(&prior, settings, |theta| self.log_likelihood(theta, obs))
    }
}

/// Cluster-based MAP baseline: one theta maximizing the summed cluster
/// log-likelihoods plus a single prior term. `obs` is the full N x L matrix.
pub fn cluster_map_global(
    estimators: &[ClusterEstimator],
    obs: &[Vec<f64>],
    settings: &MapSettings,
) -> Result<MapEstimate> {
    let first = estimators
        .first()
        .ok_or_else(|| Error::InvalidArgument("no cluster estimators".into()))?;
    if estimators.iter().any(|e| e.prior != first.prior) {
        return Err(Error::InvalidArgument(
            "cluster estimators disagree on the prior".into(),
        ));
    }
    let per_cluster: Vec<Vec<Vec<f64>>> = estimators
        .iter()
        .map(|e| extract_columns(obs, &e.sensors))
        .collect::<Result<_>>()?;
    maximize_posterior(&first.prior, settings, |theta| {
        let mut acc = 0.0;
        for (e, cobs) in estimators.iter().zip(&per_cluster) {
            acc += e.log_likelihood(theta, cobs)?;
        }
        Ok(acc)
    })
}

/// Pulls the given columns out of a full observation matrix.
pub fn extract_columns(obs: &[Vec<f64>], sensors: &[usize]) -> Result<Vec<Vec<f64>>> {
    obs.iter()
        .map(|row| {
            sensors
                .iter()
                .map(|&s| {
                    row.get(s).copied().ok_or_else(|| {
                        Error::Dimension(format!("sensor index {s} outside row of {}", row.len()))
                    })
                })
                .collect()
        })
        .collect()
}

fn maximize_posterior<F>(
    prior: &GaussianPrior,
    settings: &MapSettings,
    log_lik: F,
) -> Result<MapEstimate>
where
    F: Fn(f64) -> Result<f64>,
{
    if settings.grid_points < 3 {
        return Err(Error::Config(format!(
            "grid_points must be >= 3, got {}",
            settings.grid_points
        )));
    }
    let sigma_p = prior.sigma_p2.sqrt();
    let a = prior.theta_p - SEARCH_HALF_WIDTH_SIGMAS * sigma_p;
    let b = prior.theta_p + SEARCH_HALF_WIDTH_SIGMAS * sigma_p;
    let objective = |theta: f64| match log_lik(theta) {
        Ok(ll) => ll + prior.log_pdf(theta),
        Err(_) => f64::NEG_INFINITY,
    };
    let (theta, value) =
        numeric::grid_then_golden_max(objective, a, b, settings.grid_points, THETA_TOL);
    if !value.is_finite() {
        return Err(Error::Estimation(
            "posterior is non-finite over the whole search interval".into(),
        ));
    }
    Ok(MapEstimate {
        theta,
        log_posterior: value,
    })
}
