//! Rank correlations, the dissimilarity metric d = sqrt(1 - kappa^2),
//! pairwise dissimilarity matrices, and mutual-information estimators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::copula;
use crate::error::{Error, Result};
use crate::numeric;

/// Cap for mutual-information estimates; finite stand-in for the divergent
/// value on degenerate (comonotone) pairs.
pub const MI_CAP_NATS: f64 = 10.0;

/// Which rank measure plays kappa in the dissimilarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DependenceMeasure {
    Tau,
    Rho,
}

impl fmt::Display for DependenceMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DependenceMeasure::Tau => "tau",
            DependenceMeasure::Rho => "rho",
        })
    }
}

impl FromStr for DependenceMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(DependenceMeasure::Tau),
            "rho" => Ok(DependenceMeasure::Rho),
            other => Err(Error::InvalidArgument(format!(
                "unknown dependence measure {other:?} (expected tau or rho)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiEstimatorKind {
    GaussianClosedForm,
    CopulaIntegral,
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_len {
        return Err(Error::InvalidArgument(format!(
            "need at least {min_len} samples, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Tie-corrected Kendall tau_b. O(N^2).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]);
            let dy = y[i].total_cmp(&y[j]);
            match (dx, dy) {
                (std::cmp::Ordering::Equal, std::cmp::Ordering::Equal) => {}
                (std::cmp::Ordering::Equal, _) => ties_x += 1,
                (_, std::cmp::Ordering::Equal) => ties_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    // joint ties count toward both margins
    let joint = n0 - concordant - discordant - ties_x - ties_y;
    let nx = n0 - ties_x - joint;
    let ny = n0 - ties_y - joint;
    if nx <= 0 || ny <= 0 {
        return Err(Error::UndefinedCorrelation(
            "constant series has no rank correlation".into(),
        ));
    }
    Ok((concordant - discordant) as f64 / ((nx as f64) * (ny as f64)).sqrt())
}

/// Spearman rho: Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let rx = numeric::average_ranks(x);
    let ry = numeric::average_ranks(y);
    numeric::pearson(&rx, &ry).ok_or_else(|| {
        Error::UndefinedCorrelation("constant series has no rank correlation".into())
    })
}

/// d(x, y) = sqrt(1 - kappa^2) with kappa the chosen rank measure.
pub fn dissimilarity(x: &[f64], y: &[f64], measure: DependenceMeasure) -> Result<f64> {
    let kappa = match measure {
        DependenceMeasure::Tau => kendall_tau(x, y)?,
        DependenceMeasure::Rho => spearman_rho(x, y)?,
    };
    Ok((1.0 - kappa * kappa).max(0.0).sqrt())
}

/// Pairwise dissimilarity over sensor columns of an N x L matrix.
pub fn dissimilarity_matrix(obs: &[Vec<f64>], measure: DependenceMeasure) -> Result<Vec<Vec<f64>>> {
    let l = obs.first().map_or(0, |row| row.len());
    if l < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 sensor columns, got {l}"
        )));
    }
    if obs.iter().any(|row| row.len() != l) {
        return Err(Error::Dimension("ragged observation matrix".into()));
    }
    let cols: Vec<Vec<f64>> = (0..l)
        .map(|j| obs.iter().map(|row| row[j]).collect())
        .collect();
    let mut m = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in i + 1..l {
            let d = dissimilarity(&cols[i], &cols[j], measure).map_err(|e| {
                Error::UndefinedCorrelation(format!("sensor pair ({i}, {j}): {e}"))
            })?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

/// Pairwise mutual information over sensor columns of an N x L matrix, with
/// a zero diagonal so it can serve directly as a selection redundancy matrix.
pub fn mi_matrix(obs: &[Vec<f64>], kind: MiEstimatorKind) -> Result<Vec<Vec<f64>>> {
    let l = obs.first().map_or(0, |row| row.len());
    if l < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 sensor columns, got {l}"
        )));
    }
    if obs.iter().any(|row| row.len() != l) {
        return Err(Error::Dimension("ragged observation matrix".into()));
    }
    let cols: Vec<Vec<f64>> = (0..l)
        .map(|j| obs.iter().map(|row| row[j]).collect())
        .collect();
    let mut m = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in i + 1..l {
            let v = mutual_information(&cols[i], &cols[j], kind)?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

/// MI in nats implied by a Gaussian with correlation `r`; floored at 0 and
/// capped at [`MI_CAP_NATS`].
pub fn gaussian_mi_from_r(r: f64) -> f64 {
    if r.abs() >= 1.0 {
        return MI_CAP_NATS;
    }
    (-0.5 * (-r * r).ln_1p()).clamp(0.0, MI_CAP_NATS)
}

/// Estimates I(x; y) in nats.
pub fn mutual_information(x: &[f64], y: &[f64], kind: MiEstimatorKind) -> Result<f64> {
    check_pair(x, y, 10)?;
    match kind {
        MiEstimatorKind::GaussianClosedForm => {
            let n1 = x.len() as f64 + 1.0;
            let qx: Vec<f64> = numeric::average_ranks(x)
                .into_iter()
                .map(|rk| numeric::norm_quantile(rk / n1))
                .collect();
            let qy: Vec<f64> = numeric::average_ranks(y)
                .into_iter()
                .map(|rk| numeric::norm_quantile(rk / n1))
                .collect();
            let r = numeric::pearson(&qx, &qy).ok_or_else(|| {
                Error::UndefinedCorrelation("constant series has no mutual information".into())
            })?;
            Ok(gaussian_mi_from_r(r))
        }
        MiEstimatorKind::CopulaIntegral => {
            let rows: Vec<Vec<f64>> = x.iter().zip(y).map(|(&a, &b)| vec![a, b]).collect();
            let u = copula::epit_transform(&rows)?;
            let sel = copula::select_copula_aic(&copula::default_library(), &u)?;
            let mut acc = 0.0;
            for &(a, wa) in numeric::gl64() {
                for &(b, wb) in numeric::gl64() {
                    let c = sel.model.density(&[a, b])?;
                    if c > 0.0 {
                        acc += wa * wb * c * c.ln();
                    }
                }
            }
            Ok(acc.clamp(0.0, MI_CAP_NATS))
        }
    }
}

/// Relevance I(z_l; theta) for the Gaussian observation model z = theta + w:
/// with r^2 = sigma_p^2 / (sigma_p^2 + sigma_l^2), I = -0.5 ln(1 - r^2).
pub fn gaussian_relevance_mi(sigma_p2: f64, sigma_l2: f64) -> Result<f64> {
    if sigma_l2 <= 0.0 {
        return Err(Error::Scenario(format!(
            "noise variance must be positive, got {sigma_l2}"
        )));
    }
    if sigma_p2 < 0.0 {
        return Err(Error::Scenario(format!(
            "prior variance must be nonnegative, got {sigma_p2}"
        )));
    }
    let r2 = sigma_p2 / (sigma_p2 + sigma_l2);
    Ok((-0.5 * (-r2).ln_1p()).clamp(0.0, MI_CAP_NATS))
}
