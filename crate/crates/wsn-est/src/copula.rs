//! Copula families: CDF and density evaluation, sampling, EPIT
//! pseudo-observations, MLE parameter fitting, and AIC family selection.
//!
//! All families are exchangeable with a scalar dependence parameter, so a
//! model is (family, phi, dimension). Densities are evaluated in log space
//! and clamped to [1e-300, 1e300] to keep likelihood sums finite.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;

/// Largest supported copula dimension (bounded by the factorial tables used
/// for the Gumbel and Frank multivariate densities).
pub const MAX_DIM: usize = 32;

const LOG_DENSITY_FLOOR: f64 = -690.775527898213705; // ln(1e-300)
const LOG_DENSITY_CEIL: f64 = 690.775527898213705;
const U_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Independence,
    Clayton,
    Gumbel,
    Frank,
    Gaussian,
}

impl CopulaFamily {
    /// Number of free parameters; the AIC penalty q.
    pub fn parameter_count(self) -> usize {
        match self {
            CopulaFamily::Independence => 0,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Independence => "independence",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Gumbel => "gumbel",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independence" => Ok(CopulaFamily::Independence),
            "clayton" => Ok(CopulaFamily::Clayton),
            "gumbel" => Ok(CopulaFamily::Gumbel),
            "frank" => Ok(CopulaFamily::Frank),
            "gaussian" => Ok(CopulaFamily::Gaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown copula family {other:?}"
            ))),
        }
    }
}

/// The default fitting library.
pub fn default_library() -> Vec<CopulaFamily> {
    vec![
        CopulaFamily::Independence,
        CopulaFamily::Clayton,
        CopulaFamily::Gumbel,
        CopulaFamily::Frank,
        CopulaFamily::Gaussian,
    ]
}

/// An exchangeable copula with scalar parameter `phi` in dimension `d`.
///
/// Parameter domains: Clayton phi > 0, Gumbel phi >= 1, Frank phi != 0
/// (phi > 0 when d >= 3), Gaussian phi a correlation in (-1, 1) with
/// 1 + (d-1) phi > 0 so the exchangeable matrix stays positive definite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    family: CopulaFamily,
    phi: f64,
    d: usize,
}

impl CopulaModel {
    pub fn new(family: CopulaFamily, phi: f64, d: usize) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&d) {
            return Err(Error::Dimension(format!(
                "copula dimension {d} outside 2..={MAX_DIM}"
            )));
        }
        let bad = |detail: String| Error::ParameterDomain {
            family: family.name(),
            detail,
        };
        if family != CopulaFamily::Independence && !phi.is_finite() {
            return Err(bad(format!("phi = {phi} is not finite")));
        }
        match family {
            CopulaFamily::Independence => {}
            CopulaFamily::Clayton => {
                if phi <= 0.0 {
                    return Err(bad(format!("phi = {phi}, need phi > 0")));
                }
            }
            CopulaFamily::Gumbel => {
                if phi < 1.0 {
                    return Err(bad(format!("phi = {phi}, need phi >= 1")));
                }
            }
            CopulaFamily::Frank => {
                if phi == 0.0 {
                    return Err(bad("phi = 0 excluded".into()));
                }
                if d >= 3 && phi < 0.0 {
                    return Err(bad(format!("phi = {phi}, need phi > 0 when d >= 3")));
                }
            }
            CopulaFamily::Gaussian => {
                if phi.abs() >= 1.0 || 1.0 + (d - 1) as f64 * phi <= 0.0 {
                    return Err(bad(format!(
                        "correlation {phi} not positive definite for d = {d}"
                    )));
                }
            }
        }
        let phi = if family == CopulaFamily::Independence {
            0.0
        } else {
            phi
        };
        Ok(CopulaModel { family, phi, d })
    }

    pub fn independence(d: usize) -> Result<Self> {
        CopulaModel::new(CopulaFamily::Independence, 0.0, d)
    }

    pub fn family(&self) -> CopulaFamily {
        self.family
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn checked_point(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.d {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, model dimension is {}",
                u.len(),
                self.d
            )));
        }
        if u.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidPoint);
        }
        Ok(u.iter().map(|&x| x.clamp(U_EPS, 1.0 - U_EPS)).collect())
    }

    /// C(u | phi).
    pub fn cdf(&self, u: &[f64]) -> Result<f64> {
        let u = self.checked_point(u)?;
        let c = match self.family {
            CopulaFamily::Independence => u.iter().product(),
            CopulaFamily::Clayton => clayton_cdf(&u, self.phi),
            CopulaFamily::Gumbel => gumbel_cdf(&u, self.phi),
            CopulaFamily::Frank => frank_cdf(&u, self.phi),
            CopulaFamily::Gaussian => gaussian_cdf(&u, self.phi)?,
        };
        Ok(c.clamp(0.0, 1.0))
    }

    /// log c(u | phi), clamped to keep likelihood sums finite.
    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        let u = self.checked_point(u)?;
        let lc = match self.family {
            CopulaFamily::Independence => 0.0,
            CopulaFamily::Clayton => clayton_log_density(&u, self.phi),
            CopulaFamily::Gumbel => gumbel_log_density(&u, self.phi),
            CopulaFamily::Frank => frank_log_density(&u, self.phi),
            CopulaFamily::Gaussian => gaussian_log_density(&u, self.phi),
        };
        if lc.is_nan() {
            return Err(Error::ParameterDomain {
                family: self.family.name(),
                detail: format!("density evaluation produced NaN at phi = {}", self.phi),
            });
        }
        Ok(lc.clamp(LOG_DENSITY_FLOOR, LOG_DENSITY_CEIL))
    }

    /// c(u | phi).
    pub fn density(&self, u: &[f64]) -> Result<f64> {
        Ok(self.log_density(u)?.exp())
    }

    /// Draws `n` i.i.d. rows from the copula.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be >= 1".into()));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let row = match self.family {
                CopulaFamily::Independence => (0..self.d).map(|_| rng.gen::<f64>()).collect(),
                CopulaFamily::Clayton => sample_clayton_row(self.phi, self.d, rng)?,
                CopulaFamily::Gumbel => sample_gumbel_row(self.phi, self.d, rng),
                CopulaFamily::Frank => sample_frank_row(self.phi, self.d, rng)?,
                CopulaFamily::Gaussian => sample_gaussian_row(self.phi, self.d, rng),
            };
            out.push(
                row.into_iter()
                    .map(|x: f64| x.clamp(U_EPS, 1.0 - U_EPS))
                    .collect(),
            );
        }
        Ok(out)
    }
}

// ---- family CDFs ----

fn clayton_cdf(u: &[f64], phi: f64) -> f64 {
    (-clayton_log_sum(u, phi) / phi).exp()
}

/// ln(sum u_m^-phi - (d-1)), computed against the largest term.
fn clayton_log_sum(u: &[f64], phi: f64) -> f64 {
    let a: Vec<f64> = u.iter().map(|&x| -phi * x.ln()).collect();
    let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = a.iter().map(|&ai| (ai - m).exp()).sum::<f64>()
        - (u.len() as f64 - 1.0) * (-m).exp();
    m + s.max(1e-300).ln()
}

fn gumbel_cdf(u: &[f64], phi: f64) -> f64 {
    let ln_t = log_sum_exp(u.iter().map(|&x| phi * (-x.ln()).ln()));
    (-(ln_t / phi).exp()).exp()
}

fn frank_cdf(u: &[f64], phi: f64) -> f64 {
    if phi > 0.0 {
        // x_t = prod(1 - e^{-phi u}) / (1 - e^{-phi})^{d-1}, in (0, 1);
        // 1 - x_t via expm1 to survive x_t rounding to 1 at large phi
        let ln_xt: f64 = u.iter().map(|&x| log1mexp(phi * x)).sum::<f64>()
            - (u.len() as f64 - 1.0) * log1mexp(phi);
        -(-ln_xt.exp_m1()).max(1e-300).ln() / phi
    } else {
        // d = 2 only (constructor enforces it); terms e^{-phi u} - 1 are positive
        let lg = |x: f64| {
            let s = -phi * x;
            s + (-(-s).exp()).ln_1p()
        };
        let ln_ratio = lg(u[0]) + lg(u[1]) - lg(1.0);
        -softplus(ln_ratio) / phi
    }
}

fn gaussian_cdf(u: &[f64], r: f64) -> Result<f64> {
    let q: Vec<f64> = u.iter().map(|&x| numeric::norm_quantile(x)).collect();
    if r == 0.0 {
        return Ok(u.iter().product());
    }
    if q.len() == 2 {
        return Ok(numeric::bivariate_norm_cdf(q[0], q[1], r));
    }
    if r < 0.0 {
        return Err(Error::Unsupported(
            "gaussian copula CDF with negative correlation needs d = 2".into(),
        ));
    }
    // one-factor form: X_m = sqrt(r) Z + sqrt(1-r) eps_m
    let sr = r.sqrt();
    let s1r = (1.0 - r).sqrt();
    let (lo, hi) = (-8.5f64, 8.5f64);
    let mut acc = 0.0;
    for &(t01, w) in numeric::gl64() {
        let z = lo + (hi - lo) * t01;
        let phi_z = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let prod: f64 = q
            .iter()
            .map(|&x| numeric::norm_cdf((x - sr * z) / s1r))
            .product();
        acc += w * phi_z * prod;
    }
    Ok(acc * (hi - lo))
}

// ---- family log densities ----

fn clayton_log_density(u: &[f64], phi: f64) -> f64 {
    let d = u.len() as f64;
    let const_term: f64 = (1..u.len()).map(|j| (1.0 + j as f64 * phi).ln()).sum();
    let ln_s = clayton_log_sum(u, phi);
    let sum_ln_u: f64 = u.iter().map(|&x| x.ln()).sum();
    const_term - (1.0 / phi + d) * ln_s - (1.0 + phi) * sum_ln_u
}

fn gumbel_log_density(u: &[f64], phi: f64) -> f64 {
    let d = u.len();
    let alpha = 1.0 / phi;
    let ln_tm: Vec<f64> = u.iter().map(|&x| phi * (-x.ln()).ln()).collect();
    let ln_t = log_sum_exp(ln_tm.iter().cloned());
    let ln_z = alpha * ln_t;
    let z = ln_z.exp();
    // |psi^(d)(t)| = e^-z t^-d sum_k a_k z^k with a_k from Stirling numbers
    let coef = gumbel_poly_coefficients(d, alpha);
    let ln_poly = log_sum_exp(
        coef.iter()
            .enumerate()
            .filter(|(_, &a)| a > 0.0)
            .map(|(k, &a)| a.ln() + (k + 1) as f64 * ln_z),
    );
    let sum_ln_u: f64 = u.iter().map(|&x| x.ln()).sum();
    -z - d as f64 * ln_t + ln_poly + d as f64 * phi.ln() + (1.0 - alpha) * ln_tm.iter().sum::<f64>()
        - sum_ln_u
}

/// Coefficients a_k of z^{k+1}, k = 0..d-1, in the Gumbel derivative
/// polynomial: a_k = (-1)^{d-k-1} sum_j alpha^j s(d, j) S(j, k+1).
fn gumbel_poly_coefficients(d: usize, alpha: f64) -> Vec<f64> {
    let s1 = stirling_first();
    let s2 = stirling_second();
    (1..=d)
        .map(|k| {
            let mut acc = 0.0;
            for j in k..=d {
                acc += alpha.powi(j as i32) * s1[d][j] * s2[j][k];
            }
            let sign = if (d - k) % 2 == 0 { 1.0 } else { -1.0 };
            (sign * acc).max(0.0)
        })
        .collect()
}

fn frank_log_density(u: &[f64], phi: f64) -> f64 {
    if u.len() == 2 {
        // c = phi p e^{-phi(u+v)} / (p - x y)^2 with p = 1 - e^-phi, x, y likewise
        let p = -(-phi).exp_m1();
        let denom = if phi > 0.0 {
            // p - x y regrouped as two positive terms; the direct form cancels
            // catastrophically once x, y, p all round to 1
            let (a, b) = (u[0], u[1]);
            (-phi * a).exp() * (-(-phi * b).exp_m1())
                + (-phi * b).exp() * (-(-phi * (1.0 - b)).exp_m1())
        } else {
            let x = -(-phi * u[0]).exp_m1();
            let y = -(-phi * u[1]).exp_m1();
            (p - x * y).abs()
        };
        (phi * p).abs().ln() - phi * (u[0] + u[1]) - 2.0 * denom.max(1e-300).ln()
    } else {
        let d = u.len();
        let ln_xm: Vec<f64> = u.iter().map(|&x| log1mexp(phi * x)).collect();
        let ln_xt = ln_xm.iter().sum::<f64>() - (d as f64 - 1.0) * log1mexp(phi);
        let sum_term: f64 = u
            .iter()
            .zip(&ln_xm)
            .map(|(&x, &lx)| -phi * x - lx)
            .sum();
        (d as f64 - 1.0) * phi.ln() + log_polylog_neg(d - 1, ln_xt) + sum_term
    }
}

/// ln Li_{-n}(x) for x in (0,1), via the Eulerian-polynomial closed form.
fn log_polylog_neg(n: usize, ln_x: f64) -> f64 {
    let eul = eulerian_row(n);
    let ln_num = log_sum_exp(
        eul.iter()
            .enumerate()
            .map(|(i, &a)| a.ln() + (i + 1) as f64 * ln_x),
    );
    // 1 - x = -expm1(ln x), stable when x rounds to 1
    ln_num - (n as f64 + 1.0) * (-ln_x.exp_m1()).max(1e-300).ln()
}

fn gaussian_log_density(u: &[f64], r: f64) -> f64 {
    let d = u.len() as f64;
    let q: Vec<f64> = u.iter().map(|&x| numeric::norm_quantile(x)).collect();
    let sum_q: f64 = q.iter().sum();
    let sum_q2: f64 = q.iter().map(|&x| x * x).sum();
    let trailing = 1.0 + (d - 1.0) * r;
    let ln_det = (d - 1.0) * (1.0 - r).ln() + trailing.ln();
    let quad = (sum_q2 - r * sum_q * sum_q / trailing) / (1.0 - r);
    -0.5 * ln_det - 0.5 * (quad - sum_q2)
}

// ---- sampling ----

fn sample_clayton_row<R: Rng + ?Sized>(phi: f64, d: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(1.0 / phi, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("gamma frailty: {e}")))?;
    let w: f64 = gamma.sample(rng);
    Ok((0..d)
        .map(|_| {
            let e: f64 = rng.sample(Exp1);
            // (1 + E/W)^(-1/phi)
            (-(e / w).ln_1p() / phi).exp()
        })
        .collect())
}

fn sample_gumbel_row<R: Rng + ?Sized>(phi: f64, d: usize, rng: &mut R) -> Vec<f64> {
    if phi <= 1.0 + 1e-9 {
        return (0..d).map(|_| rng.gen::<f64>()).collect();
    }
    let alpha = 1.0 / phi;
    // positive stable frailty, Chambers-Mallows-Stuck
    let theta: f64 = rng.gen::<f64>() * std::f64::consts::PI;
    let e: f64 = rng.sample(Exp1);
    let w = (alpha * theta).sin() / theta.sin().powf(1.0 / alpha)
        * (((1.0 - alpha) * theta).sin() / e).powf((1.0 - alpha) / alpha);
    (0..d)
        .map(|_| {
            let em: f64 = rng.sample(Exp1);
            (-(em / w).powf(alpha)).exp()
        })
        .collect()
}

fn sample_frank_row<R: Rng + ?Sized>(phi: f64, d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if phi > 0.0 {
        let p = -(-phi).exp_m1();
        let w = sample_log_series(p, phi, rng);
        Ok((0..d)
            .map(|_| {
                let e: f64 = rng.sample(Exp1);
                -(-p * (-e / w).exp()).ln_1p() / phi
            })
            .collect())
    } else if d == 2 {
        // conditional inverse: v = -ln(1 + w(e^-phi - 1)/(e^{-phi u}(1-w) + w))/phi
        let u: f64 = rng.gen();
        let w: f64 = rng.gen::<f64>().clamp(U_EPS, 1.0 - U_EPS);
        let num = w * (-phi).exp_m1();
        let den = (-phi * u).exp() * (1.0 - w) + w;
        let v = -(num / den).ln_1p() / phi;
        Ok(vec![u, v])
    } else {
        Err(Error::Unsupported(
            "frank sampling with phi < 0 needs d = 2".into(),
        ))
    }
}

/// Logarithmic-series variate on {1, 2, ...} with parameter `p = 1 - e^-phi`,
/// by Kemp's algorithm.
fn sample_log_series<R: Rng + ?Sized>(p: f64, phi: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.gen::<f64>().max(1e-300);
    if u > p {
        return 1.0;
    }
    let v: f64 = rng.gen::<f64>().max(1e-300);
    let q = -(-v * phi).exp_m1(); // 1 - (1-p)^v
    if u < q * q {
        let k = (1.0 + u.ln() / q.ln().min(-1e-300)).floor();
        return k.max(1.0);
    }
    if u > q {
        1.0
    } else {
        2.0
    }
}

fn sample_gaussian_row<R: Rng + ?Sized>(r: f64, d: usize, rng: &mut R) -> Vec<f64> {
    let df = d as f64;
    let a = (1.0 - r).sqrt();
    let b = ((1.0 + (df - 1.0) * r).sqrt() - a) / df;
    let y: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let sy: f64 = y.iter().sum();
    y.iter().map(|&yi| numeric::norm_cdf(a * yi + b * sy)).collect()
}

// ---- EPIT ----

/// Rank/(N+1) pseudo-observations column by column; ties get average ranks.
pub fn epit_transform(data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "EPIT needs at least 2 rows, got {n}"
        )));
    }
    let d = data[0].len();
    if data.iter().any(|row| row.len() != d) {
        return Err(Error::Dimension("ragged observation matrix".into()));
    }
    let mut out = vec![vec![0.0; d]; n];
    let scale = 1.0 / (n as f64 + 1.0);
    for col in 0..d {
        let series: Vec<f64> = data.iter().map(|row| row[col]).collect();
        for (row, rank) in numeric::average_ranks(&series).into_iter().enumerate() {
            out[row][col] = rank * scale;
        }
    }
    Ok(out)
}

// ---- pair mutual information ----

/// Mutual information in nats between two coordinates of the family, i.e.
/// the MI of its bivariate margin. Margins drop out of MI, so this is a pure
/// dependence strength. Gaussian has a closed form; the others integrate
/// c log c numerically, good to about three decimals at deployed parameter
/// ranges.
pub fn pair_mutual_information(family: CopulaFamily, phi: f64) -> Result<f64> {
    match family {
        CopulaFamily::Independence => Ok(0.0),
        CopulaFamily::Gaussian => {
            let model = CopulaModel::new(family, phi, 2)?;
            let r = model.phi();
            Ok(-0.5 * (1.0 - r * r).ln())
        }
        _ => pair_mi_quadrature(&CopulaModel::new(family, phi, 2)?),
    }
}

/// Simpson product rule over the unit square under u = sin^2(pi s / 2) per
/// axis, which piles nodes into the corners where Archimedean densities
/// blow up. Endpoint indices are skipped: their jacobian is analytically
/// zero even though sin(pi) evaluates to ~1e-16.
fn pair_mi_quadrature(model: &CopulaModel) -> Result<f64> {
    let pi = std::f64::consts::PI;
    let n = 512usize;
    let h = 1.0 / n as f64;
    let nodes: Vec<(f64, f64)> = (1..n)
        .map(|i| {
            let s = i as f64 * h;
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            let u = (0.5 * pi * s).sin().powi(2);
            let j = 0.5 * pi * (pi * s).sin();
            (u, w * j)
        })
        .collect();
    let mut acc = 0.0;
    for &(ui, wi) in &nodes {
        for &(uj, wj) in &nodes {
            let lc = model.log_density(&[ui, uj])?;
            acc += wi * wj * lc * lc.exp();
        }
    }
    Ok((acc * h * h / 9.0).max(0.0))
}

// ---- fitting ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub phi: f64,
    pub log_lik: f64,
    /// Set when the estimate lands on a search-domain boundary.
    pub degenerate: bool,
}

const PHI_EPS: f64 = 1e-4;
const PHI_MAX: f64 = 50.0;
const R_MAX: f64 = 0.999;
const FIT_TOL: f64 = 1e-6;

/// Maximizes sum_n log c(u_n | phi) over the family's parameter domain.
pub fn fit_copula_parameter(family: CopulaFamily, u: &[Vec<f64>]) -> Result<FitResult> {
    let (n, d) = check_pseudo_obs(u)?;
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "fitting needs at least 10 rows, got {n}"
        )));
    }
    match family {
        CopulaFamily::Independence => Ok(FitResult {
            phi: 0.0,
            log_lik: 0.0,
            degenerate: false,
        }),
        CopulaFamily::Clayton => {
            let (phi, ll) = maximize_log_grid(PHI_EPS, PHI_MAX, 60, |p| {
                log_lik(CopulaFamily::Clayton, p, d, u)
            });
            Ok(FitResult {
                phi,
                log_lik: ll,
                degenerate: near(phi, PHI_EPS) || near(phi, PHI_MAX),
            })
        }
        CopulaFamily::Gumbel => {
            let (phi, ll) = maximize_log_grid(1.0, PHI_MAX, 60, |p| {
                log_lik(CopulaFamily::Gumbel, p, d, u)
            });
            Ok(FitResult {
                phi,
                log_lik: ll,
                degenerate: near(phi, PHI_MAX),
            })
        }
        CopulaFamily::Frank => {
            let (pos, ll_pos) = maximize_log_grid(PHI_EPS, PHI_MAX, 60, |p| {
                log_lik(CopulaFamily::Frank, p, d, u)
            });
            let (phi, ll) = if d == 2 {
                let (neg, ll_neg) = maximize_log_grid(PHI_EPS, PHI_MAX, 60, |p| {
                    log_lik(CopulaFamily::Frank, -p, d, u)
                });
                if ll_neg > ll_pos {
                    (-neg, ll_neg)
                } else {
                    (pos, ll_pos)
                }
            } else {
                (pos, ll_pos)
            };
            Ok(FitResult {
                phi,
                log_lik: ll,
                degenerate: near(phi.abs(), PHI_EPS) || near(phi.abs(), PHI_MAX),
            })
        }
        CopulaFamily::Gaussian => {
            let r_lo = (-1.0 / (d as f64 - 1.0) + 1e-3).max(-R_MAX);
            let r0 = normal_scores_correlation(u).clamp(r_lo, R_MAX);
            let ll = |r: f64| log_lik(CopulaFamily::Gaussian, r, d, u);
            let (a, b) = ((r0 - 0.3).max(r_lo), (r0 + 0.3).min(R_MAX));
            let (mut r_hat, mut best) = numeric::golden_section_max(ll, a, b, FIT_TOL);
            // guard against a poor moment start with a coarse global scan
            for i in 0..=16 {
                let r = r_lo + (R_MAX - r_lo) * i as f64 / 16.0;
                if ll(r) > best {
                    let lo = (r - 0.1).max(r_lo);
                    let hi = (r + 0.1).min(R_MAX);
                    let (rr, vv) = numeric::golden_section_max(ll, lo, hi, FIT_TOL);
                    if vv > best {
                        r_hat = rr;
                        best = vv;
                    }
                }
            }
            Ok(FitResult {
                phi: r_hat,
                log_lik: best,
                degenerate: near(r_hat.abs(), R_MAX) || near(r_hat, r_lo),
            })
        }
    }
}

fn check_pseudo_obs(u: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = u.len();
    let d = u.first().map_or(0, |row| row.len());
    if d < 2 {
        return Err(Error::Dimension(format!(
            "pseudo-observations need d >= 2 columns, got {d}"
        )));
    }
    if u.iter().any(|row| row.len() != d) {
        return Err(Error::Dimension("ragged pseudo-observation matrix".into()));
    }
    Ok((n, d))
}

fn log_lik(family: CopulaFamily, phi: f64, d: usize, u: &[Vec<f64>]) -> f64 {
    match CopulaModel::new(family, phi, d) {
        Ok(model) => u
            .iter()
            .map(|row| model.log_density(row).unwrap_or(LOG_DENSITY_FLOOR))
            .sum(),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn near(x: f64, bound: f64) -> bool {
    (x - bound).abs() <= 1e-3 * bound.abs().max(1.0)
}

/// Coarse scan on a log-spaced grid over [lo, hi], then golden-section
/// refinement of the best bracket.
fn maximize_log_grid<F: Fn(f64) -> f64>(lo: f64, hi: f64, n: usize, f: F) -> (f64, f64) {
    let (la, lb) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect();
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &p) in grid.iter().enumerate() {
        let v = f(p);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let a = grid[best_i.saturating_sub(1)];
    let b = grid[(best_i + 1).min(n - 1)];
    numeric::golden_section_max(f, a, b, FIT_TOL)
}

/// Mean pairwise Pearson correlation of the normal-scores transform; the
/// moment-style starting point for the Gaussian fit.
fn normal_scores_correlation(u: &[Vec<f64>]) -> f64 {
    let d = u[0].len();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| u.iter().map(|row| numeric::norm_quantile(row[j])).collect())
        .collect();
    let mut acc = 0.0;
    let mut count = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            if let Some(r) = numeric::pearson(&cols[i], &cols[j]) {
                acc += r;
                count += 1.0;
            }
        }
    }
    if count > 0.0 {
        acc / count
    } else {
        0.0
    }
}

// ---- AIC selection ----

/// Penalty convention for family selection. `ParamCount` scores -LL + q with
/// q the parameter count; `Conventional` scores -2 LL + 2q. Both orderings
/// pick the same family; `ParamCount` is the crate default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AicPenalty {
    #[default]
    ParamCount,
    Conventional,
}

#[derive(Debug, Clone)]
pub struct AicEntry {
    pub family: CopulaFamily,
    pub fit: Option<FitResult>,
    pub aic: Option<f64>,
    /// Present when the family was excluded from the comparison.
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AicSelection {
    pub model: CopulaModel,
    pub log_lik: f64,
    pub table: Vec<AicEntry>,
}

pub fn select_copula_aic(library: &[CopulaFamily], u: &[Vec<f64>]) -> Result<AicSelection> {
    select_copula_aic_with(library, u, AicPenalty::default())
}

pub fn select_copula_aic_with(
    library: &[CopulaFamily],
    u: &[Vec<f64>],
    penalty: AicPenalty,
) -> Result<AicSelection> {
    if library.is_empty() {
        return Err(Error::InvalidArgument("empty copula library".into()));
    }
    let (_, d) = check_pseudo_obs(u)?;
    let mut table = Vec::with_capacity(library.len());
    let mut best: Option<(f64, CopulaModel, f64)> = None;
    for &family in library {
        match fit_copula_parameter(family, u) {
            Ok(fit) => {
                let q = family.parameter_count() as f64;
                let aic = match penalty {
                    AicPenalty::ParamCount => -fit.log_lik + q,
                    AicPenalty::Conventional => -2.0 * fit.log_lik + 2.0 * q,
                };
                // strict comparison keeps the earliest family on ties
                if best.as_ref().is_none_or(|(b, _, _)| aic < *b) {
                    let model = match family {
                        CopulaFamily::Independence => CopulaModel::independence(d)?,
                        _ => CopulaModel::new(family, fit.phi, d)?,
                    };
                    best = Some((aic, model, fit.log_lik));
                }
                table.push(AicEntry {
                    family,
                    fit: Some(fit),
                    aic: Some(aic),
                    note: None,
                });
            }
            Err(e) => table.push(AicEntry {
                family,
                fit: None,
                aic: None,
                note: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some((_, model, log_lik)) => Ok(AicSelection {
            model,
            log_lik,
            table,
        }),
        None => Err(Error::Estimation(
            "every copula family failed to fit".into(),
        )),
    }
}

// ---- shared helpers ----

fn log_sum_exp<I: Iterator<Item = f64>>(xs: I) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// ln(1 - e^{-t}) for t > 0. Branching keeps full precision on both sides:
/// expm1 when e^{-t} is near 1, ln_1p once e^{-t} is small enough that
/// 1 - e^{-t} would round to 1.
fn log1mexp(t: f64) -> f64 {
    if t <= std::f64::consts::LN_2 {
        (-(-t).exp_m1()).max(1e-300).ln()
    } else {
        (-(-t).exp()).ln_1p()
    }
}

/// |s(n, k)|-signed Stirling numbers of the first kind, n, k <= MAX_DIM.
fn stirling_first() -> &'static Vec<Vec<f64>> {
    static CELL: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    CELL.get_or_init(|| {
        let n = MAX_DIM + 1;
        let mut s = vec![vec![0.0; n]; n];
        s[0][0] = 1.0;
        for i in 1..n {
            for k in 1..=i {
                s[i][k] = s[i - 1][k - 1] - (i as f64 - 1.0) * s[i - 1][k];
            }
        }
        s
    })
}

/// Stirling numbers of the second kind.
fn stirling_second() -> &'static Vec<Vec<f64>> {
    static CELL: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    CELL.get_or_init(|| {
        let n = MAX_DIM + 1;
        let mut s = vec![vec![0.0; n]; n];
        s[0][0] = 1.0;
        for i in 1..n {
            for k in 1..=i {
                s[i][k] = k as f64 * s[i - 1][k] + s[i - 1][k - 1];
            }
        }
        s
    })
}

/// Eulerian numbers <n, 0> .. <n, n-1>.
fn eulerian_row(n: usize) -> &'static [f64] {
    static CELL: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    let rows = CELL.get_or_init(|| {
        let mut rows: Vec<Vec<f64>> = vec![vec![1.0]];
        for ni in 2..=MAX_DIM {
            let prev = &rows[ni - 2];
            let mut row = vec![0.0; ni];
            for k in 0..ni {
                let a = if k < prev.len() { prev[k] } else { 0.0 };
                let b = if k >= 1 { prev[k - 1] } else { 0.0 };
                row[k] = (k as f64 + 1.0) * a + (ni as f64 - k as f64) * b;
            }
            row.truncate(ni - 1 + 1);
            rows.push(row);
        }
        rows
    });
    &rows[n - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn model(f: CopulaFamily, phi: f64, d: usize) -> CopulaModel {
        CopulaModel::new(f, phi, d).unwrap()
    }

    #[test]
    fn independence_cdf_is_product() {
        let m = CopulaModel::independence(2).unwrap();
        assert!((m.cdf(&[0.3, 0.5]).unwrap() - 0.15).abs() < 1e-15);
        assert!((m.log_density(&[0.42, 0.9]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn clayton_cdf_closed_form() {
        let m = model(CopulaFamily::Clayton, 2.0, 2);
        let want = 1.0 / 7.0f64.sqrt();
        assert!((m.cdf(&[0.5, 0.5]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn upper_corner_limits() {
        let u = vec![1.0 - 1e-6; 3];
        for m in [
            model(CopulaFamily::Clayton, 3.0, 3),
            model(CopulaFamily::Gumbel, 2.5, 3),
            model(CopulaFamily::Frank, 4.0, 3),
            model(CopulaFamily::Gaussian, 0.5, 3),
        ] {
            assert!((m.cdf(&u).unwrap() - 1.0).abs() < 1e-4, "{:?}", m.family());
        }
    }

    #[test]
    fn uniform_margins_property() {
        let eps = 1e-6;
        for m in [
            model(CopulaFamily::Clayton, 5.0, 2),
            model(CopulaFamily::Gumbel, 3.0, 2),
            model(CopulaFamily::Frank, -4.0, 2),
            model(CopulaFamily::Frank, 6.0, 2),
            model(CopulaFamily::Gaussian, -0.6, 2),
        ] {
            for u in [0.2, 0.5, 0.85] {
                let c = m.cdf(&[u, 1.0 - eps]).unwrap();
                assert!((c - u).abs() < 1e-4, "{:?} u={u} c={c}", m.family());
            }
        }
    }

    #[test]
    fn clayton_small_phi_is_independence() {
        let m = model(CopulaFamily::Clayton, 1e-4, 2);
        assert!((m.density(&[0.3, 0.7]).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn gumbel_phi_one_is_independence() {
        let m = model(CopulaFamily::Gumbel, 1.0, 3);
        for u in [[0.1, 0.5, 0.9], [0.33, 0.33, 0.33]] {
            assert!(m.log_density(&u).unwrap().abs() < 1e-10);
            let prod: f64 = u.iter().product();
            assert!((m.cdf(&u).unwrap() - prod).abs() < 1e-12);
        }
    }

    #[test]
    fn densities_match_cdf_mixed_partial() {
        let h = 1e-4;
        for m in [
            model(CopulaFamily::Clayton, 2.0, 2),
            model(CopulaFamily::Gumbel, 2.0, 2),
            model(CopulaFamily::Frank, 5.0, 2),
            model(CopulaFamily::Frank, -3.0, 2),
            model(CopulaFamily::Gaussian, 0.6, 2),
            model(CopulaFamily::Gaussian, -0.4, 2),
        ] {
            for pt in [[0.5, 0.5], [0.3, 0.7], [0.8, 0.25]] {
                let [u, v] = pt;
                let fd = (m.cdf(&[u + h, v + h]).unwrap() - m.cdf(&[u + h, v - h]).unwrap()
                    - m.cdf(&[u - h, v + h]).unwrap()
                    + m.cdf(&[u - h, v - h]).unwrap())
                    / (4.0 * h * h);
                let c = m.density(&pt).unwrap();
                assert!(
                    (fd - c).abs() < 1e-3 * c.max(1.0),
                    "{:?} at {pt:?}: fd={fd} c={c}",
                    m.family()
                );
            }
        }
    }

    #[test]
    fn frank_bivariate_and_multivariate_forms_agree() {
        // evaluate the d=3 polylog form against the d=2 closed form by
        // integrating the d=3 density over the third coordinate
        let m2 = model(CopulaFamily::Frank, 4.0, 2);
        let m3 = model(CopulaFamily::Frank, 4.0, 3);
        let (u, v) = (0.4, 0.7);
        let marginal: f64 = numeric::gl64()
            .iter()
            .map(|&(w3, wt)| wt * m3.density(&[u, v, w3.clamp(1e-9, 1.0 - 1e-9)]).unwrap())
            .sum();
        let direct = m2.density(&[u, v]).unwrap();
        assert!(
            (marginal - direct).abs() < 1e-6 * direct,
            "marginal={marginal} direct={direct}"
        );
    }

    #[test]
    fn frank_log_density_survives_large_phi() {
        // strong-dependence regression: 1 - e^{-phi u} rounds to 1 here, so a
        // naive ln(1 - x_t) collapses to ln(0) and the clamp turns it into a
        // huge spurious bonus; reference values from 60-digit polylog math
        let m5 = model(CopulaFamily::Frank, 48.0, 5);
        let cases = [
            (vec![0.5, 0.5, 0.5, 0.5, 0.5], 10.615668),
            (vec![0.9, 0.9, 0.9, 0.9, 0.9], 10.648696),
            (vec![0.95, 0.96, 0.97, 0.98, 0.986], 10.457442),
            (vec![0.1, 0.9, 0.5, 0.3, 0.7], -77.349860),
        ];
        for (u, want) in &cases {
            let got = m5.log_density(u).unwrap();
            assert!((got - want).abs() < 1e-5, "u={u:?} got={got} want={want}");
        }
        let m3 = model(CopulaFamily::Frank, 48.0, 3);
        assert!((m3.log_density(&[0.9, 0.9, 0.9]).unwrap() - 5.156217).abs() < 1e-5);
        // the corner limit stays modest instead of exploding to the clamp
        let corner = m5.log_density(&[1.0 - 1e-12; 5]).unwrap();
        assert!((corner - 18.662858).abs() < 1e-5, "corner = {corner}");
    }

    #[test]
    fn epit_examples() {
        let data: Vec<Vec<f64>> = vec![vec![3.0], vec![1.0], vec![2.0]];
        let u = epit_transform(&data).unwrap();
        assert_eq!(u, vec![vec![0.75], vec![0.25], vec![0.50]]);

        let inc: Vec<Vec<f64>> = (1..=4).map(|i| vec![i as f64]).collect();
        let u = epit_transform(&inc).unwrap();
        for (row, want) in u.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert!((row[0] - want).abs() < 1e-15);
        }

        let tie: Vec<Vec<f64>> = vec![vec![5.0], vec![5.0]];
        let u = epit_transform(&tie).unwrap();
        assert_eq!(u, vec![vec![0.5], vec![0.5]]);
    }

    #[test]
    fn epit_is_rank_invariant() {
        let data: Vec<Vec<f64>> = vec![vec![0.3, 2.0], vec![-1.0, 0.5], vec![4.0, 1.1]];
        let mapped: Vec<Vec<f64>> = data
            .iter()
            .map(|r| vec![r[0].exp(), r[1].powi(3)])
            .collect();
        assert_eq!(epit_transform(&data).unwrap(), epit_transform(&mapped).unwrap());
    }

    #[test]
    fn comonotone_clayton_fit_hits_upper_bound() {
        let u: Vec<Vec<f64>> = (1..=30).map(|i| vec![i as f64 / 31.0; 2]).collect();
        let fit = fit_copula_parameter(CopulaFamily::Clayton, &u).unwrap();
        assert!(fit.degenerate);
        assert!(fit.phi > 49.0, "phi = {}", fit.phi);
    }

    #[test]
    fn independent_data_fits_tiny_clayton() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let m = CopulaModel::independence(2).unwrap();
        let raw = m.sample(2000, &mut rng).unwrap();
        let u = epit_transform(&raw).unwrap();
        let fit = fit_copula_parameter(CopulaFamily::Clayton, &u).unwrap();
        assert!(fit.phi < 0.2, "phi = {}", fit.phi);
        assert!(fit.log_lik.abs() < 20.0, "ll = {}", fit.log_lik);
    }

    #[test]
    fn clayton_refit_recovers_parameter() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let m = model(CopulaFamily::Clayton, 5.0, 3);
        let raw = m.sample(2000, &mut rng).unwrap();
        let u = epit_transform(&raw).unwrap();
        let fit = fit_copula_parameter(CopulaFamily::Clayton, &u).unwrap();
        assert!((4.5..=5.5).contains(&fit.phi), "phi = {}", fit.phi);
        assert!(!fit.degenerate);
    }

    #[test]
    fn aic_singleton_library() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let m = CopulaModel::independence(2).unwrap();
        let u = epit_transform(&m.sample(100, &mut rng).unwrap()).unwrap();
        let sel = select_copula_aic(&[CopulaFamily::Clayton], &u).unwrap();
        assert_eq!(sel.model.family(), CopulaFamily::Clayton);
    }

    #[test]
    fn aic_prefers_independence_on_independent_data() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let m = CopulaModel::independence(2).unwrap();
        let u = epit_transform(&m.sample(2000, &mut rng).unwrap()).unwrap();
        let sel = select_copula_aic(&default_library(), &u).unwrap();
        assert_eq!(sel.model.family(), CopulaFamily::Independence);
        // penalty conventions agree on the winner
        let sel2 = select_copula_aic_with(&default_library(), &u, AicPenalty::Conventional)
            .unwrap();
        assert_eq!(sel2.model.family(), CopulaFamily::Independence);
    }

    #[test]
    fn sample_rows_inside_unit_cube() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for m in [
            CopulaModel::independence(2).unwrap(),
            model(CopulaFamily::Clayton, 2.0, 4),
            model(CopulaFamily::Gumbel, 3.0, 3),
            model(CopulaFamily::Frank, 5.0, 3),
            model(CopulaFamily::Frank, -5.0, 2),
            model(CopulaFamily::Gaussian, -0.3, 3),
        ] {
            let rows = m.sample(1, &mut rng).unwrap();
            assert_eq!(rows.len(), 1);
            assert!(rows[0].iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn parameter_domains_enforced() {
        assert!(CopulaModel::new(CopulaFamily::Clayton, 0.0, 2).is_err());
        assert!(CopulaModel::new(CopulaFamily::Gumbel, 0.8, 2).is_err());
        assert!(CopulaModel::new(CopulaFamily::Frank, 0.0, 2).is_err());
        assert!(CopulaModel::new(CopulaFamily::Frank, -2.0, 3).is_err());
        assert!(CopulaModel::new(CopulaFamily::Gaussian, -0.6, 3).is_err());
        assert!(CopulaModel::new(CopulaFamily::Gaussian, 1.0, 2).is_err());
        assert!(CopulaModel::new(CopulaFamily::Clayton, 2.0, 1).is_err());
        assert!(CopulaModel::new(CopulaFamily::Gaussian, -0.4, 3).is_ok());
    }

    #[test]
    fn invalid_points_rejected() {
        let m = model(CopulaFamily::Clayton, 2.0, 2);
        assert!(matches!(m.cdf(&[0.0, 0.5]), Err(Error::InvalidPoint)));
        assert!(matches!(m.density(&[0.5, 1.0]), Err(Error::InvalidPoint)));
        assert!(m.cdf(&[0.5]).is_err());
    }

    #[test]
    fn gaussian_negative_r_cdf_unsupported_above_two() {
        let m = model(CopulaFamily::Gaussian, -0.2, 4);
        assert!(matches!(
            m.cdf(&[0.5, 0.5, 0.5, 0.5]),
            Err(Error::Unsupported(_))
        ));
        assert!(m.log_density(&[0.5, 0.5, 0.5, 0.5]).is_ok());
    }

    #[test]
    fn pair_mi_independence_is_zero() {
        assert_eq!(
            pair_mutual_information(CopulaFamily::Independence, 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn pair_mi_quadrature_matches_gaussian_closed_form() {
        for r in [0.3f64, 0.6, 0.85] {
            let exact = -0.5 * (1.0 - r * r).ln();
            let quad = pair_mi_quadrature(&model(CopulaFamily::Gaussian, r, 2)).unwrap();
            assert!(
                (quad - exact).abs() < 2e-3,
                "r {r}: quadrature {quad} vs closed form {exact}"
            );
        }
    }

    #[test]
    fn pair_mi_grows_with_dependence() {
        let mi = |phi| pair_mutual_information(CopulaFamily::Clayton, phi).unwrap();
        let (weak, mid, strong) = (mi(1.0), mi(3.0), mi(8.0));
        assert!(weak > 0.0);
        assert!(weak < mid && mid < strong, "{weak} {mid} {strong}");
        let frank = pair_mutual_information(CopulaFamily::Frank, -4.0).unwrap();
        assert!(frank > 0.0);
    }
}
