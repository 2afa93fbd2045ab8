//! Independent reference computations for validating the main estimation crate.
//!
//! Everything here is deliberately brute force: closed-form algebra or dense
//! quadrature with finite differences, sharing no numerical code with the
//! implementations under test. Test-tree use only.

/// Posterior mode of the conjugate Gaussian location model.
///
/// Observations `obs[l]` come from sensor `l` with noise variance `sigma2[l]`,
/// all sensors measuring the same location parameter under a
/// `N(theta_p, sigma_p2)` prior. Returns
/// `(sum_l sum_i z / sigma2_l + theta_p / sigma_p2) / (sum_l n_l / sigma2_l + 1 / sigma_p2)`.
pub fn conjugate_gaussian_map(
    obs: &[Vec<f64>],
    sigma2: &[f64],
    theta_p: f64,
    sigma_p2: f64,
) -> f64 {
    assert_eq!(obs.len(), sigma2.len(), "one noise variance per sensor");
    let mut num = theta_p / sigma_p2;
    let mut den = 1.0 / sigma_p2;
    for (col, &s2) in obs.iter().zip(sigma2) {
        assert!(s2 > 0.0, "noise variances must be positive");
        for &z in col {
            num += z / s2;
        }
        den += col.len() as f64 / s2;
    }
    num / den
}

/// Kendall's tau of a bivariate copula given only its CDF.
///
/// Evaluates `4 * int C(u,v) dC(u,v) - 1` by tensor quadrature, recovering the
/// copula density from a central mixed finite difference of the supplied CDF.
/// Accuracy is a few 1e-4 for smooth copulas, well inside the +-0.01 the
/// consuming tests assert.
pub fn tau_from_cdf<F: Fn(f64, f64) -> f64>(cdf: F) -> f64 {
    // sin^2 substitution clusters Simpson nodes at the boundary, where
    // Archimedean densities concentrate.
    let n = 512usize; // intervals per axis, even
    let mut acc = 0.0;
    for it in 0..=n {
        let (t, wt) = simpson_node(it, n);
        let (u, du) = sin2_map(t);
        if du == 0.0 {
            continue;
        }
        for jt in 0..=n {
            let (s, ws) = simpson_node(jt, n);
            let (v, dv) = sin2_map(s);
            if dv == 0.0 {
                continue;
            }
            let c = mixed_partial(&cdf, u, v);
            acc += wt * ws * cdf(u, v) * c * du * dv;
        }
    }
    4.0 * acc - 1.0
}

fn simpson_node(i: usize, n: usize) -> (f64, f64) {
    let h = 1.0 / n as f64;
    let w = if i == 0 || i == n {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    };
    (i as f64 * h, w * h / 3.0)
}

fn sin2_map(t: f64) -> (f64, f64) {
    let half = 0.5 * std::f64::consts::PI * t;
    let u = half.sin().powi(2);
    let du = 0.5 * std::f64::consts::PI * (std::f64::consts::PI * t).sin();
    (u.clamp(1e-12, 1.0 - 1e-12), du)
}

fn mixed_partial<F: Fn(f64, f64) -> f64>(cdf: &F, u: f64, v: f64) -> f64 {
    let h = 1e-4_f64.min(0.5 * u).min(0.5 * v).min(0.5 * (1.0 - u)).min(0.5 * (1.0 - v));
    if h <= 0.0 {
        return 0.0;
    }
    (cdf(u + h, v + h) - cdf(u + h, v - h) - cdf(u - h, v + h) + cdf(u - h, v - h))
        / (4.0 * h * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_map_single_obs() {
        // one sensor, one obs z=2, sigma2=1, prior N(0,1) -> (2 + 0) / (1 + 1) = 1
        let got = conjugate_gaussian_map(&[vec![2.0]], &[1.0], 0.0, 1.0);
        assert!((got - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conjugate_map_no_observations() {
        let got = conjugate_gaussian_map(&[vec![], vec![]], &[1.0, 2.0], 1.5, 0.7);
        assert!((got - 1.5).abs() < 1e-12);
    }

    #[test]
    fn conjugate_map_flat_prior_limit() {
        let obs = vec![vec![1.0, 3.0], vec![2.0]];
        let sigma2 = [1.0, 4.0];
        let got = conjugate_gaussian_map(&obs, &sigma2, 100.0, 1e12);
        let weighted = (1.0 + 3.0 + 2.0 / 4.0) / (2.0 + 1.0 / 4.0);
        assert!((got - weighted).abs() < 1e-6);
    }

    #[test]
    fn tau_independence_copula() {
        let tau = tau_from_cdf(|u, v| u * v);
        assert!(tau.abs() < 0.005, "tau = {tau}");
    }

    #[test]
    fn tau_clayton_phi2() {
        // Clayton CDF written out directly; phi/(phi+2) = 0.5 expected.
        let phi = 2.0;
        let tau = tau_from_cdf(|u, v| (u.powf(-phi) + v.powf(-phi) - 1.0).powf(-1.0 / phi));
        assert!((tau - 0.5).abs() < 0.01, "tau = {tau}");
    }

    #[test]
    fn tau_clayton_phi5() {
        let phi = 5.0;
        let tau = tau_from_cdf(|u, v| (u.powf(-phi) + v.powf(-phi) - 1.0).powf(-1.0 / phi));
        assert!((tau - 5.0 / 7.0).abs() < 0.01, "tau = {tau}");
    }

    #[test]
    fn tau_gaussian_r_zero() {
        // r = 0 Gaussian copula is the product copula.
        let tau = tau_from_cdf(|u, v| u * v);
        assert!(tau.abs() < 0.005);
    }
}
