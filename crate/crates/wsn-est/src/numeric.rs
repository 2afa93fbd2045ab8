//! Small numerical utilities shared across the crate: standard-normal
//! functions, rank transforms, Gauss-Legendre rules, and 1-D maximization.

use std::sync::OnceLock;

use statrs::function::erf;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Log density of N(mean, sd^2) at `x`.
pub fn norm_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the mean of ranks i+1..=j+1
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` if either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let da = a - mx;
        let db = b - my;
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [0, 1].
pub fn gauss_legendre_01(n: usize) -> Vec<(f64, f64)> {
    gauss_legendre(n)
        .into_iter()
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect()
}

/// Nodes and weights on [-1, 1], by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 2);
    let mut out = Vec::with_capacity(n);
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based starting guess for the i-th root
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((-x, w));
        if !(n % 2 == 1 && i == m - 1) {
            out.push((x, w));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cached 64-point rule on [0, 1] for copula quadrature.
pub fn gl64() -> &'static [(f64, f64)] {
    static CELL: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    CELL.get_or_init(|| gauss_legendre_01(64))
}

/// Bivariate standard normal CDF with correlation `r`, by quadrature of
/// `phi(t) * Phi((y - r t)/sqrt(1-r^2))` over `t <= x`.
pub fn bivariate_norm_cdf(x: f64, y: f64, r: f64) -> f64 {
    assert!(r.abs() < 1.0);
    let x = x.clamp(-8.5, 8.5);
    let y = y.clamp(-8.5, 8.5);
    let lo = -8.5;
    if x <= lo {
        return 0.0;
    }
    let s = (1.0 - r * r).sqrt();
    let mut acc = 0.0;
    for &(t01, w) in gl128() {
        let t = lo + (x - lo) * t01;
        let phi = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        acc += w * phi * norm_cdf((y - r * t) / s);
    }
    acc * (x - lo)
}

fn gl128() -> &'static [(f64, f64)] {
    static CELL: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    CELL.get_or_init(|| gauss_legendre_01(128))
}

/// Golden-section maximization of a unimodal `f` on `[a, b]` to width `tol`.
/// Returns `(argmax, max)`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx >= fc && fx >= fd {
        (x, fx)
    } else if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Coarse grid scan followed by golden-section refinement around the best
/// grid point. Guards the local search when `f` may be multimodal.
pub fn grid_then_golden_max<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    grid_points: usize,
    tol: f64,
) -> (f64, f64) {
    assert!(grid_points >= 3);
    let step = (b - a) / (grid_points - 1) as f64;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..grid_points {
        let v = f(a + step * i as f64);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let lo = a + step * best_i.saturating_sub(1) as f64;
    let hi = (a + step * (best_i + 1) as f64).min(b);
    golden_section_max(f, lo, hi, tol)
}
