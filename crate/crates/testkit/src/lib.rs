//! Independent numerical oracles for the gorthant test suites.
//!
//! Everything here is deliberately written without touching the gorthant
//! crate, so test expectations come from a second, unrelated computational
//! route: 1-D quadrature, closed-form identities, and exhaustive enumeration.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Standard normal density.
pub fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) subintervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    assert!(n >= 2 && n % 2 == 0, "n must be even and >= 2");
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `P(max_i X_i <= t)` for `q` exchangeable standard normals with common
/// correlation `rho in [0, 1)`, by integrating out the shared factor:
/// `int phi(z) * Phi((t - sqrt(rho) z) / sqrt(1-rho))^q dz`.
///
/// At `rho = 1/2`, `t = 0` this equals `1/(q+1)` exactly.
pub fn orthant_equicorrelated(q: usize, rho: f64, t: f64) -> f64 {
    assert!((0.0..1.0).contains(&rho));
    if rho == 0.0 {
        return phi(t).powi(q as i32);
    }
    let s = rho.sqrt();
    let r = (1.0 - rho).sqrt();
    simpson(
        |z| phi_pdf(z) * phi((t - s * z) / r).powi(q as i32),
        -10.0,
        10.0,
        4000,
    )
}

/// `P(max_i X_i <= t)` for `d` independent standard normals.
pub fn orthant_independent(d: usize, t: f64) -> f64 {
    phi(t).powi(d as i32)
}

/// The remainder `R_q = (p - p_q) / (1 - p_q)` implied by the decomposition
/// `p = p_q + (1 - p_q) R_q`, from the two orthant probabilities.
pub fn remainder_from_orthants(p_all_below: f64, p_active_below: f64) -> f64 {
    let p = 1.0 - p_all_below;
    let pq = 1.0 - p_active_below;
    (p - pq) / (1.0 - pq)
}

/// Upper critical value of the chi-squared distribution.
pub fn chi2_critical(dof: f64, upper_tail: f64) -> f64 {
    ChiSquared::new(dof).unwrap().inverse_cdf(1.0 - upper_tail)
}

/// Empirical mean and (population) variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v)
}

/// Unbiased sample variance.
pub fn sample_var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// Quantile by linear interpolation on the sorted sample (type-7).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}
