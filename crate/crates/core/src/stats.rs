//! Small numeric helpers shared by the analyses and generators.

use libm::erfc;

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// AUC of an equal-variance Gaussian shift: `Φ(shift / (σ√2))`.
pub fn gaussian_shift_auc(shift: f64, sigma: f64) -> f64 {
    normal_cdf(shift / (sigma * std::f64::consts::SQRT_2))
}

/// Smallest δ for which a mechanism whose privacy-loss test is
/// `N(0,1)` vs `N(mu,1)` is (ε, δ)-DP:
/// `δ(ε) = Φ(-ε/μ + μ/2) - e^ε Φ(-ε/μ - μ/2)`.
pub fn gaussian_mechanism_delta(mu: f64, epsilon: f64) -> f64 {
    if mu <= 0.0 {
        return 0.0;
    }
    let a = normal_cdf(-epsilon / mu + mu / 2.0);
    let b = normal_cdf(-epsilon / mu - mu / 2.0);
    let second = if b > 0.0 { (epsilon + b.ln()).exp() } else { 0.0 };
    (a - second).max(0.0)
}

/// Inverts [`gaussian_mechanism_delta`]: the smallest ε ≥ 0 with δ(ε) ≤ `delta`.
pub fn gaussian_mechanism_epsilon(mu: f64, delta: f64) -> f64 {
    if mu <= 0.0 || gaussian_mechanism_delta(mu, 0.0) <= delta {
        return 0.0;
    }
    if delta <= 0.0 {
        return f64::INFINITY;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while gaussian_mechanism_delta(mu, hi) > delta {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_mechanism_delta(mu, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    hi
}
