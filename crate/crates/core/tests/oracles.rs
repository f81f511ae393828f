//! Independent reference computations: exact rational binomial tails and
//! numerical quadrature of the Gaussian privacy-loss distribution.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};
use proptest::prelude::*;

use privaudit::guess::{binomial_tail, epsilon_lower_bound, GuessAuditConfig, EPSILON_TOLERANCE};
use privaudit::observation::GuessStrategy;
use privaudit::stats::{gaussian_mechanism_delta, gaussian_mechanism_epsilon};
use privaudit::GuessSummary;

fn exact_tail(n: u64, p: &BigRational, c: u64) -> BigRational {
    let q = BigRational::one() - p;
    let mut total = BigRational::zero();
    let mut binom = BigInt::one();
    for k in 0..=n {
        if k >= c {
            total += BigRational::from_integer(binom.clone()) * num::pow(p.clone(), k as usize) * num::pow(q.clone(), (n - k) as usize);
        }
        binom = binom * BigInt::from(n - k) / BigInt::from(k + 1);
    }
    total
}

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) }
}

#[test]
fn tail_reference_value() {
    let p = BigRational::new(7.into(), 10.into());
    let exact = exact_tail(20, &p, 15).to_f64().unwrap();
    assert!((exact - 0.416_370_829_447_481_4).abs() < 1e-15, "{exact}");
    let got = binomial_tail(20, 0.7, 15);
    assert!(rel_err(got, exact) <= 1e-10, "{got} vs {exact}");
}

#[test]
fn tail_deep_in_both_tails() {
    for &(n, p, c) in &[(400u64, 0.5, 380u64), (400, 0.5, 20), (1000, 0.9, 999), (250, 0.01, 40), (60, 0.73, 1)] {
        let exact = exact_tail(n, &rational(p), c).to_f64().unwrap();
        let got = binomial_tail(n, p, c);
        assert!(rel_err(got, exact) <= 1e-10, "n={n} p={p} c={c}: {got} vs {exact}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tail_matches_rational_sum(n in 1u64..150, p in 0.001f64..0.999, frac in 0.0f64..=1.0) {
        let c = (n as f64 * frac).round() as u64;
        let exact = exact_tail(n, &rational(p), c).to_f64().unwrap();
        let got = binomial_tail(n, p, c);
        prop_assert!(rel_err(got, exact) <= 1e-10 || (got - exact).abs() <= 1e-300, "n={} p={} c={}: {} vs {}", n, p, c, got, exact);
    }

    /// The reported epsilon is rejected by the exact test and a slightly
    /// larger one is not.
    #[test]
    fn epsilon_bound_brackets_exact_test(c_hat in 5usize..80, frac in 0.5f64..=1.0, sig in 0.01f64..0.2) {
        let c = ((c_hat as f64) * frac).ceil() as usize;
        let summary = GuessSummary::new(1000, c_hat, c, GuessStrategy::OneSided).unwrap();
        let cfg = GuessAuditConfig { significance: sig, ..Default::default() };
        let eps = epsilon_lower_bound(&summary, &cfg);
        let p_value = |e: f64| {
            let p = e.exp() / (e.exp() + 1.0);
            exact_tail(c_hat as u64, &rational(p), c as u64).to_f64().unwrap()
        };
        if eps > 0.0 {
            prop_assert!(p_value(eps) < sig);
        } else {
            prop_assert!(p_value(0.0) >= sig * (1.0 - 1e-9));
        }
        prop_assert!(p_value(eps + EPSILON_TOLERANCE) >= sig * (1.0 - 1e-9));
    }
}

/// `δ(ε) = E[(1 - e^{ε-L})+]` with privacy loss `L ~ N(μ²/2, μ²)`,
/// integrated by composite Simpson over `[ε, μ²/2 + 40μ]`.
fn quadrature_delta(mu: f64, eps: f64) -> f64 {
    let mean = mu * mu / 2.0;
    let hi = mean + 40.0 * mu;
    if eps >= hi {
        return 0.0;
    }
    let f = |l: f64| {
        let z = (l - mean) / mu;
        (-0.5 * z * z).exp() / (mu * (2.0 * std::f64::consts::PI).sqrt()) * (1.0 - (eps - l).exp())
    };
    let n = 200_000;
    let h = (hi - eps) / n as f64;
    let mut s = f(eps) + f(hi);
    for i in 1..n {
        s += f(eps + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn gaussian_delta_matches_quadrature() {
    for &mu in &[0.25, 0.5, 1.0, 2.0, 4.0] {
        for &eps in &[0.0, 0.1, 0.5, 1.0, 2.0, 4.0] {
            let q = quadrature_delta(mu, eps);
            let d = gaussian_mechanism_delta(mu, eps);
            assert!(rel_err(d, q) <= 1e-8 || (d - q).abs() <= 1e-15, "mu={mu} eps={eps}: {d} vs {q}");
        }
    }
}

#[test]
fn gaussian_epsilon_inverts_quadrature() {
    for &mu in &[0.5, 1.0, 2.0] {
        for &delta in &[1e-2, 1e-5, 1e-8] {
            let eps = gaussian_mechanism_epsilon(mu, delta);
            let q = quadrature_delta(mu, eps);
            assert!(rel_err(q, delta) <= 1e-6, "mu={mu} delta={delta}: eps={eps} gives {q}");
        }
    }
    // sigma = 1, delta = 1e-5 lands near 4.377.
    let e = gaussian_mechanism_epsilon(1.0, 1e-5);
    assert!((e - 4.377).abs() < 1e-3, "{e}");
}
