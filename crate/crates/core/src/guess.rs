//! One-run guess-count auditing.
//!
//! An adversary makes `ĉ` membership guesses among `m` canaries and gets `c`
//! right. Under ε-DP (δ = 0) the number of correct guesses is stochastically
//! dominated by `Binomial(ĉ, e^ε / (e^ε + 1))`, so any ε for which observing
//! `c` or more correct guesses is less likely than the significance level is
//! rejected. With δ > 0 the tail is inflated by the additive slack `m·δ`.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{AuditError, Result};
use crate::observation::{GuessStrategy, GuessSummary, ScoreRecordSet};
use crate::par;

/// Absolute tolerance of the epsilon bisection.
pub const EPSILON_TOLERANCE: f64 = 1e-4;

/// `Pr[X >= c]` for `X ~ Binomial(n, p)`.
pub fn binomial_tail(n: u64, p: f64, c: u64) -> f64 {
    if c == 0 {
        return 1.0;
    }
    if c > n || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    binomial_tail_ln_probs(n, p.ln(), (-p).ln_1p(), c)
}

fn log_sum_exp_terms(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Binomial pmf terms in log space, walking away from `start` in `dir`
/// until they stop mattering.
fn ln_tail_sum(n: u64, ln_p: f64, ln_q: f64, start: u64, upward: bool) -> f64 {
    let ln_pmf = |k: u64| ln_binomial(n, k) + k as f64 * ln_p + (n - k) as f64 * ln_q;
    let mut terms = Vec::new();
    let mut k = start;
    let mut peak = f64::NEG_INFINITY;
    loop {
        let t = ln_pmf(k);
        peak = peak.max(t);
        terms.push(t);
        // Past the mode the terms decay geometrically; 40 nats below the
        // running peak is far beneath double precision.
        if t < peak - 40.0 {
            break;
        }
        if upward {
            if k == n {
                break;
            }
            k += 1;
        } else {
            if k == 0 {
                break;
            }
            k -= 1;
        }
    }
    log_sum_exp_terms(terms.into_iter())
}

/// Tail probability from log success/failure probabilities. Sums whichever
/// side of the distribution is the small one, so the result keeps full
/// relative precision.
pub(crate) fn binomial_tail_ln_probs(n: u64, ln_p: f64, ln_q: f64, c: u64) -> f64 {
    if c == 0 {
        return 1.0;
    }
    if c > n {
        return 0.0;
    }
    let mean = n as f64 * ln_p.exp();
    if c as f64 >= mean {
        ln_tail_sum(n, ln_p, ln_q, c, true).exp()
    } else {
        let lower = ln_tail_sum(n, ln_p, ln_q, c - 1, false).exp();
        (1.0 - lower).max(0.0)
    }
}

/// `ln(e^ε/(e^ε+1))` and `ln(1/(e^ε+1))` without overflow.
fn ln_guess_probs(epsilon: f64) -> (f64, f64) {
    let ln_p = -(-epsilon).exp().ln_1p();
    let ln_q = -epsilon.exp().ln_1p();
    (ln_p, ln_q)
}

/// A rule turning a guess outcome into an epsilon lower bound.
pub trait GuessBound: Sync {
    fn name(&self) -> &str;
    fn epsilon_lower_bound(&self, summary: &GuessSummary, delta: f64, significance: f64) -> f64;
}

/// The binomial tail bound with additive `m·δ` slack (unit constant).
#[derive(Debug, Clone, Copy, Default)]
pub struct BinomialBound;

impl BinomialBound {
    fn p_value(summary: &GuessSummary, delta: f64, epsilon: f64) -> f64 {
        let (ln_p, ln_q) = ln_guess_probs(epsilon);
        binomial_tail_ln_probs(summary.c_hat as u64, ln_p, ln_q, summary.c as u64) + summary.m as f64 * delta
    }
}

impl GuessBound for BinomialBound {
    fn name(&self) -> &str {
        "binomial"
    }

    /// `sup { ε >= 0 : tail(ĉ, e^ε/(e^ε+1), c) + m·δ < significance }`, or 0.
    fn epsilon_lower_bound(&self, summary: &GuessSummary, delta: f64, significance: f64) -> f64 {
        let rejected = |eps: f64| Self::p_value(summary, delta, eps) < significance;
        if !rejected(0.0) {
            return 0.0;
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while rejected(hi) {
            lo = hi;
            hi *= 2.0;
            if hi > 1e4 {
                return lo;
            }
        }
        while hi - lo > EPSILON_TOLERANCE / 4.0 {
            let mid = 0.5 * (lo + hi);
            if rejected(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "name")]
pub enum BoundKind {
    Binomial,
    /// An externally supplied bound, e.g. an f-DP trade-off-curve audit.
    FdpPlugin(String),
}

/// How the sweep accounts for reporting the best of many tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    /// Each configuration is tested at `significance / (number of
    /// configurations evaluated)`, so the reported maximum keeps the
    /// nominal family-wise level.
    #[default]
    Bonferroni,
    /// Each configuration is tested at `significance`; the maximum over the
    /// sweep then exceeds the truth more often than `significance`.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessAuditConfig {
    pub delta: f64,
    /// One minus the confidence level.
    pub significance: f64,
    pub grid_min: usize,
    pub grid_points: usize,
    pub strategies: Vec<GuessStrategy>,
    pub bound: BoundKind,
    #[serde(default)]
    pub correction: Correction,
}

impl Default for GuessAuditConfig {
    fn default() -> Self {
        Self {
            delta: 0.0,
            significance: 0.05,
            grid_min: 10,
            grid_points: 25,
            strategies: vec![GuessStrategy::OneSided, GuessStrategy::TwoSided],
            bound: BoundKind::Binomial,
            correction: Correction::Bonferroni,
        }
    }
}

impl GuessAuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.significance > 0.0 && self.significance <= 0.5) {
            return Err(AuditError::config(format!("significance {} outside (0, 0.5]", self.significance)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(AuditError::config(format!("delta {} outside [0, 1)", self.delta)));
        }
        if self.grid_min < 1 {
            return Err(AuditError::config("grid_min must be at least 1"));
        }
        if self.strategies.is_empty() {
            return Err(AuditError::config("no guessing strategy selected"));
        }
        Ok(())
    }
}

/// Binomial-bound epsilon for a guess outcome.
pub fn epsilon_lower_bound(summary: &GuessSummary, cfg: &GuessAuditConfig) -> f64 {
    BinomialBound.epsilon_lower_bound(summary, cfg.delta, cfg.significance)
}

/// Canary indices ordered by ascending score, ties by ascending sample id.
fn guess_order(set: &ScoreRecordSet) -> Vec<usize> {
    let r = set.records();
    let mut idx: Vec<usize> = (0..r.len()).collect();
    idx.sort_by(|&a, &b| {
        r[a].score
            .total_cmp(&r[b].score)
            .then_with(|| r[a].sample_id.cmp(&r[b].sample_id))
    });
    idx
}

fn guesses_from_order(set: &ScoreRecordSet, order: &[usize], c_hat: usize, strategy: GuessStrategy) -> Result<GuessSummary> {
    let m = set.len();
    if c_hat == 0 {
        return Err(AuditError::config("c_hat must be at least 1"));
    }
    if c_hat > m {
        return Err(AuditError::config(format!("c_hat {c_hat} exceeds canary count {m}")));
    }
    let r = set.records();
    let (issued, correct) = match strategy {
        GuessStrategy::OneSided => {
            let correct = order[m - c_hat..].iter().filter(|&&i| r[i].membership).count();
            (c_hat, correct)
        }
        GuessStrategy::TwoSided => {
            let half = c_hat / 2;
            if half == 0 {
                return Err(AuditError::config("two-sided guessing needs c_hat >= 2"));
            }
            let top = order[m - half..].iter().filter(|&&i| r[i].membership).count();
            let bottom = order[..half].iter().filter(|&&i| !r[i].membership).count();
            (2 * half, top + bottom)
        }
    };
    GuessSummary::new(m, issued, correct, strategy)
}

/// Issues `c_hat` guesses under `strategy` and counts the correct ones.
/// Two-sided guessing rounds an odd `c_hat` down to the nearest even count.
pub fn make_guesses(set: &ScoreRecordSet, c_hat: usize, strategy: GuessStrategy) -> Result<GuessSummary> {
    guesses_from_order(set, &guess_order(set), c_hat, strategy)
}

/// `points` log-spaced integers from `min` to `max`, deduplicated.
pub fn guess_grid(min: usize, max: usize, points: usize) -> Vec<usize> {
    if points == 0 || min == 0 || min > max {
        return Vec::new();
    }
    if points == 1 {
        return vec![min];
    }
    let (lo, hi) = ((min as f64).log10(), (max as f64).log10());
    let mut grid: Vec<usize> = (0..points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            (10f64.powf(x).round() as usize).clamp(min, max)
        })
        .collect();
    grid.dedup();
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: GuessStrategy,
    pub c_hat: usize,
    pub c: usize,
    #[serde(with = "crate::extreal")]
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: SweepRow,
    pub bound: String,
    pub m: usize,
    /// Level each configuration was tested at.
    pub per_test_significance: f64,
    pub rows: Vec<SweepRow>,
}

/// Sweep with the binomial bound.
pub fn sweep(set: &ScoreRecordSet, cfg: &GuessAuditConfig) -> Result<SweepResult> {
    match &cfg.bound {
        BoundKind::Binomial => sweep_with(set, cfg, &BinomialBound),
        BoundKind::FdpPlugin(name) => Err(AuditError::config(format!(
            "bound plugin `{name}` is not registered; pass it to sweep_with"
        ))),
    }
}

/// Evaluates every strategy on the log-spaced `ĉ` grid and returns the
/// configuration with the highest epsilon, tested at the level set by
/// `cfg.correction`. Ties keep the earliest row in
/// (strategy order, ascending `ĉ`).
pub fn sweep_with(set: &ScoreRecordSet, cfg: &GuessAuditConfig, bound: &dyn GuessBound) -> Result<SweepResult> {
    cfg.validate()?;
    let grid = guess_grid(cfg.grid_min, set.len(), cfg.grid_points);
    if grid.is_empty() {
        return Err(AuditError::config(format!(
            "empty guess grid (grid_min = {}, grid_points = {}, m = {})",
            cfg.grid_min,
            cfg.grid_points,
            set.len()
        )));
    }
    let order = guess_order(set);
    let jobs: Vec<(GuessStrategy, usize)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| grid.iter().map(move |&c| (s, c)))
        .filter(|&(s, c)| s == GuessStrategy::OneSided || c >= 2)
        .collect();
    let level = match cfg.correction {
        Correction::Bonferroni => cfg.significance / jobs.len().max(1) as f64,
        Correction::None => cfg.significance,
    };
    let rows = par::map_slice(&jobs, |&(strategy, c_hat)| {
        guesses_from_order(set, &order, c_hat, strategy).map(|summary| SweepRow {
            strategy,
            c_hat: summary.c_hat,
            c: summary.c,
            epsilon: bound.epsilon_lower_bound(&summary, cfg.delta, level),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let best = *rows
        .iter()
        .reduce(|best, r| if r.epsilon > best.epsilon { r } else { best })
        .ok_or_else(|| AuditError::config("guess grid produced no valid configuration"))?;
    Ok(SweepResult {
        best,
        bound: bound.name().to_string(),
        m: set.len(),
        per_test_significance: level,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{Metadata, ScoreRecord};

    fn set(members: &[f64], non: &[f64]) -> ScoreRecordSet {
        let mut v = Vec::new();
        for (i, &s) in members.iter().enumerate() {
            v.push(ScoreRecord::new(format!("m{i:04}"), s, true));
        }
        for (i, &s) in non.iter().enumerate() {
            v.push(ScoreRecord::new(format!("n{i:04}"), s, false));
        }
        ScoreRecordSet::new(v, Metadata::new()).unwrap()
    }

    #[test]
    fn tail_examples() {
        assert_eq!(binomial_tail(10, 0.3, 0), 1.0);
        assert!((binomial_tail(2, 0.5, 2) - 0.25).abs() < 1e-15);
        assert_eq!(binomial_tail(5, 0.5, 6), 0.0);
        assert_eq!(binomial_tail(5, 0.0, 1), 0.0);
        assert_eq!(binomial_tail(5, 1.0, 5), 1.0);
    }

    #[test]
    fn chance_level_gives_zero() {
        let cfg = GuessAuditConfig::default();
        for delta in [0.0, 1e-6] {
            let c = GuessAuditConfig { delta, ..cfg.clone() };
            let s = GuessSummary::new(1000, 500, 250, GuessStrategy::TwoSided).unwrap();
            assert_eq!(epsilon_lower_bound(&s, &c), 0.0);
        }
    }

    #[test]
    fn slack_can_swamp_everything() {
        let cfg = GuessAuditConfig { delta: 1e-3, ..Default::default() };
        let s = GuessSummary::new(1000, 1000, 1000, GuessStrategy::OneSided).unwrap();
        assert_eq!(epsilon_lower_bound(&s, &cfg), 0.0);
    }

    #[test]
    fn guesses_examples() {
        let s = set(&[0.9, 0.8], &[0.2, 0.1]);
        let g = make_guesses(&s, 2, GuessStrategy::TwoSided).unwrap();
        assert_eq!((g.c_hat, g.c), (2, 2));
        let g = make_guesses(&s, 4, GuessStrategy::TwoSided).unwrap();
        assert_eq!((g.c_hat, g.c), (4, 4));
        let anti = set(&[0.1, 0.2], &[0.8, 0.9]);
        assert_eq!(make_guesses(&anti, 2, GuessStrategy::OneSided).unwrap().c, 0);
        assert_eq!(make_guesses(&s, 3, GuessStrategy::TwoSided).unwrap().c_hat, 2);
        assert!(make_guesses(&s, 0, GuessStrategy::OneSided).is_err());
        assert!(make_guesses(&s, 5, GuessStrategy::OneSided).is_err());
        assert!(make_guesses(&s, 1, GuessStrategy::TwoSided).is_err());
    }

    #[test]
    fn ties_break_by_sample_id() {
        // All scores tie: one-sided picks the lexicographically largest ids.
        let s = set(&[1.0, 1.0], &[1.0, 1.0]);
        let g = make_guesses(&s, 2, GuessStrategy::OneSided).unwrap();
        assert_eq!(g.c, 0, "n0000/n0001 sort after m-ids");
    }

    #[test]
    fn grid_shape() {
        assert_eq!(guess_grid(10, 1000, 3), vec![10, 100, 1000]);
        assert!(guess_grid(10, 5, 3).is_empty());
        assert!(guess_grid(10, 1000, 0).is_empty());
        let g = guess_grid(10, 20, 50);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!((g[0], *g.last().unwrap()), (10, 20));
    }

    #[test]
    fn empty_grid_is_an_error() {
        let s = set(&[1.0, 2.0], &[0.0]);
        assert!(sweep(&s, &GuessAuditConfig::default()).is_err());
    }

    #[test]
    fn plugin_must_be_supplied() {
        let s = set(&(0..20).map(f64::from).collect::<Vec<_>>(), &(0..20).map(|i| -f64::from(i)).collect::<Vec<_>>());
        let cfg = GuessAuditConfig { bound: BoundKind::FdpPlugin("fdp".into()), ..Default::default() };
        assert!(sweep(&s, &cfg).is_err());

        struct Constant;
        impl GuessBound for Constant {
            fn name(&self) -> &str {
                "constant"
            }
            fn epsilon_lower_bound(&self, s: &GuessSummary, _: f64, _: f64) -> f64 {
                s.c as f64
            }
        }
        let r = sweep_with(&s, &cfg, &Constant).unwrap();
        assert_eq!(r.bound, "constant");
        assert_eq!(r.best.c, 40);
    }
}
