//! Discoverable and probabilistic extraction analysis for language models.
//!
//! Effective next-token probabilities are reconstructed from the truncated,
//! sorted raw distributions carried by [`TokenTrace`] steps. When the listed
//! head does not cover the whole vocabulary, schemes that depend on the
//! missing tail either fail explicitly (top-k, top-p) or report a bound on the
//! error introduced by ignoring it (temperature).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::observation::{CompletionRecord, TokenId, TokenStep, TokenTrace};
use crate::par;

const MASS_TOL: f64 = 1e-9;

/// Decoding scheme applied on top of the raw next-token distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SamplingScheme {
    Greedy,
    Temperature { t: f64 },
    TopK { k: usize },
    TopP { p: f64 },
}

impl SamplingScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplingScheme::Greedy => Ok(()),
            SamplingScheme::Temperature { t } if t > 0.0 && t.is_finite() => Ok(()),
            SamplingScheme::TopK { k } if k >= 1 => Ok(()),
            SamplingScheme::TopP { p } if p > 0.0 && p <= 1.0 => Ok(()),
            other => Err(AuditError::config(format!("invalid sampling scheme {other}"))),
        }
    }
}

impl fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingScheme::Greedy => write!(f, "greedy"),
            SamplingScheme::Temperature { t } => write!(f, "temperature={t}"),
            SamplingScheme::TopK { k } => write!(f, "top_k={k}"),
            SamplingScheme::TopP { p } => write!(f, "top_p={p}"),
        }
    }
}

impl FromStr for SamplingScheme {
    type Err = AuditError;

    /// Parses `greedy`, `temperature=T`, `top_k=K` or `top_p=P`
    /// (`-` and `:` are accepted in place of `_` and `=`).
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let (name, arg) = match norm.split_once(['=', ':']) {
            Some((n, a)) => (n.to_string(), Some(a.to_string())),
            None => (norm.clone(), None),
        };
        let bad = || AuditError::config(format!("cannot parse sampling scheme `{s}`"));
        let scheme = match (name.as_str(), arg) {
            ("greedy", None) => SamplingScheme::Greedy,
            ("temperature" | "temp", Some(a)) => SamplingScheme::Temperature { t: a.parse().map_err(|_| bad())? },
            ("top_k", Some(a)) => SamplingScheme::TopK { k: a.parse().map_err(|_| bad())? },
            ("top_p", Some(a)) => SamplingScheme::TopP { p: a.parse().map_err(|_| bad())? },
            _ => return Err(bad()),
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

/// Success predicate comparing a generation against its target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MatchPredicate {
    Exact,
    /// The target occurs contiguously inside the generation.
    Inclusion,
    /// `LCS(generated, target) / |target| >= tau`.
    Lcs { tau: f64 },
}

impl MatchPredicate {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MatchPredicate::Lcs { tau } if !(tau > 0.0 && tau <= 1.0) => {
                Err(AuditError::config(format!("LCS threshold {tau} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MatchPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchPredicate::Exact => write!(f, "exact"),
            MatchPredicate::Inclusion => write!(f, "inclusion"),
            MatchPredicate::Lcs { tau } => write!(f, "lcs>={tau}"),
        }
    }
}

/// Effective probability of one step plus the upper bound on the relative
/// overestimate caused by the unlisted tail (0 when exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepProb {
    pub prob: f64,
    pub relative_error: f64,
}

impl StepProb {
    fn exact(prob: f64) -> Self {
        Self { prob, relative_error: 0.0 }
    }
}

fn unresolvable(message: impl Into<String>) -> AuditError {
    AuditError::Unresolvable {
        trace: String::new(),
        step: 0,
        message: message.into(),
    }
}

/// Probability of emitting the step's target token under `scheme`.
pub fn effective_step_prob(step: &TokenStep, scheme: &SamplingScheme) -> Result<f64> {
    effective_step_prob_bounded(step, scheme, None).map(|s| s.prob)
}

/// Like [`effective_step_prob`], also reporting the truncation error bound.
/// `vocab_size` tightens the temperature bound for `T > 1`.
pub fn effective_step_prob_bounded(step: &TokenStep, scheme: &SamplingScheme, vocab_size: Option<usize>) -> Result<StepProb> {
    let sorted = &step.sorted_probs;
    let listed = sorted.len();
    let mass: f64 = sorted.iter().sum();
    let complete = mass >= 1.0 - MASS_TOL;
    let tail = (1.0 - mass).max(0.0);
    let in_list = step.target_rank <= listed;

    match *scheme {
        SamplingScheme::Greedy => {
            if step.target_rank != 1 {
                return Ok(StepProb::exact(0.0));
            }
            // A tie for the maximum makes the decoder's choice unknowable.
            let tied_in_list = listed >= 2 && sorted[1] >= sorted[0];
            let tied_in_tail = listed == 1 && !complete && tail >= sorted[0];
            if tied_in_tail {
                return Err(unresolvable("unlisted tail could tie the greedy maximum"));
            }
            Ok(StepProb::exact(if tied_in_list { 0.0 } else { 1.0 }))
        }
        SamplingScheme::TopK { k } => {
            if step.target_rank > k {
                return Ok(StepProb::exact(0.0));
            }
            if k > listed && !complete {
                return Err(unresolvable(format!(
                    "top-{k} needs {k} ranked probabilities, trace lists {listed} covering {mass}"
                )));
            }
            let norm: f64 = sorted.iter().take(k).sum();
            Ok(StepProb::exact(step.target_prob / norm))
        }
        SamplingScheme::TopP { p } => {
            let mut cum = 0.0;
            let mut cut = None;
            for (j, &q) in sorted.iter().enumerate() {
                cum += q;
                if cum > p {
                    cut = Some((j + 1, cum));
                    break;
                }
            }
            let (size, norm) = match cut {
                Some(c) => c,
                None if complete => (listed, cum),
                None => {
                    return Err(unresolvable(format!(
                        "nucleus for p = {p} extends past the listed mass {mass}"
                    )))
                }
            };
            if step.target_rank > size {
                return Ok(StepProb::exact(0.0));
            }
            Ok(StepProb::exact(step.target_prob / norm))
        }
        SamplingScheme::Temperature { t } => {
            let inv = 1.0 / t;
            let norm: f64 = sorted.iter().map(|q| q.powf(inv)).sum();
            let target = step.target_prob.powf(inv);
            // Listed norm excludes the tail; the target's own tilted mass is
            // added back when it sits in the tail.
            let norm = if in_list { norm } else { norm + target };
            let tail = if in_list { tail } else { (tail - step.target_prob).max(0.0) };
            let smallest = sorted[listed - 1];
            let tail_tilted_max = if tail <= 0.0 {
                0.0
            } else if inv >= 1.0 {
                smallest.powf(inv - 1.0) * tail
            } else if let Some(v) = vocab_size {
                let slots = v.saturating_sub(listed + usize::from(!in_list)).max(1) as f64;
                // Spreading the tail evenly maximizes a concave tilt.
                let spread = slots * (tail / slots).powf(inv);
                spread.min(slots * smallest.powf(inv))
            } else {
                f64::INFINITY
            };
            if norm <= 0.0 {
                return Ok(StepProb::exact(0.0));
            }
            Ok(StepProb {
                prob: target / norm,
                relative_error: tail_tilted_max / norm,
            })
        }
    }
}

/// Probability of the whole target under a scheme, with its error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PzEstimate {
    pub pz: f64,
    /// The computed `pz` may overestimate the truth by at most this relative
    /// factor: `true_pz >= pz / (1 + relative_error_bound)`.
    #[serde(with = "crate::extreal")]
    pub relative_error_bound: f64,
}

/// `p_z` with its truncation bound. Errors name the trace and step.
pub fn pz_bounded(trace: &TokenTrace, scheme: &SamplingScheme, label: &str) -> Result<PzEstimate> {
    scheme.validate()?;
    let mut log_sum = 0.0;
    let mut log_err = 0.0;
    let mut zero = false;
    for (i, step) in trace.steps.iter().enumerate() {
        let sp = effective_step_prob_bounded(step, scheme, trace.vocab_size).map_err(|e| match e {
            AuditError::Unresolvable { message, .. } => AuditError::Unresolvable {
                trace: label.to_string(),
                step: i,
                message,
            },
            other => other,
        })?;
        if sp.prob <= 0.0 {
            zero = true;
            continue;
        }
        log_sum += sp.prob.ln();
        log_err += sp.relative_error.ln_1p();
    }
    Ok(PzEstimate {
        pz: if zero { 0.0 } else { log_sum.exp().min(1.0) },
        relative_error_bound: log_err.exp_m1(),
    })
}

/// Single-attempt probability that the sampler emits the target exactly.
pub fn pz(trace: &TokenTrace, scheme: &SamplingScheme) -> Result<f64> {
    pz_bounded(trace, scheme, &trace.label(0)).map(|e| e.pz)
}

/// Probability of at least one exact hit in `n` independent attempts:
/// `1 - (1 - p_z)^n`.
pub fn np_probability(pz: f64, n: u64) -> f64 {
    if n == 1 || pz <= 0.0 {
        return pz.max(0.0);
    }
    if pz >= 1.0 {
        return 1.0;
    }
    -((n as f64) * (-pz).ln_1p()).exp_m1()
}

/// A count that may be unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtendedCount {
    Finite(u64),
    /// No finite number of attempts suffices (or more than `u64::MAX`).
    Infinite,
}

/// Smallest `n` with `1 - (1 - p_z)^n >= p`.
pub fn n_for_target(pz: f64, p: f64) -> Result<ExtendedCount> {
    if !(p > 0.0 && p < 1.0) {
        return Err(AuditError::config(format!("target probability {p} outside (0, 1)")));
    }
    if pz <= 0.0 {
        return Ok(ExtendedCount::Infinite);
    }
    if pz >= p {
        return Ok(ExtendedCount::Finite(1));
    }
    let ratio = (-p).ln_1p() / (-pz).ln_1p();
    if ratio.is_nan() || ratio >= u64::MAX as f64 {
        return Ok(ExtendedCount::Infinite);
    }
    let mut n = (ratio.ceil() as u64).max(1);
    // The closed form is exact in real arithmetic; settle rounding against
    // the forward map so the two stay mutually consistent.
    while np_probability(pz, n) < p {
        n += 1;
    }
    while n > 1 && np_probability(pz, n - 1) >= p {
        n -= 1;
    }
    Ok(ExtendedCount::Finite(n))
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; short.len() + 1];
    for &x in long {
        let mut diag = 0;
        for (j, &y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

fn contains_run(haystack: &[TokenId], needle: &[TokenId]) -> bool {
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Applies a predicate. Tokens are compared as ids; any text normalization
/// happens before traces are produced.
pub fn matches(record: &CompletionRecord, predicate: &MatchPredicate) -> bool {
    let (y, z) = (&record.generated, &record.target);
    match *predicate {
        MatchPredicate::Exact => y == z,
        MatchPredicate::Inclusion => contains_run(y, z),
        MatchPredicate::Lcs { tau } => lcs_len(y, z) as f64 / z.len() as f64 >= tau,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub scheme: String,
    pub n_traces: usize,
    pub n_completions: usize,
    /// Predicate label to fraction of matching completions; absent when no
    /// completions were recorded for the scheme.
    pub match_rates: BTreeMap<String, f64>,
    /// `p_z` threshold (as printed) to fraction of traces exceeding it.
    pub pz_rates: BTreeMap<String, f64>,
    /// Largest per-trace truncation bound seen for this scheme.
    #[serde(with = "crate::extreal")]
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// Per scheme label, the `p_z` of every trace in input order.
    pub pz_values: BTreeMap<String, Vec<f64>>,
}

/// Per (scheme, predicate) match rates and per (scheme, threshold)
/// fractions of traces with `p_z > threshold`. Completions are attributed to
/// a scheme through their `scheme` label; unlabeled completions count for
/// every scheme.
pub fn extraction_rates(
    traces: &[TokenTrace],
    completions: &[CompletionRecord],
    schemes: &[SamplingScheme],
    predicates: &[MatchPredicate],
    pz_thresholds: &[f64],
) -> Result<RateTable> {
    if traces.is_empty() && completions.is_empty() {
        return Err(AuditError::Analysis("extraction corpus is empty".to_string()));
    }
    if schemes.is_empty() {
        return Err(AuditError::config("no sampling scheme given"));
    }
    predicates.iter().try_for_each(MatchPredicate::validate)?;
    schemes.iter().try_for_each(SamplingScheme::validate)?;

    let mut rows = Vec::new();
    let mut pz_values = BTreeMap::new();
    for scheme in schemes {
        let label = scheme.to_string();
        let estimates = par::try_map_range(traces.len(), |i| pz_bounded(&traces[i], scheme, &traces[i].label(i)))?;
        let pzs: Vec<f64> = estimates.iter().map(|e| e.pz).collect();

        let mut pz_rates = BTreeMap::new();
        if !traces.is_empty() {
            for &thr in pz_thresholds {
                let hits = pzs.iter().filter(|&&p| p > thr).count();
                pz_rates.insert(thr.to_string(), hits as f64 / traces.len() as f64);
            }
        }

        let relevant: Vec<&CompletionRecord> = completions
            .iter()
            .filter(|c| c.scheme.as_deref().is_none_or(|s| scheme_label_matches(s, scheme)))
            .collect();
        let mut match_rates = BTreeMap::new();
        if !relevant.is_empty() {
            for pred in predicates {
                let hits = relevant.iter().filter(|c| matches(c, pred)).count();
                match_rates.insert(pred.to_string(), hits as f64 / relevant.len() as f64);
            }
        }

        rows.push(RateRow {
            scheme: label.clone(),
            n_traces: traces.len(),
            n_completions: relevant.len(),
            match_rates,
            pz_rates,
            max_relative_error: estimates.iter().map(|e| e.relative_error_bound).fold(0.0, f64::max),
        });
        pz_values.insert(label, pzs);
    }
    Ok(RateTable { rows, pz_values })
}

fn scheme_label_matches(label: &str, scheme: &SamplingScheme) -> bool {
    label.parse::<SamplingScheme>().is_ok_and(|s| s == *scheme)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpPoint {
    pub n: u64,
    pub p: f64,
    pub fraction: f64,
}

/// For every `(n, p)`, the fraction of `pz_values` that are
/// `(n, p)`-extractable, i.e. `1 - (1 - p_z)^n >= p`.
pub fn np_curve(pz_values: &[f64], n_grid: &[u64], p_targets: &[f64]) -> Result<Vec<NpPoint>> {
    if pz_values.is_empty() || n_grid.is_empty() || p_targets.is_empty() {
        return Err(AuditError::config("np_curve needs non-empty p_z values, n grid and p targets"));
    }
    let total = pz_values.len() as f64;
    let mut out = Vec::with_capacity(n_grid.len() * p_targets.len());
    for &n in n_grid {
        let probs: Vec<f64> = pz_values.iter().map(|&pz| np_probability(pz, n)).collect();
        for &p in p_targets {
            let hits = probs.iter().filter(|&&q| q >= p).count();
            out.push(NpPoint {
                n,
                p,
                fraction: hits as f64 / total,
            });
        }
    }
    Ok(out)
}
