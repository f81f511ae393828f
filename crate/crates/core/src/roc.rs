//! Threshold-sweep metrics over a score set.
//!
//! The adversary guesses "member" when `score >= threshold`. All rates are
//! computed from class-sorted score vectors with binary search, so a single
//! [`ClassScores`] can answer many threshold queries cheaply.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::observation::ScoreRecordSet;

/// Upper bound on the size of [`threshold_grid`]: four error types, 99 levels each.
pub const MAX_GRID_LEN: usize = 4 * 99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    #[serde(with = "crate::extreal")]
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub fnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    #[serde(with = "crate::extreal")]
    pub threshold: f64,
    /// May be `-inf` (no evidence) or `+inf` (zero error rate on the other side).
    #[serde(with = "crate::extreal")]
    pub epsilon: f64,
    pub delta: f64,
}

/// Member and non-member scores, each sorted ascending.
#[derive(Debug, Clone)]
pub struct ClassScores {
    members: Vec<f64>,
    non_members: Vec<f64>,
}

impl ClassScores {
    pub fn from_set(set: &ScoreRecordSet) -> Result<Self> {
        set.require_both_classes()?;
        let (scores, labels) = set.columns();
        Ok(Self::from_columns_unchecked(&scores, &labels))
    }

    /// Builds from parallel columns; returns `None` if a class is missing.
    pub fn from_columns(scores: &[f64], labels: &[bool]) -> Option<Self> {
        let cs = Self::from_columns_unchecked(scores, labels);
        (!cs.members.is_empty() && !cs.non_members.is_empty()).then_some(cs)
    }

    fn from_columns_unchecked(scores: &[f64], labels: &[bool]) -> Self {
        let mut members = Vec::new();
        let mut non_members = Vec::new();
        for (&s, &b) in scores.iter().zip(labels) {
            if b {
                members.push(s);
            } else {
                non_members.push(s);
            }
        }
        members.sort_by(f64::total_cmp);
        non_members.sort_by(f64::total_cmp);
        Self { members, non_members }
    }

    pub fn members(&self) -> &[f64] {
        &self.members
    }

    pub fn non_members(&self) -> &[f64] {
        &self.non_members
    }

    /// Members scoring at or above `threshold`.
    pub fn members_at_or_above(&self, threshold: f64) -> usize {
        self.members.len() - self.members.partition_point(|&s| s < threshold)
    }

    /// Non-members scoring at or above `threshold`.
    pub fn non_members_at_or_above(&self, threshold: f64) -> usize {
        self.non_members.len() - self.non_members.partition_point(|&s| s < threshold)
    }

    pub fn rates_at(&self, threshold: f64) -> RatePoint {
        let n1 = self.members.len() as f64;
        let n0 = self.non_members.len() as f64;
        let tp = self.members_at_or_above(threshold);
        let fp = self.non_members_at_or_above(threshold);
        let fn_ = self.members.len() - tp;
        let tn = self.non_members.len() - fp;
        RatePoint {
            threshold,
            tpr: tp as f64 / n1,
            fpr: fp as f64 / n0,
            tnr: tn as f64 / n0,
            fnr: fn_ as f64 / n1,
        }
    }

    /// Mann-Whitney AUC with half credit for ties, via one merge pass.
    pub fn auc(&self) -> f64 {
        // wins2 counts (member > non-member) twice plus ties once, so the
        // final division is the only rounding step.
        let mut wins2: u128 = 0;
        let mut j = 0usize; // non-members strictly below the current member group
        let (m, n) = (&self.members, &self.non_members);
        let mut i = 0usize;
        while i < m.len() {
            let s = m[i];
            let mut group = 1usize;
            while i + group < m.len() && m[i + group] == s {
                group += 1;
            }
            while j < n.len() && n[j] < s {
                j += 1;
            }
            let mut ties = 0usize;
            while j + ties < n.len() && n[j + ties] == s {
                ties += 1;
            }
            wins2 += group as u128 * (2 * j as u128 + ties as u128);
            i += group;
        }
        wins2 as f64 / (2.0 * m.len() as f64 * n.len() as f64)
    }

    /// Best accuracy over every observed threshold plus `+inf`, with the
    /// threshold that attains it (the largest one on ties).
    pub fn best_accuracy(&self) -> (f64, f64) {
        let total = (self.members.len() + self.non_members.len()) as f64;
        let mut best_t = f64::INFINITY;
        let mut best_correct = self.non_members.len();
        for t in self.distinct_scores_desc() {
            let correct = self.members_at_or_above(t) + (self.non_members.len() - self.non_members_at_or_above(t));
            if correct > best_correct {
                best_correct = correct;
                best_t = t;
            }
        }
        (best_t, best_correct as f64 / total)
    }

    fn distinct_scores_desc(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.members.iter().chain(&self.non_members).copied().collect();
        all.sort_by(|a, b| b.total_cmp(a));
        all.dedup();
        all
    }

    /// Smallest observed score strictly greater than `x`.
    fn next_score_above(&self, x: f64) -> Option<f64> {
        let a = self.members.get(self.members.partition_point(|&s| s <= x)).copied();
        let b = self.non_members.get(self.non_members.partition_point(|&s| s <= x)).copied();
        match (a, b) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

pub fn rates_at_threshold(set: &ScoreRecordSet, threshold: f64) -> Result<RatePoint> {
    Ok(ClassScores::from_set(set)?.rates_at(threshold))
}

pub fn auc(set: &ScoreRecordSet) -> Result<f64> {
    Ok(ClassScores::from_set(set)?.auc())
}

/// ROC points from threshold `+inf` (0, 0) down through every distinct score
/// to `-inf` (1, 1). FPR and TPR are non-decreasing along the sequence.
pub fn roc_curve(set: &ScoreRecordSet) -> Result<Vec<RatePoint>> {
    let cs = ClassScores::from_set(set)?;
    let mut points = vec![cs.rates_at(f64::INFINITY)];
    points.extend(cs.distinct_scores_desc().into_iter().map(|t| cs.rates_at(t)));
    points.push(cs.rates_at(f64::NEG_INFINITY));
    Ok(points)
}

/// Trapezoidal area under a ROC sequence ordered by increasing FPR.
pub fn trapezoid_area(points: &[RatePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

fn log_ratio(numerator: f64, denominator: f64) -> f64 {
    if numerator <= 0.0 {
        f64::NEG_INFINITY
    } else if denominator <= 0.0 {
        f64::INFINITY
    } else {
        (numerator / denominator).ln()
    }
}

/// Empirical epsilon lower bound at one operating point:
/// `max(ln((TPR - δ)/FPR), ln((TNR - δ)/FNR))` with extended-real branches.
pub fn epsilon_at_threshold(rates: &RatePoint, delta: f64) -> Result<EpsilonEstimate> {
    if !(0.0..1.0).contains(&delta) {
        return Err(AuditError::config(format!("delta {delta} outside [0, 1)")));
    }
    Ok(EpsilonEstimate {
        threshold: rates.threshold,
        epsilon: epsilon_value(rates, delta),
        delta,
    })
}

pub(crate) fn epsilon_value(rates: &RatePoint, delta: f64) -> f64 {
    let a = log_ratio(rates.tpr - delta, rates.fpr);
    let b = log_ratio(rates.tnr - delta, rates.fnr);
    a.max(b)
}

/// Minimal count `c` with `c / n >= level / 100`.
fn count_for_level(level: usize, n: usize) -> usize {
    (level * n).div_ceil(100)
}

/// Thresholds at which each of TPR, FPR, TNR, FNR first reaches every level
/// 0.01, 0.02, ..., 0.99. Rates are step functions of the threshold, so each
/// target is realized at the observed score where the rate crosses it:
/// the largest score for the decreasing rates (TPR, FPR) and the smallest for
/// the increasing ones (TNR, FNR). Sorted ascending, deduplicated.
pub fn threshold_grid(set: &ScoreRecordSet) -> Result<Vec<f64>> {
    Ok(ClassScores::from_set(set)?.threshold_grid())
}

impl ClassScores {
    pub fn threshold_grid(&self) -> Vec<f64> {
        let mut grid = Vec::with_capacity(MAX_GRID_LEN);
        for level in 1..=99 {
            for class in [&self.members, &self.non_members] {
                let n = class.len();
                let c = count_for_level(level, n);
                // TPR/FPR: c-th largest score has exactly c at or above it
                // (or more, on ties) and any larger score has fewer.
                grid.push(class[n - c]);
                // TNR/FNR: need c scores strictly below the threshold.
                if let Some(t) = self.next_score_above(class[c - 1]) {
                    grid.push(t);
                }
            }
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }

    /// Largest threshold whose TPR is at least `target`.
    pub fn threshold_for_tpr(&self, target: f64) -> f64 {
        let n = self.members.len();
        let c = ((target * n as f64).ceil() as usize).clamp(1, n);
        self.members[n - c]
    }
}

/// Epsilon at the largest threshold whose TPR reaches `tpr_target`.
pub fn epsilon_at_tpr(set: &ScoreRecordSet, tpr_target: f64, delta: f64) -> Result<EpsilonEstimate> {
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(AuditError::config(format!("tpr target {tpr_target} outside (0, 1]")));
    }
    let cs = ClassScores::from_set(set)?;
    epsilon_at_threshold(&cs.rates_at(cs.threshold_for_tpr(tpr_target)), delta)
}

/// Fraction of correct guesses at `threshold`.
pub fn accuracy(set: &ScoreRecordSet, threshold: f64) -> Result<f64> {
    if set.is_empty() {
        return Err(AuditError::Analysis("accuracy of an empty score set".to_string()));
    }
    let correct = set
        .records()
        .iter()
        .filter(|r| (r.score >= threshold) == r.membership)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// Accuracy at the accuracy-maximizing threshold, with that threshold.
pub fn best_accuracy(set: &ScoreRecordSet) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(AuditError::Analysis("accuracy of an empty score set".to_string()));
    }
    let mut scores: Vec<f64> = set.records().iter().map(|r| r.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    let mut best = (f64::INFINITY, accuracy(set, f64::INFINITY)?);
    for t in scores {
        let acc = accuracy(set, t)?;
        if acc > best.1 {
            best = (t, acc);
        }
    }
    Ok(best)
}
