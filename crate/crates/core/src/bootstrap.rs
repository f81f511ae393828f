//! Bootstrap confidence intervals for attack-success metrics.
//!
//! The threshold grid is fixed on the full data so that per-threshold epsilon
//! values are comparable across rounds. Round `r` draws from its own ChaCha8
//! stream (`seed`, stream `r`), which makes results independent of how rounds
//! are scheduled across threads.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::observation::ScoreRecordSet;
use crate::par;
use crate::rng::stream_rng;
use crate::roc::{epsilon_value, ClassScores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    /// Standard bootstrap: `m` draws with replacement.
    WithReplacement,
    /// `m` draws without replacement out of `m`, i.e. a permutation. Every
    /// round sees the original set, so intervals collapse to points.
    WithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub k: usize,
    pub confidence: f64,
    pub delta: f64,
    pub seed: u64,
    pub resampling: Resampling,
    /// Extra fixed-TPR operating points whose epsilon gets its own interval.
    #[serde(default)]
    pub tpr_targets: Vec<f64>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            k: 1000,
            confidence: 0.95,
            delta: 0.0,
            seed: 0,
            resampling: Resampling::WithReplacement,
            tpr_targets: Vec::new(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(AuditError::config(format!("bootstrap needs k >= 2 rounds, got {}", self.k)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(AuditError::config(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(AuditError::config(format!("delta {} outside [0, 1)", self.delta)));
        }
        if let Some(t) = self.tpr_targets.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(AuditError::config(format!("tpr target {t} outside (0, 1]")));
        }
        Ok(())
    }
}

/// Metrics of one bootstrap round. `None` marks a round whose resample lost a
/// class, which makes every rate-based metric undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    /// One epsilon per threshold of the frozen grid.
    pub epsilons: Option<Vec<f64>>,
    /// One epsilon per configured TPR target.
    pub epsilons_at_tpr: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BootstrapRounds {
    pub grid: Vec<f64>,
    pub rounds: Vec<RoundMetrics>,
}

impl BootstrapRounds {
    pub fn degenerate_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| r.auc.is_none()).count()
    }
}

fn round_metrics(cs: Option<ClassScores>, grid: &[f64], cfg: &BootstrapConfig) -> RoundMetrics {
    match cs {
        None => RoundMetrics {
            auc: None,
            accuracy: None,
            epsilons: None,
            epsilons_at_tpr: None,
        },
        Some(cs) => RoundMetrics {
            auc: Some(cs.auc()),
            accuracy: Some(cs.best_accuracy().1),
            epsilons: Some(grid.iter().map(|&t| epsilon_value(&cs.rates_at(t), cfg.delta)).collect()),
            epsilons_at_tpr: Some(
                cfg.tpr_targets
                    .iter()
                    .map(|&p| epsilon_value(&cs.rates_at(cs.threshold_for_tpr(p)), cfg.delta))
                    .collect(),
            ),
        },
    }
}

/// Runs `cfg.k` resampling rounds. Deterministic given `(set, cfg)`.
pub fn bootstrap_rounds(set: &ScoreRecordSet, cfg: &BootstrapConfig) -> Result<BootstrapRounds> {
    cfg.validate()?;
    let full = ClassScores::from_set(set)?;
    let grid = full.threshold_grid();
    let (scores, labels) = set.columns();
    let m = scores.len();

    let rounds = par::map_range(cfg.k, |r| {
        let mut rng = stream_rng(cfg.seed, r as u64);
        let idx: Vec<usize> = match cfg.resampling {
            Resampling::WithReplacement => (0..m).map(|_| rng.random_range(0..m)).collect(),
            Resampling::WithoutReplacement => {
                let mut v: Vec<usize> = (0..m).collect();
                v.shuffle(&mut rng);
                v
            }
        };
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let b: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        round_metrics(ClassScores::from_columns(&s, &b), &grid, cfg)
    });
    Ok(BootstrapRounds { grid, rounds })
}

/// Percentile interval at levels `(1-c)/2` and `1-(1-c)/2`, interpolating
/// linearly between order statistics. Infinite sentinels sort as extremes;
/// interpolating towards one yields that infinity.
pub fn interval(values: &[f64], confidence: f64) -> Result<(f64, f64)> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(AuditError::config(format!("confidence {confidence} outside (0, 1)")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(AuditError::Analysis("interval over NaN values".to_string()));
    }
    if values.iter().filter(|v| v.is_finite()).count() < 2 {
        return Err(AuditError::Analysis("interval needs at least 2 finite values".to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    Ok((quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail)))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    let (a, b) = (sorted[lo], sorted[hi]);
    if frac == 0.0 || a == b {
        a
    } else if b == f64::INFINITY {
        b
    } else if a == f64::NEG_INFINITY {
        a
    } else {
        a + frac * (b - a)
    }
}

/// Report fragment for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub metric: String,
    #[serde(with = "crate::extreal")]
    pub point: f64,
    #[serde(with = "crate::extreal")]
    pub lower: f64,
    #[serde(with = "crate::extreal")]
    pub upper: f64,
    pub k: usize,
    /// Rounds that contributed a value.
    pub valid_rounds: usize,
    pub confidence: f64,
    pub delta: f64,
    pub resampling: Resampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdInterval {
    #[serde(with = "crate::extreal")]
    pub threshold: f64,
    #[serde(flatten)]
    pub interval: IntervalReport,
}

/// Headline empirical epsilon: the largest finite interval upper bound over
/// all thresholds, plus the conservative variant built from lower bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalEpsilon {
    #[serde(with = "crate::extreal")]
    pub threshold: f64,
    #[serde(with = "crate::extreal")]
    pub epsilon: f64,
    #[serde(with = "crate::extreal::option")]
    pub conservative_threshold: Option<f64>,
    #[serde(with = "crate::extreal::option")]
    pub conservative_epsilon: Option<f64>,
}

/// Picks the threshold whose interval has the largest finite upper bound,
/// breaking ties toward the smaller threshold. Intervals with an infinite
/// upper bound carry no usable estimate and are skipped.
pub fn final_empirical_epsilon(per_threshold: &[(f64, (f64, f64))]) -> Result<FinalEpsilon> {
    if per_threshold.is_empty() {
        return Err(AuditError::Analysis("no per-threshold intervals".to_string()));
    }
    let mut sorted: Vec<_> = per_threshold.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let pick = |key: fn(&(f64, f64)) -> f64| {
        let mut best: Option<(f64, f64)> = None;
        for (t, iv) in &sorted {
            let v = key(iv);
            if !v.is_finite() {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((*t, v));
            }
        }
        best
    };
    let (threshold, epsilon) = pick(|iv| iv.1).ok_or_else(|| {
        AuditError::Analysis("every per-threshold interval is infinite or absent".to_string())
    })?;
    let conservative = pick(|iv| iv.0);
    Ok(FinalEpsilon {
        threshold,
        epsilon,
        conservative_threshold: conservative.map(|c| c.0),
        conservative_epsilon: conservative.map(|c| c.1),
    })
}

/// Everything the bootstrap analysis reports for one score set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapAudit {
    pub auc: IntervalReport,
    pub accuracy: IntervalReport,
    pub epsilon_per_threshold: Vec<ThresholdInterval>,
    pub epsilon_at_tpr: Vec<ThresholdInterval>,
    pub final_epsilon: Option<FinalEpsilon>,
    pub degenerate_rounds: usize,
    /// Thresholds whose per-round values did not support an interval.
    pub skipped_thresholds: usize,
    pub warnings: Vec<String>,
}

/// Full-data point estimates, bootstrap intervals and the final epsilon.
pub fn bootstrap_audit(set: &ScoreRecordSet, cfg: &BootstrapConfig) -> Result<BootstrapAudit> {
    let rounds = bootstrap_rounds(set, cfg)?;
    let full = ClassScores::from_set(set)?;
    let valid: Vec<&RoundMetrics> = rounds.rounds.iter().filter(|r| r.auc.is_some()).collect();
    let degenerate = rounds.degenerate_rounds();
    let mut warnings = Vec::new();
    if degenerate > 0 {
        warnings.push(format!(
            "{degenerate} of {} bootstrap rounds lost a class and were excluded",
            cfg.k
        ));
    }

    let report = |metric: String, point: f64, values: &[f64]| -> Result<IntervalReport> {
        let (lower, upper) = interval(values, cfg.confidence)?;
        Ok(IntervalReport {
            metric,
            point,
            lower,
            upper,
            k: cfg.k,
            valid_rounds: values.len(),
            confidence: cfg.confidence,
            delta: cfg.delta,
            resampling: cfg.resampling,
        })
    };

    let aucs: Vec<f64> = valid.iter().filter_map(|r| r.auc).collect();
    let accs: Vec<f64> = valid.iter().filter_map(|r| r.accuracy).collect();
    let auc = report("auc".to_string(), full.auc(), &aucs)?;
    let accuracy = report("accuracy".to_string(), full.best_accuracy().1, &accs)?;

    let mut epsilon_per_threshold = Vec::new();
    let mut skipped = 0usize;
    for (j, &t) in rounds.grid.iter().enumerate() {
        let values: Vec<f64> = valid
            .iter()
            .filter_map(|r| r.epsilons.as_ref().map(|e| e[j]))
            .collect();
        let point = epsilon_value(&full.rates_at(t), cfg.delta);
        match report(format!("epsilon@threshold={t}"), point, &values) {
            Ok(interval) => epsilon_per_threshold.push(ThresholdInterval { threshold: t, interval }),
            Err(_) => skipped += 1,
        }
    }
    if skipped > 0 {
        warnings.push(format!(
            "{skipped} thresholds had fewer than 2 finite epsilon values across rounds and were skipped"
        ));
    }

    let mut epsilon_at_tpr = Vec::new();
    for (j, &p) in cfg.tpr_targets.iter().enumerate() {
        let values: Vec<f64> = valid
            .iter()
            .filter_map(|r| r.epsilons_at_tpr.as_ref().map(|e| e[j]))
            .collect();
        let t = full.threshold_for_tpr(p);
        let point = epsilon_value(&full.rates_at(t), cfg.delta);
        match report(format!("epsilon@tpr={p}"), point, &values) {
            Ok(interval) => epsilon_at_tpr.push(ThresholdInterval { threshold: t, interval }),
            Err(e) => warnings.push(format!("epsilon at TPR {p}: {e}")),
        }
    }

    let pairs: Vec<(f64, (f64, f64))> = epsilon_per_threshold
        .iter()
        .map(|ti| (ti.threshold, (ti.interval.lower, ti.interval.upper)))
        .collect();
    let final_epsilon = match final_empirical_epsilon(&pairs) {
        Ok(f) => Some(f),
        Err(e) => {
            warnings.push(format!("final empirical epsilon unavailable: {e}"));
            None
        }
    };

    Ok(BootstrapAudit {
        auc,
        accuracy,
        epsilon_per_threshold,
        epsilon_at_tpr,
        final_epsilon,
        degenerate_rounds: degenerate,
        skipped_thresholds: skipped,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{Metadata, ScoreRecord};

    fn small_set() -> ScoreRecordSet {
        ScoreRecordSet::new(
            vec![
                ScoreRecord::new("a", 0.9, true),
                ScoreRecord::new("b", 0.4, true),
                ScoreRecord::new("c", 0.6, false),
                ScoreRecord::new("d", 0.1, false),
            ],
            Metadata::new(),
        )
        .unwrap()
    }

    #[test]
    fn percentile_reference() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = interval(&v, 0.95).unwrap();
        assert!((lo - 3.475).abs() < 1e-12);
        assert!((hi - 97.525).abs() < 1e-12);
    }

    #[test]
    fn constant_interval() {
        assert_eq!(interval(&[2.5; 10], 0.9).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn sentinels_are_extremes() {
        let mut v: Vec<f64> = (0..10).map(f64::from).collect();
        v.push(f64::INFINITY);
        v.push(f64::NEG_INFINITY);
        let (lo, hi) = interval(&v, 0.95).unwrap();
        assert_eq!(lo, f64::NEG_INFINITY);
        assert_eq!(hi, f64::INFINITY);
        let (lo, hi) = interval(&v, 0.5).unwrap();
        assert!(lo.is_finite() && hi.is_finite());
    }

    #[test]
    fn interval_needs_finite_values() {
        assert!(interval(&[1.0], 0.95).is_err());
        assert!(interval(&[1.0, f64::INFINITY, f64::INFINITY], 0.95).is_err());
        assert!(interval(&[1.0, f64::NAN, 2.0], 0.95).is_err());
    }

    #[test]
    fn rounds_are_deterministic() {
        let cfg = BootstrapConfig { k: 2, seed: 7, ..Default::default() };
        let a = bootstrap_rounds(&small_set(), &cfg).unwrap();
        let b = bootstrap_rounds(&small_set(), &cfg).unwrap();
        assert_eq!(a.rounds, b.rounds);
        assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn identical_scores_give_half_auc() {
        let recs = (0..20).map(|i| ScoreRecord::new(format!("s{i}"), 1.0, i % 2 == 0)).collect();
        let set = ScoreRecordSet::new(recs, Metadata::new()).unwrap();
        let cfg = BootstrapConfig { k: 50, seed: 1, ..Default::default() };
        let r = bootstrap_rounds(&set, &cfg).unwrap();
        assert!(r.rounds.iter().filter_map(|m| m.auc).all(|a| a == 0.5));
    }

    #[test]
    fn without_replacement_is_degenerate() {
        let recs = (0..40).map(|i| ScoreRecord::new(format!("s{i}"), f64::from(i) * 0.1, i % 3 == 0)).collect();
        let set = ScoreRecordSet::new(recs, Metadata::new()).unwrap();
        let cfg = BootstrapConfig { k: 20, seed: 3, resampling: Resampling::WithoutReplacement, ..Default::default() };
        let audit = bootstrap_audit(&set, &cfg).unwrap();
        assert_eq!(audit.auc.lower, audit.auc.upper);
        assert_eq!(audit.auc.lower, audit.auc.point);
    }

    #[test]
    fn config_validation() {
        let bad = BootstrapConfig { k: 1, ..Default::default() };
        assert!(bootstrap_rounds(&small_set(), &bad).is_err());
        let bad = BootstrapConfig { confidence: 1.0, ..Default::default() };
        assert!(bootstrap_rounds(&small_set(), &bad).is_err());
    }

    #[test]
    fn final_epsilon_rules() {
        let f = final_empirical_epsilon(&[(0.3, (1.6004, 2.3769))]).unwrap();
        assert_eq!((f.threshold, f.epsilon), (0.3, 2.3769));
        assert_eq!(f.conservative_epsilon, Some(1.6004));

        let f = final_empirical_epsilon(&[(0.1, (0.0, 1.0)), (0.2, (0.5, 2.0))]).unwrap();
        assert_eq!(f.epsilon, 2.0);

        let f = final_empirical_epsilon(&[(0.1, (-0.9, -0.3)), (0.2, (-0.7524, -0.1))]).unwrap();
        assert_eq!((f.threshold, f.epsilon), (0.2, -0.1));

        let f = final_empirical_epsilon(&[(0.5, (0.0, 1.0)), (0.2, (0.0, 1.0))]).unwrap();
        assert_eq!(f.threshold, 0.2);

        let f = final_empirical_epsilon(&[(0.5, (0.0, f64::INFINITY)), (0.2, (0.0, 1.0))]).unwrap();
        assert_eq!(f.threshold, 0.2);

        assert!(final_empirical_epsilon(&[(0.5, (f64::NEG_INFINITY, f64::INFINITY))]).is_err());
        assert!(final_empirical_epsilon(&[]).is_err());
    }
}
