//! Relative membership inference (RMIA).
//!
//! A canary `x` is compared against population samples `z` through the ratio
//! of ratios `L(x, z) = (p(x)/P̄(x)) / (p(z)/P̄(z))`, where `p` is the target
//! model's probability and `P̄` the out-model average interpolated by `α`
//! toward the in-model gap. The score is the fraction of `z` with
//! `L(x, z) >= γ`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::observation::{LogitPanel, Metadata, ScoreRecord, ScoreRecordSet};
use crate::par;
use crate::rng::stream_rng;
use crate::roc::ClassScores;

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum AlphaSetting {
    Fixed(f64),
    /// Pick from the grid by leave-one-shadow-out surrogate AUC.
    Auto(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmiaConfig {
    pub gamma: f64,
    pub alpha: AlphaSetting,
    pub population_indices: Vec<usize>,
    pub prob_floor: f64,
}

impl RmiaConfig {
    pub fn new(population_indices: Vec<usize>) -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            alpha: AlphaSetting::Fixed(DEFAULT_ALPHA),
            population_indices,
            prob_floor: DEFAULT_PROB_FLOOR,
        }
    }

    fn validate(&self, panel: &LogitPanel) -> Result<()> {
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(AuditError::config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0) {
            return Err(AuditError::config(format!("prob_floor {} outside (0, 1)", self.prob_floor)));
        }
        match &self.alpha {
            AlphaSetting::Fixed(a) => check_alpha(*a)?,
            AlphaSetting::Auto(grid) => {
                if grid.is_empty() {
                    return Err(AuditError::config("alpha grid is empty"));
                }
                grid.iter().try_for_each(|a| check_alpha(*a))?;
            }
        }
        if self.population_indices.is_empty() {
            return Err(AuditError::config("population is empty"));
        }
        let mut seen = BTreeSet::new();
        for &z in &self.population_indices {
            if z >= panel.n_samples() {
                return Err(AuditError::config(format!(
                    "population index {z} out of range for {} samples",
                    panel.n_samples()
                )));
            }
            if !seen.insert(z) {
                return Err(AuditError::config(format!("population index {z} repeated")));
            }
        }
        if seen.len() == panel.n_samples() {
            return Err(AuditError::config("population covers every sample; nothing left to score"));
        }
        Ok(())
    }
}

fn check_alpha(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(AuditError::config(format!("alpha {a} outside [0, 1]")));
    }
    Ok(())
}

/// Draws `size` population rows without replacement.
pub fn sample_population(n_samples: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size == 0 || size >= n_samples {
        return Err(AuditError::config(format!(
            "population size must lie in [1, {}), got {size}",
            n_samples
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut v = rand::seq::index::sample(&mut rng, n_samples, size).into_vec();
    v.sort_unstable();
    Ok(v)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Target-label probability recovered from a logit, floored at `prob_floor`.
pub fn target_prob(panel: &LogitPanel, sample: usize, model: usize, prob_floor: f64) -> f64 {
    sigmoid(panel.logit(sample, model)).max(prob_floor)
}

/// Mean probability over models that exclude `sample`, ignoring the columns
/// in `skip`. `None` if no such model exists.
fn out_average(panel: &LogitPanel, sample: usize, skip: &[usize], prob_floor: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 0..panel.n_models() {
        if skip.contains(&j) || panel.is_member(sample, j) {
            continue;
        }
        sum += target_prob(panel, sample, j, prob_floor);
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Mean target probability over the shadow models that did not train on `sample`.
pub fn average_out_prob(panel: &LogitPanel, sample: usize, prob_floor: f64) -> Result<f64> {
    out_average(panel, sample, &[panel.target_index()], prob_floor).ok_or_else(|| {
        AuditError::InsufficientModels {
            sample,
            message: "no shadow model excludes this sample".to_string(),
        }
    })
}

/// `((1 + α) p_out + (1 - α)) / 2`, clamped to `[prob_floor, 1]`.
pub fn interpolated_marginal(p_out: f64, alpha: f64, prob_floor: f64) -> f64 {
    (((1.0 + alpha) * p_out + (1.0 - alpha)) / 2.0).clamp(prob_floor, 1.0)
}

/// `p(x) / P̄(x)` for the chosen attacked column, skipping `skip` columns
/// when forming the out-average.
fn likelihood_ratio(panel: &LogitPanel, sample: usize, attacked: usize, skip: &[usize], alpha: f64, floor: f64) -> Option<f64> {
    let p_out = out_average(panel, sample, skip, floor)?;
    Some(target_prob(panel, sample, attacked, floor) / interpolated_marginal(p_out, alpha, floor))
}

fn ratio_for(panel: &LogitPanel, sample: usize, alpha: f64, floor: f64) -> Result<f64> {
    let t = panel.target_index();
    likelihood_ratio(panel, sample, t, &[t], alpha, floor).ok_or_else(|| AuditError::InsufficientModels {
        sample,
        message: "no shadow model excludes this sample".to_string(),
    })
}

/// `L(x, z)`; `L(x, z) * L(z, x) = 1` up to rounding.
pub fn pairwise_ratio(panel: &LogitPanel, x: usize, z: usize, alpha: f64, prob_floor: f64) -> Result<f64> {
    Ok(ratio_for(panel, x, alpha, prob_floor)? / ratio_for(panel, z, alpha, prob_floor)?)
}

/// Fraction of `population_ratios` values `r_z` with `r_x / r_z >= gamma`.
/// `sorted_population` must be sorted ascending.
fn dominated_fraction(r_x: f64, sorted_population: &[f64], gamma: f64) -> f64 {
    // r_x / r_z is non-increasing in r_z, so the passing z form a prefix.
    let passing = sorted_population.partition_point(|&r_z| r_x / r_z >= gamma);
    passing as f64 / sorted_population.len() as f64
}

fn sorted_ratios(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v
}

/// RMIA score of sample `x` under a fixed `alpha`.
pub fn rmia_score_with_alpha(panel: &LogitPanel, x: usize, alpha: f64, cfg: &RmiaConfig) -> Result<f64> {
    if cfg.population_indices.is_empty() {
        return Err(AuditError::config("population is empty"));
    }
    let r_x = ratio_for(panel, x, alpha, cfg.prob_floor)?;
    let pop = cfg
        .population_indices
        .iter()
        .map(|&z| ratio_for(panel, z, alpha, cfg.prob_floor))
        .collect::<Result<Vec<_>>>()?;
    Ok(dominated_fraction(r_x, &sorted_ratios(pop.into_iter()), cfg.gamma))
}

/// RMIA score of sample `x`; a fixed `alpha` is required here.
pub fn rmia_score(panel: &LogitPanel, x: usize, cfg: &RmiaConfig) -> Result<f64> {
    match cfg.alpha {
        AlphaSetting::Fixed(a) => rmia_score_with_alpha(panel, x, a, cfg),
        AlphaSetting::Auto(_) => Err(AuditError::config("rmia_score needs a fixed alpha; run autotune_alpha first")),
    }
}

/// Mean AUC over surrogate attacks in which each shadow model plays the
/// target. `None` if no surrogate could be evaluated.
fn surrogate_auc(panel: &LogitPanel, alpha: f64, cfg: &RmiaConfig, canaries: &[usize]) -> Option<f64> {
    let t = panel.target_index();
    let mut aucs = Vec::new();
    for s in (0..panel.n_models()).filter(|&j| j != t) {
        let skip = [t, s];
        let ratio = |i: usize| likelihood_ratio(panel, i, s, &skip, alpha, cfg.prob_floor);
        let pop = sorted_ratios(cfg.population_indices.iter().filter_map(|&z| ratio(z)));
        if pop.is_empty() {
            continue;
        }
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for &x in canaries {
            if let Some(r) = ratio(x) {
                scores.push(dominated_fraction(r, &pop, cfg.gamma));
                labels.push(panel.is_member(x, s));
            }
        }
        if let Some(cs) = ClassScores::from_columns(&scores, &labels) {
            aucs.push(cs.auc());
        }
    }
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

fn canaries(panel: &LogitPanel, cfg: &RmiaConfig) -> Vec<usize> {
    let pop: BTreeSet<usize> = cfg.population_indices.iter().copied().collect();
    (0..panel.n_samples()).filter(|i| !pop.contains(i)).collect()
}

/// Grid value of `α` with the best mean surrogate AUC; ties go to the smaller `α`.
pub fn autotune_alpha(panel: &LogitPanel, candidate_grid: &[f64], cfg: &RmiaConfig) -> Result<f64> {
    if candidate_grid.is_empty() {
        return Err(AuditError::config("alpha grid is empty"));
    }
    candidate_grid.iter().try_for_each(|a| check_alpha(*a))?;
    if panel.n_models() < 3 {
        return Err(AuditError::Analysis(format!(
            "alpha auto-tuning needs at least 2 shadow models, panel has {}",
            panel.n_models() - 1
        )));
    }
    let mut grid = candidate_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let canaries = canaries(panel, cfg);
    let aucs = par::map_slice(&grid, |&a| surrogate_auc(panel, a, cfg, &canaries));
    let mut best: Option<(f64, f64)> = None;
    for (&a, auc) in grid.iter().zip(aucs) {
        let Some(auc) = auc else { continue };
        if best.is_none_or(|(_, b)| auc > b) {
            best = Some((a, auc));
        }
    }
    best.map(|b| b.0).ok_or_else(|| {
        AuditError::Analysis("no surrogate target had both members and non-members to evaluate".to_string())
    })
}

/// Scores every non-population sample against the target model.
pub fn run_rmia(panel: &LogitPanel, cfg: &RmiaConfig) -> Result<ScoreRecordSet> {
    cfg.validate(panel)?;
    let (alpha, tuned) = match &cfg.alpha {
        AlphaSetting::Fixed(a) => (*a, false),
        AlphaSetting::Auto(grid) => (autotune_alpha(panel, grid, cfg)?, true),
    };
    let floor = cfg.prob_floor;
    let pop = cfg
        .population_indices
        .iter()
        .map(|&z| ratio_for(panel, z, alpha, floor))
        .collect::<Result<Vec<_>>>()?;
    let pop = sorted_ratios(pop.into_iter());
    let canaries = canaries(panel, cfg);
    let scores = par::try_map_range(canaries.len(), |k| {
        let x = canaries[k];
        ratio_for(panel, x, alpha, floor).map(|r| dominated_fraction(r, &pop, cfg.gamma))
    })?;
    let records = canaries
        .iter()
        .zip(scores)
        .map(|(&i, s)| ScoreRecord::new(panel.sample_id(i), s, panel.true_membership()[i]))
        .collect();

    let mut meta = Metadata::new();
    meta.insert("attack".into(), "rmia".into());
    meta.insert("gamma".into(), cfg.gamma.to_string());
    meta.insert("alpha".into(), alpha.to_string());
    meta.insert("alpha_auto_tuned".into(), tuned.to_string());
    meta.insert("population_size".into(), cfg.population_indices.len().to_string());
    meta.insert("prob_floor".into(), floor.to_string());
    ScoreRecordSet::new(records, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(rows: &[&[(f64, bool)]]) -> LogitPanel {
        let k = rows[0].len();
        let logits = rows.iter().flat_map(|r| r.iter().map(|c| c.0)).collect();
        let mask = rows.iter().flat_map(|r| r.iter().map(|c| c.1)).collect();
        let truth = rows.iter().map(|r| r[0].1).collect();
        LogitPanel::new(rows.len(), k, logits, mask, 0, truth, Metadata::new()).unwrap()
    }

    #[test]
    fn target_prob_examples() {
        let p = panel(&[&[(0.0, false), (9f64.ln(), false), (-60.0, false)]]);
        assert_eq!(target_prob(&p, 0, 0, 1e-12), 0.5);
        assert!((target_prob(&p, 0, 1, 1e-12) - 0.9).abs() < 1e-15);
        assert_eq!(target_prob(&p, 0, 2, 1e-12), 1e-12);
    }

    #[test]
    fn average_out_examples() {
        let l = |p: f64| (p / (1.0 - p)).ln();
        let p = panel(&[&[(0.0, false), (l(0.4), false), (l(0.9), true)]]);
        assert!((average_out_prob(&p, 0, 1e-12).unwrap() - 0.4).abs() < 1e-15);
        let p = panel(&[&[(0.0, true), (l(0.2), false), (l(0.6), false), (l(0.99), true)]]);
        assert!((average_out_prob(&p, 0, 1e-12).unwrap() - 0.4).abs() < 1e-15);
        let p = panel(&[&[(0.0, false), (1.0, true)]]);
        assert!(average_out_prob(&p, 0, 1e-12).is_err());
    }

    #[test]
    fn marginal_examples() {
        assert_eq!(interpolated_marginal(0.4, 1.0, 1e-12), 0.4);
        assert!((interpolated_marginal(0.4, 0.0, 1e-12) - 0.7).abs() < 1e-15);
        assert!((interpolated_marginal(0.4, 0.3, 1e-12) - 0.61).abs() < 1e-15);
    }

    #[test]
    fn symmetric_ratio_is_one() {
        let p = panel(&[&[(0.3, true), (0.1, false)], &[(0.3, false), (0.1, false)]]);
        assert_eq!(pairwise_ratio(&p, 0, 1, 0.3, 1e-12).unwrap(), 1.0);
    }

    #[test]
    fn score_extremes_and_counts() {
        // sample 0 is the canary; its ratio exceeds rows 1..=3 and not row 4.
        let p = panel(&[
            &[(2.0, true), (0.0, false)],
            &[(-1.0, false), (0.0, false)],
            &[(-2.0, false), (0.0, false)],
            &[(0.0, false), (0.0, false)],
            &[(3.0, false), (0.0, false)],
        ]);
        let mut cfg = RmiaConfig::new(vec![1, 2, 3, 4]);
        assert_eq!(rmia_score(&p, 0, &cfg).unwrap(), 0.75);
        cfg.population_indices = vec![1, 2, 3];
        assert_eq!(rmia_score(&p, 0, &cfg).unwrap(), 1.0);
        cfg.population_indices = vec![4];
        assert_eq!(rmia_score(&p, 0, &cfg).unwrap(), 0.0);
        cfg.population_indices.clear();
        assert!(rmia_score(&p, 0, &cfg).is_err());
    }

    #[test]
    fn population_validation() {
        let p = panel(&[&[(0.0, true), (0.0, false)], &[(0.0, false), (0.0, false)]]);
        assert!(run_rmia(&p, &RmiaConfig::new(vec![0, 1])).is_err());
        assert!(run_rmia(&p, &RmiaConfig::new(vec![1, 1])).is_err());
        assert!(run_rmia(&p, &RmiaConfig::new(vec![5])).is_err());
        assert!(sample_population(10, 10, 0).is_err());
        let pop = sample_population(10, 4, 0).unwrap();
        assert_eq!(pop.len(), 4);
        assert_eq!(pop, sample_population(10, 4, 0).unwrap());
    }

    #[test]
    fn flat_panel_scores_flat() {
        let rows: Vec<Vec<(f64, bool)>> = (0..10)
            .map(|i| vec![(0.5, i % 2 == 0), (0.5, false), (0.5, true), (0.5, false)])
            .collect();
        let refs: Vec<&[(f64, bool)]> = rows.iter().map(Vec::as_slice).collect();
        let p = panel(&refs);
        let set = run_rmia(&p, &RmiaConfig::new(vec![1, 3])).unwrap();
        assert_eq!(set.len(), 8);
        assert_eq!(crate::roc::auc(&set).unwrap(), 0.5);
    }

    #[test]
    fn singleton_grid() {
        let rows: Vec<Vec<(f64, bool)>> = (0..10)
            .map(|i| vec![(0.1 * f64::from(i), i % 2 == 0), (0.2, i % 3 == 0), (0.3, i % 2 == 1), (-0.1, false)])
            .collect();
        let refs: Vec<&[(f64, bool)]> = rows.iter().map(Vec::as_slice).collect();
        let p = panel(&refs);
        let cfg = RmiaConfig::new(vec![0, 1]);
        assert_eq!(autotune_alpha(&p, &[0.3], &cfg).unwrap(), 0.3);
        assert!(autotune_alpha(&p, &[], &cfg).is_err());
    }
}
