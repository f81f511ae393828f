//! Likelihood-ratio membership inference (LiRA).
//!
//! For each sample the shadow-model logits are split by the membership mask
//! into an "in" and an "out" population, a Gaussian is fitted to each, and the
//! target model's logit is scored against them. The target column never
//! contributes to the fits.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::observation::{LogitPanel, Metadata, ScoreRecord, ScoreRecordSet};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiraMode {
    /// Shadow models both including and excluding each sample.
    Online,
    /// Only shadow models that exclude the sample are used.
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Each sample's fit uses its own standard deviation.
    PerSample,
    /// Each sample keeps its own mean; the standard deviation is pooled over
    /// all samples (separately for the in and out side).
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiraConfig {
    pub mode: LiraMode,
    pub variance_mode: VarianceMode,
    pub std_floor: f64,
    pub confidence_clamp: f64,
}

impl Default for LiraConfig {
    fn default() -> Self {
        Self {
            mode: LiraMode::Online,
            variance_mode: VarianceMode::Global,
            std_floor: 1e-6,
            confidence_clamp: 1e-6,
        }
    }
}

impl LiraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.std_floor.is_nan() || self.std_floor <= 0.0 {
            return Err(AuditError::config(format!("std_floor must be positive, got {}", self.std_floor)));
        }
        if !(self.confidence_clamp > 0.0 && self.confidence_clamp < 0.5) {
            return Err(AuditError::config(format!(
                "confidence_clamp must lie in (0, 0.5), got {}",
                self.confidence_clamp
            )));
        }
        Ok(())
    }

    fn min_per_side(&self) -> usize {
        match self.variance_mode {
            VarianceMode::PerSample => 2,
            VarianceMode::Global => 1,
        }
    }
}

/// Log-odds of a confidence, after clamping it into `[clamp, 1 - clamp]`.
pub fn logit_transform(confidence: f64, clamp: f64) -> f64 {
    let p = confidence.clamp(clamp, 1.0 - clamp);
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: f64,
    pub std: f64,
}

impl GaussianFit {
    /// Mean and population standard deviation, with the deviation floored.
    pub fn fit(values: &[f64], std_floor: f64) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt().max(std_floor),
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Non-target logits of `sample`, split by whether the model trained on it.
fn split_row(panel: &LogitPanel, sample: usize) -> (Vec<f64>, Vec<f64>) {
    let t = panel.target_index();
    let mut ins = Vec::new();
    let mut outs = Vec::new();
    for (j, (&l, &m)) in panel.logit_row(sample).iter().zip(panel.mask_row(sample)).enumerate() {
        if j == t {
            continue;
        }
        if m {
            ins.push(l);
        } else {
            outs.push(l);
        }
    }
    (ins, outs)
}

fn sum_sq_dev(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// Panel-wide state shared by every per-sample score.
#[derive(Debug, Clone, Copy)]
struct Pooled {
    in_std: Option<f64>,
    out_std: Option<f64>,
}

impl Pooled {
    fn compute(panel: &LogitPanel, cfg: &LiraConfig) -> Self {
        if cfg.variance_mode != VarianceMode::Global {
            return Self { in_std: None, out_std: None };
        }
        let (mut ss_in, mut n_in, mut ss_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..panel.n_samples() {
            let (ins, outs) = split_row(panel, i);
            if !ins.is_empty() {
                ss_in += sum_sq_dev(&ins);
                n_in += ins.len();
            }
            if !outs.is_empty() {
                ss_out += sum_sq_dev(&outs);
                n_out += outs.len();
            }
        }
        let pooled = |ss: f64, n: usize| (n > 0).then(|| (ss / n as f64).sqrt().max(cfg.std_floor));
        Self {
            in_std: pooled(ss_in, n_in),
            out_std: pooled(ss_out, n_out),
        }
    }

    fn fit(&self, values: &[f64], pooled_std: Option<f64>, floor: f64) -> GaussianFit {
        let mut g = GaussianFit::fit(values, floor);
        if let Some(s) = pooled_std {
            g.std = s;
        }
        g
    }
}

fn check_count(sample: usize, side: &str, have: usize, need: usize, cfg: &LiraConfig) -> Result<()> {
    if have < need {
        return Err(AuditError::InsufficientModels {
            sample,
            message: format!(
                "{have} {side}-model(s) among shadow columns, {need} required for {:?} variance",
                cfg.variance_mode
            ),
        });
    }
    Ok(())
}

fn online_with(panel: &LogitPanel, sample: usize, cfg: &LiraConfig, pooled: &Pooled) -> Result<f64> {
    let (ins, outs) = split_row(panel, sample);
    let need = cfg.min_per_side();
    check_count(sample, "in", ins.len(), need, cfg)?;
    check_count(sample, "out", outs.len(), need, cfg)?;
    let fin = pooled.fit(&ins, pooled.in_std, cfg.std_floor);
    let fout = pooled.fit(&outs, pooled.out_std, cfg.std_floor);
    let phi = panel.logit(sample, panel.target_index());
    Ok(fin.log_pdf(phi) - fout.log_pdf(phi))
}

fn offline_with(panel: &LogitPanel, sample: usize, cfg: &LiraConfig, pooled: &Pooled) -> Result<f64> {
    let (_, outs) = split_row(panel, sample);
    check_count(sample, "out", outs.len(), cfg.min_per_side(), cfg)?;
    let fout = pooled.fit(&outs, pooled.out_std, cfg.std_floor);
    let phi = panel.logit(sample, panel.target_index());
    Ok((phi - fout.mean) / fout.std)
}

/// Log-likelihood ratio `log N(φ*; in) - log N(φ*; out)` for one sample.
pub fn lira_online_score(panel: &LogitPanel, sample: usize, cfg: &LiraConfig) -> Result<f64> {
    cfg.validate()?;
    online_with(panel, sample, cfg, &Pooled::compute(panel, cfg))
}

/// One-sided z-score `(φ* - μ_out) / σ_out` for one sample.
pub fn lira_offline_score(panel: &LogitPanel, sample: usize, cfg: &LiraConfig) -> Result<f64> {
    cfg.validate()?;
    offline_with(panel, sample, cfg, &Pooled::compute(panel, cfg))
}

/// Scores every sample of the panel against the target model.
pub fn run_lira(panel: &LogitPanel, cfg: &LiraConfig) -> Result<ScoreRecordSet> {
    cfg.validate()?;
    let pooled = Pooled::compute(panel, cfg);
    let scores = par::try_map_range(panel.n_samples(), |i| match cfg.mode {
        LiraMode::Online => online_with(panel, i, cfg, &pooled),
        LiraMode::Offline => offline_with(panel, i, cfg, &pooled),
    })?;
    let records = scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| ScoreRecord::new(panel.sample_id(i), s, panel.true_membership()[i]))
        .collect();

    let mut meta = Metadata::new();
    meta.insert("attack".into(), "lira".into());
    meta.insert("mode".into(), format!("{:?}", cfg.mode).to_lowercase());
    meta.insert(
        "variance_mode".into(),
        match cfg.variance_mode {
            VarianceMode::PerSample => "per_sample",
            VarianceMode::Global => "global",
        }
        .into(),
    );
    meta.insert("std_floor".into(), cfg.std_floor.to_string());
    meta.insert("confidence_clamp".into(), cfg.confidence_clamp.to_string());
    if let Some(s) = pooled.in_std {
        meta.insert("pooled_in_std".into(), s.to_string());
    }
    if let Some(s) = pooled.out_std {
        meta.insert("pooled_out_std".into(), s.to_string());
    }
    ScoreRecordSet::new(records, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a panel from rows of (logit, in-model?) with column 0 as target.
    fn panel(rows: &[&[(f64, bool)]]) -> LogitPanel {
        let k = rows[0].len();
        let logits = rows.iter().flat_map(|r| r.iter().map(|c| c.0)).collect();
        let mask = rows.iter().flat_map(|r| r.iter().map(|c| c.1)).collect();
        let truth = rows.iter().map(|r| r[0].1).collect();
        LogitPanel::new(rows.len(), k, logits, mask, 0, truth, Metadata::new()).unwrap()
    }

    #[test]
    fn logit_examples() {
        assert_eq!(logit_transform(0.5, 1e-6), 0.0);
        assert!((logit_transform(0.9, 1e-6) - 2.1972245773362196).abs() < 1e-12);
        assert!((logit_transform(1.0, 1e-6) - ((1.0 - 1e-6) / 1e-6f64).ln()).abs() < 1e-9);
        assert!((logit_transform(1.0, 1e-6) - 13.8155).abs() < 1e-4);
        assert!(logit_transform(0.0, 1e-6).is_finite());
    }

    #[test]
    fn identical_hypotheses_score_zero() {
        let p = panel(&[&[(0.7, true), (0.0, true), (2.0, true), (0.0, false), (2.0, false)]]);
        let cfg = LiraConfig { variance_mode: VarianceMode::PerSample, ..Default::default() };
        assert_eq!(lira_online_score(&p, 0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_online_score() {
        let p = panel(&[&[(1.0, true), (0.0, true), (2.0, true), (-2.0, false), (0.0, false)]]);
        let s = lira_online_score(&p, 0, &LiraConfig::default()).unwrap();
        assert!((s - 2.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn offline_examples() {
        let cfg = LiraConfig { mode: LiraMode::Offline, variance_mode: VarianceMode::PerSample, ..Default::default() };
        let p = panel(&[&[(0.0, false), (-1.0, false), (0.0, false), (1.0, false)]]);
        assert_eq!(lira_offline_score(&p, 0, &cfg).unwrap(), 0.0);
        let p = panel(&[&[(1.0, false), (-1.0, false), (0.0, false), (1.0, false)]]);
        let z = lira_offline_score(&p, 0, &cfg).unwrap();
        assert!((z - 1.5f64.sqrt()).abs() < 1e-12);
        assert!((z - 1.2247).abs() < 1e-4);
        let p = panel(&[&[(2.0, false), (-1.0, false), (1.0, false)]]);
        assert!((lira_offline_score(&p, 0, &cfg).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn insufficient_models() {
        let p = panel(&[&[(0.3, true), (0.1, false)]]);
        let online = LiraConfig::default();
        assert!(matches!(
            lira_online_score(&p, 0, &online),
            Err(AuditError::InsufficientModels { sample: 0, .. })
        ));
        let offline = LiraConfig { mode: LiraMode::Offline, ..Default::default() };
        assert!(lira_offline_score(&p, 0, &offline).is_ok());
        let strict = LiraConfig { variance_mode: VarianceMode::PerSample, ..offline };
        assert!(run_lira(&p, &strict).is_err());
    }

    #[test]
    fn config_bounds() {
        assert!(LiraConfig { std_floor: 0.0, ..Default::default() }.validate().is_err());
        assert!(LiraConfig { confidence_clamp: 0.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn flat_panel_gives_flat_scores() {
        let rows: Vec<Vec<(f64, bool)>> = (0..6)
            .map(|i| vec![(1.0, i % 2 == 0), (1.0, true), (1.0, true), (1.0, false), (1.0, false)])
            .collect();
        let refs: Vec<&[(f64, bool)]> = rows.iter().map(Vec::as_slice).collect();
        let set = run_lira(&panel(&refs), &LiraConfig::default()).unwrap();
        let first = set.records()[0].score;
        assert!(set.records().iter().all(|r| r.score == first));
        assert_eq!(crate::roc::auc(&set).unwrap(), 0.5);
    }
}
