//! Seeded generators with analytically known ground truth.
//!
//! Every generator is a pure function of its arguments. Random draws come
//! from [`stream_rng`] so a fixed seed reproduces the output bit for bit.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::extraction::SamplingScheme;
use crate::observation::{LogitPanel, Metadata, ScoreRecord, ScoreRecordSet, TokenId, TokenStep, TokenTrace};
use crate::rng::stream_rng;
use crate::stats::{gaussian_mechanism_epsilon, gaussian_shift_auc};

fn normal<R: Rng>(rng: &mut R, mean: f64, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sigma * z
}

fn meta(pairs: &[(&str, String)]) -> Metadata {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairSpec {
    pub m_per_class: usize,
    pub shift: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl GaussianPairSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m_per_class == 0 {
            return Err(AuditError::config("m_per_class must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(AuditError::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !self.shift.is_finite() {
            return Err(AuditError::config("shift must be finite"));
        }
        Ok(())
    }
}

/// Members `N(shift, σ²)`, non-members `N(0, σ²)`; members come first.
pub fn gen_shifted_gaussian_scores(spec: &GaussianPairSpec) -> Result<ScoreRecordSet> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0);
    let m = spec.m_per_class;
    let mut records = Vec::with_capacity(2 * m);
    for i in 0..2 * m {
        let member = i < m;
        let mean = if member { spec.shift } else { 0.0 };
        records.push(ScoreRecord::new(format!("g-{i:06}"), normal(&mut rng, mean, spec.sigma), member));
    }
    let metadata = meta(&[
        ("generator", "shifted_gaussian".into()),
        ("m_per_class", m.to_string()),
        ("shift", spec.shift.to_string()),
        ("sigma", spec.sigma.to_string()),
        ("seed", spec.seed.to_string()),
        ("analytic_auc", gaussian_shift_auc(spec.shift, spec.sigma).to_string()),
    ]);
    ScoreRecordSet::new(records, metadata)
}

/// Probability that randomized response reports the truth.
pub fn rr_truth_prob(epsilon0: f64) -> f64 {
    if epsilon0 == f64::INFINITY {
        1.0
    } else {
        1.0 / (1.0 + (-epsilon0).exp())
    }
}

/// `m` canaries with fair-coin membership; each score is the membership bit
/// reported through ε₀-randomized response.
pub fn gen_randomized_response_guesses(m: usize, epsilon0: f64, seed: u64) -> Result<ScoreRecordSet> {
    if m == 0 {
        return Err(AuditError::config("m must be at least 1"));
    }
    if epsilon0.is_nan() || epsilon0 < 0.0 {
        return Err(AuditError::config(format!("epsilon0 must be >= 0, got {epsilon0}")));
    }
    let truth = rr_truth_prob(epsilon0);
    let mut rng = stream_rng(seed, 0);
    let records = (0..m)
        .map(|i| {
            let member: bool = rng.random_bool(0.5);
            let honest = rng.random::<f64>() < truth;
            let report = if honest { member } else { !member };
            ScoreRecord::new(format!("rr-{i:06}"), if report { 1.0 } else { 0.0 }, member)
        })
        .collect();
    let metadata = meta(&[
        ("generator", "randomized_response".into()),
        ("m", m.to_string()),
        ("epsilon0", epsilon0.to_string()),
        ("seed", seed.to_string()),
    ]);
    ScoreRecordSet::new(records, metadata)
}

/// Likelihood-ratio scores of a sensitivity-1 Gaussian mechanism: members
/// `N(μ, 1)`, non-members `N(0, 1)` with `μ = 1/σ_noise`. The first `⌈m/2⌉`
/// records are members.
pub fn gen_gaussian_mechanism_scores(m: usize, sigma_noise: f64, delta: f64, seed: u64) -> Result<ScoreRecordSet> {
    if m < 2 {
        return Err(AuditError::config("m must be at least 2"));
    }
    if sigma_noise.is_nan() || sigma_noise <= 0.0 {
        return Err(AuditError::config(format!("sigma_noise must be positive, got {sigma_noise}")));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(AuditError::config(format!("delta {delta} outside [0, 1)")));
    }
    let mu = 1.0 / sigma_noise;
    let members = m.div_ceil(2);
    let mut rng = stream_rng(seed, 0);
    let records = (0..m)
        .map(|i| {
            let member = i < members;
            let mean = if member { mu } else { 0.0 };
            ScoreRecord::new(format!("gm-{i:06}"), normal(&mut rng, mean, 1.0), member)
        })
        .collect();
    let metadata = meta(&[
        ("generator", "gaussian_mechanism".into()),
        ("m", m.to_string()),
        ("sigma_noise", sigma_noise.to_string()),
        ("mu", mu.to_string()),
        ("delta", delta.to_string()),
        ("seed", seed.to_string()),
        ("analytic_epsilon", crate::extreal::format(gaussian_mechanism_epsilon(mu, delta))),
    ]);
    ScoreRecordSet::new(records, metadata)
}

/// How sample-to-model membership is assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskDesign {
    /// Each sample is a member of a uniformly chosen half of the models
    /// (`⌊N/2⌋` or `⌈N/2⌉` alternately).
    #[default]
    Balanced,
    /// Independent fair coin per (sample, model).
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitPanelSpec {
    pub n_samples: usize,
    pub n_models: usize,
    pub mu_in: f64,
    pub mu_out: f64,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub design: MaskDesign,
}

impl LogitPanelSpec {
    pub fn new(n_samples: usize, n_models: usize, mu_in: f64, mu_out: f64, sigma: f64, seed: u64) -> Self {
        Self {
            n_samples,
            n_models,
            mu_in,
            mu_out,
            sigma,
            seed,
            design: MaskDesign::Balanced,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_models < 2 {
            return Err(AuditError::config("a panel needs at least 2 models"));
        }
        if self.n_samples == 0 {
            return Err(AuditError::config("a panel needs at least 1 sample"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(AuditError::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.mu_in.is_finite() && self.mu_out.is_finite()) {
            return Err(AuditError::config("mu_in and mu_out must be finite"));
        }
        Ok(())
    }
}

/// Synthetic shadow-model panel. Model 0 is the target.
pub fn gen_logit_panel(spec: &LogitPanelSpec) -> Result<LogitPanel> {
    spec.validate()?;
    let (n, k) = (spec.n_samples, spec.n_models);
    let mut rng = stream_rng(spec.seed, 0);
    let mut mask = vec![false; n * k];
    let mut cols: Vec<usize> = (0..k).collect();
    for i in 0..n {
        let row = &mut mask[i * k..(i + 1) * k];
        match spec.design {
            MaskDesign::Balanced => {
                // Odd model counts alternate which side gets the extra model.
                let ins = if k % 2 == 0 { k / 2 } else { k / 2 + (i % 2) };
                cols.shuffle(&mut rng);
                for &c in &cols[..ins] {
                    row[c] = true;
                }
            }
            MaskDesign::Independent => {
                for cell in row.iter_mut() {
                    *cell = rng.random_bool(0.5);
                }
            }
        }
    }
    let logits = mask
        .iter()
        .map(|&m| normal(&mut rng, if m { spec.mu_in } else { spec.mu_out }, spec.sigma))
        .collect();
    let truth = (0..n).map(|i| mask[i * k]).collect();
    let metadata = meta(&[
        ("generator", "logit_panel".into()),
        ("mu_in", spec.mu_in.to_string()),
        ("mu_out", spec.mu_out.to_string()),
        ("sigma", spec.sigma.to_string()),
        ("seed", spec.seed.to_string()),
        ("design", format!("{:?}", spec.design).to_lowercase()),
        ("analytic_auc", gaussian_shift_auc(spec.mu_in - spec.mu_out, spec.sigma).to_string()),
    ]);
    LogitPanel::new(n, k, logits, mask, 0, truth, metadata)
}

pub const TOY_MAX_VOCAB: usize = 16;
pub const TOY_MAX_LENGTH: usize = 8;

/// First-order Markov language model over a tiny vocabulary: a start
/// distribution and a `V × V` transition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLm {
    pub start: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
}

fn random_simplex<R: Rng>(rng: &mut R, v: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..v).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

impl ToyLm {
    pub fn random(vocab_size: usize, seed: u64) -> Result<Self> {
        if !(2..=TOY_MAX_VOCAB).contains(&vocab_size) {
            return Err(AuditError::config(format!(
                "toy vocabulary must be 2..={TOY_MAX_VOCAB}, got {vocab_size}"
            )));
        }
        let mut rng = stream_rng(seed, 0);
        let start = random_simplex(&mut rng, vocab_size);
        let transitions = (0..vocab_size).map(|_| random_simplex(&mut rng, vocab_size)).collect();
        Ok(Self { start, transitions })
    }

    pub fn vocab_size(&self) -> usize {
        self.start.len()
    }

    /// Raw next-token distribution after `prefix`.
    pub fn next_dist(&self, prefix: &[TokenId]) -> &[f64] {
        match prefix.last() {
            None => &self.start,
            Some(&t) => &self.transitions[t as usize],
        }
    }

    /// Trace of `target` carrying the full sorted distributions.
    pub fn trace(&self, id: Option<String>, target: &[TokenId]) -> Result<TokenTrace> {
        let steps = (0..target.len())
            .map(|i| {
                let dist = self.next_dist(&target[..i]);
                let order = sorted_order(dist);
                let tok = target[i];
                let rank = order.iter().position(|&j| j as TokenId == tok).expect("token in vocabulary") + 1;
                TokenStep {
                    target_token: tok,
                    target_prob: dist[tok as usize],
                    target_rank: rank,
                    sorted_probs: order.iter().map(|&j| dist[j]).collect(),
                }
            })
            .collect();
        let mut t = TokenTrace::new(id, steps, 1.0 - 1e-9)?;
        t.vocab_size = Some(self.vocab_size());
        Ok(t)
    }

    /// Draws one sequence of `length` tokens under `scheme`.
    pub fn sample<R: Rng>(&self, scheme: &SamplingScheme, length: usize, rng: &mut R) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(length);
        for _ in 0..length {
            let dist = effective_dist(self.next_dist(&out), scheme);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = dist.len() - 1;
            for (j, &q) in dist.iter().enumerate() {
                acc += q;
                if u < acc {
                    pick = j;
                    break;
                }
            }
            // Rounding can leave the last positive entry unselected by `u < acc`.
            while dist[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            out.push(pick as TokenId);
        }
        out
    }
}

/// Token indices ordered by probability (descending), ties by index.
fn sorted_order(dist: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    order
}

/// Full-vocabulary distribution the decoder actually samples from.
/// Greedy picks the lowest-index maximum.
pub fn effective_dist(dist: &[f64], scheme: &SamplingScheme) -> Vec<f64> {
    let order = sorted_order(dist);
    let mut out = vec![0.0; dist.len()];
    match *scheme {
        SamplingScheme::Greedy => out[order[0]] = 1.0,
        SamplingScheme::Temperature { t } => {
            let w: Vec<f64> = dist.iter().map(|q| q.powf(1.0 / t)).collect();
            let s: f64 = w.iter().sum();
            out.iter_mut().zip(w).for_each(|(o, x)| *o = x / s);
        }
        SamplingScheme::TopK { k } => {
            let keep = &order[..k.min(order.len())];
            let s: f64 = keep.iter().map(|&j| dist[j]).sum();
            keep.iter().for_each(|&j| out[j] = dist[j] / s);
        }
        SamplingScheme::TopP { p } => {
            let mut s = 0.0;
            let mut size = order.len();
            for (n, &j) in order.iter().enumerate() {
                s += dist[j];
                if s > p {
                    size = n + 1;
                    break;
                }
            }
            let keep = &order[..size];
            let s: f64 = keep.iter().map(|&j| dist[j]).sum();
            keep.iter().for_each(|&j| out[j] = dist[j] / s);
        }
    }
    out
}

/// Toy model plus `n_traces` targets sampled from it at temperature 1, each
/// with an exact (full-coverage) trace.
pub fn gen_toy_lm_traces(vocab_size: usize, length: usize, n_traces: usize, seed: u64) -> Result<(Vec<TokenTrace>, ToyLm)> {
    if !(1..=TOY_MAX_LENGTH).contains(&length) {
        return Err(AuditError::config(format!("toy length must be 1..={TOY_MAX_LENGTH}, got {length}")));
    }
    if n_traces == 0 {
        return Err(AuditError::config("n_traces must be at least 1"));
    }
    let lm = ToyLm::random(vocab_size, seed)?;
    let mut rng = stream_rng(seed, 1);
    let raw = SamplingScheme::Temperature { t: 1.0 };
    let traces = (0..n_traces)
        .map(|i| {
            let z = lm.sample(&raw, length, &mut rng);
            lm.trace(Some(format!("toy-{i:04}")), &z)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((traces, lm))
}
