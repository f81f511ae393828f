//! Shared data model for attack observations, plus file ingestion.
//!
//! Every loader either returns a fully validated value or an error naming the
//! offending line/record and field. Constructors run the same validation, so
//! a value of any of these types always satisfies its invariants.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

pub type Metadata = BTreeMap<String, String>;

/// Opaque token identifier.
pub type TokenId = u64;

/// Truncation mass assumed for traces that do not declare one.
pub const DEFAULT_COVERAGE_FLOOR: f64 = 0.9999;

const PROB_TOL: f64 = 1e-9;

mod bit {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(de::Error::custom(format!("expected 0 or 1, got {other}"))),
        }
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{de, Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[bool], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for b in v {
                seq.serialize_element(&u8::from(*b))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
            Vec::<u8>::deserialize(d)?
                .into_iter()
                .map(|b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(de::Error::custom(format!("expected 0 or 1, got {other}"))),
                })
                .collect()
        }
    }
}

/// One canary's attack score and its true membership bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    /// Higher means more member-like.
    pub score: f64,
    #[serde(with = "bit")]
    pub membership: bool,
}

impl ScoreRecord {
    pub fn new(sample_id: impl Into<String>, score: f64, membership: bool) -> Self {
        Self {
            sample_id: sample_id.into(),
            score,
            membership,
        }
    }
}

/// An ordered, validated collection of score records.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecordSet {
    records: Vec<ScoreRecord>,
    metadata: Metadata,
}

impl ScoreRecordSet {
    /// Validates finiteness of every score and uniqueness of sample ids.
    pub fn new(records: Vec<ScoreRecord>, metadata: Metadata) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (index, r) in records.iter().enumerate() {
            if !r.score.is_finite() {
                return Err(AuditError::InvalidRecord {
                    index,
                    field: "score",
                    message: format!("non-finite score {}", r.score),
                });
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(AuditError::DuplicateSampleId {
                    index,
                    sample_id: r.sample_id.clone(),
                });
            }
        }
        Ok(Self { records, metadata })
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut Metadata {
        &mut self.metadata
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn member_count(&self) -> usize {
        self.records.iter().filter(|r| r.membership).count()
    }

    pub fn non_member_count(&self) -> usize {
        self.len() - self.member_count()
    }

    /// Errors unless at least one member and one non-member are present.
    pub fn require_both_classes(&self) -> Result<()> {
        let members = self.member_count();
        let non_members = self.len() - members;
        if members == 0 || non_members == 0 {
            return Err(AuditError::ClassAbsent {
                members,
                non_members,
            });
        }
        Ok(())
    }

    /// Scores and membership bits as parallel vectors.
    pub fn columns(&self) -> (Vec<f64>, Vec<bool>) {
        self.records.iter().map(|r| (r.score, r.membership)).unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFormat {
    Jsonl,
    Csv,
}

impl ScoreFormat {
    /// Guesses the format from a file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ScoreFormat::Csv,
            _ => ScoreFormat::Jsonl,
        }
    }
}

#[derive(Deserialize)]
struct RawScoreLine {
    sample_id: String,
    score: serde_json::Value,
    membership: serde_json::Value,
}

fn parse_score_value(v: &serde_json::Value) -> std::result::Result<f64, String> {
    match v {
        serde_json::Value::Number(n) => n.as_f64().ok_or_else(|| format!("unrepresentable number {n}")),
        serde_json::Value::String(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("not a number: {s:?}")),
        other => Err(format!("expected a number, got {other}")),
    }
}

fn parse_membership_value(v: &serde_json::Value) -> std::result::Result<bool, String> {
    match v {
        serde_json::Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
        serde_json::Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
        serde_json::Value::Bool(b) => Ok(*b),
        other => Err(format!("expected 0 or 1, got {other}")),
    }
}

fn parse_membership_str(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("expected 0 or 1, got {other:?}")),
    }
}

fn checked_record(line: usize, sample_id: String, score: std::result::Result<f64, String>, membership: std::result::Result<bool, String>) -> Result<ScoreRecord> {
    let score = score.map_err(|m| AuditError::Parse {
        line,
        message: format!("field `score`: {m}"),
    })?;
    if !score.is_finite() {
        return Err(AuditError::Parse {
            line,
            message: format!("field `score`: non-finite value {score}"),
        });
    }
    let membership = membership.map_err(|m| AuditError::Parse {
        line,
        message: format!("field `membership`: {m}"),
    })?;
    Ok(ScoreRecord {
        sample_id,
        score,
        membership,
    })
}

/// Reads score records from any reader. Line numbers in errors are 1-based.
pub fn read_score_records<R: Read>(reader: R, format: ScoreFormat) -> Result<ScoreRecordSet> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    match format {
        ScoreFormat::Jsonl => {
            for (i, line) in BufReader::new(reader).lines().enumerate() {
                let lineno = i + 1;
                let line = line.map_err(|e| AuditError::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let raw: RawScoreLine = serde_json::from_str(&line).map_err(|e| AuditError::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
                let score = parse_score_value(&raw.score);
                let membership = parse_membership_value(&raw.membership);
                records.push(checked_record(lineno, raw.sample_id, score, membership)?);
                lines.push(lineno);
            }
        }
        ScoreFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
            let headers = rdr
                .headers()
                .map_err(|e| AuditError::Parse {
                    line: 1,
                    message: e.to_string(),
                })?
                .clone();
            let col = |name: &str| {
                headers.iter().position(|h| h == name).ok_or_else(|| AuditError::Parse {
                    line: 1,
                    message: format!("missing column `{name}` (expected header sample_id,score,membership)"),
                })
            };
            let (id_col, score_col, mem_col) = (col("sample_id")?, col("score")?, col("membership")?);
            for row in rdr.records() {
                let row = row.map_err(|e| AuditError::Parse {
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })?;
                let lineno = row.position().map_or(0, |p| p.line() as usize);
                let field = |c: usize| row.get(c).unwrap_or("");
                let score = field(score_col)
                    .parse::<f64>()
                    .map_err(|_| format!("not a number: {:?}", field(score_col)));
                let membership = parse_membership_str(field(mem_col));
                records.push(checked_record(lineno, field(id_col).to_string(), score, membership)?);
                lines.push(lineno);
            }
        }
    }
    // Re-map record indices to line numbers so diagnostics point into the file.
    ScoreRecordSet::new(records, Metadata::new()).map_err(|e| match e {
        AuditError::DuplicateSampleId { index, sample_id } => AuditError::Parse {
            line: lines[index],
            message: format!("duplicate sample_id `{sample_id}`"),
        },
        other => other,
    })
}

pub fn load_score_records(path: impl AsRef<Path>, format: ScoreFormat) -> Result<ScoreRecordSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| AuditError::io(path, e))?;
    let mut set = read_score_records(file, format)?;
    set.metadata_mut()
        .insert("source".to_string(), path.display().to_string());
    Ok(set)
}

pub fn write_score_records<W: Write>(writer: W, set: &ScoreRecordSet, format: ScoreFormat) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    match format {
        ScoreFormat::Jsonl => {
            for r in set.records() {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
        }
        ScoreFormat::Csv => {
            let mut cw = csv::Writer::from_writer(&mut w);
            cw.write_record(["sample_id", "score", "membership"])?;
            for r in set.records() {
                cw.write_record([
                    r.sample_id.clone(),
                    format!("{:?}", r.score),
                    u8::from(r.membership).to_string(),
                ])?;
            }
            cw.flush()?;
        }
    }
    w.flush()
}

pub fn save_score_records(path: impl AsRef<Path>, set: &ScoreRecordSet, format: ScoreFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| AuditError::io(path, e))?;
    write_score_records(file, set, format).map_err(|e| AuditError::io(path, e))
}

/// Samples × models matrix of confidence logits with the training-membership
/// mask for every (sample, model) pair. Column `target_index` is the model
/// under attack; the other columns are shadow models.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitPanel {
    n_samples: usize,
    n_models: usize,
    logits: Vec<f64>,
    mask: Vec<bool>,
    target_index: usize,
    true_membership: Vec<bool>,
    metadata: Metadata,
}

#[derive(Serialize, Deserialize)]
struct LogitPanelJson {
    n_samples: usize,
    n_models: usize,
    target_index: usize,
    logits: Vec<Vec<f64>>,
    membership_mask: Vec<Vec<u8>>,
    #[serde(with = "bit::vec")]
    true_membership: Vec<bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: Metadata,
}

impl LogitPanel {
    /// `logits` and `mask` are row-major, `n_samples * n_models` long.
    pub fn new(
        n_samples: usize,
        n_models: usize,
        logits: Vec<f64>,
        mask: Vec<bool>,
        target_index: usize,
        true_membership: Vec<bool>,
        metadata: Metadata,
    ) -> Result<Self> {
        let cells = n_samples
            .checked_mul(n_models)
            .ok_or_else(|| AuditError::config("panel dimensions overflow"))?;
        if n_samples == 0 || n_models == 0 {
            return Err(AuditError::config("panel needs at least one sample and one model"));
        }
        if logits.len() != cells {
            return Err(AuditError::config(format!(
                "logits has {} cells, expected {n_samples}x{n_models}",
                logits.len()
            )));
        }
        if mask.len() != cells {
            return Err(AuditError::config(format!(
                "membership_mask has {} cells, expected {n_samples}x{n_models}",
                mask.len()
            )));
        }
        if true_membership.len() != n_samples {
            return Err(AuditError::config(format!(
                "true_membership has length {}, expected {n_samples}",
                true_membership.len()
            )));
        }
        if target_index >= n_models {
            return Err(AuditError::config(format!(
                "target_index {target_index} out of range for {n_models} models"
            )));
        }
        for i in 0..n_samples {
            for j in 0..n_models {
                let v = logits[i * n_models + j];
                if !v.is_finite() {
                    return Err(AuditError::InvalidRecord {
                        index: i,
                        field: "logits",
                        message: format!("model {j}: non-finite logit {v}"),
                    });
                }
            }
            if mask[i * n_models + target_index] != true_membership[i] {
                return Err(AuditError::InvalidRecord {
                    index: i,
                    field: "true_membership",
                    message: "disagrees with membership_mask at target_index".to_string(),
                });
            }
        }
        Ok(Self {
            n_samples,
            n_models,
            logits,
            mask,
            target_index,
            true_membership,
            metadata,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn logit(&self, sample: usize, model: usize) -> f64 {
        self.logits[sample * self.n_models + model]
    }

    pub fn logit_row(&self, sample: usize) -> &[f64] {
        &self.logits[sample * self.n_models..(sample + 1) * self.n_models]
    }

    /// Whether `model` was trained on `sample`.
    pub fn is_member(&self, sample: usize, model: usize) -> bool {
        self.mask[sample * self.n_models + model]
    }

    pub fn mask_row(&self, sample: usize) -> &[bool] {
        &self.mask[sample * self.n_models..(sample + 1) * self.n_models]
    }

    pub fn true_membership(&self) -> &[bool] {
        &self.true_membership
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    /// Sample ids used when scores are emitted for this panel.
    pub fn sample_id(&self, sample: usize) -> String {
        format!("sample-{sample:06}")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: LogitPanelJson = serde_json::from_str(s).map_err(|e| AuditError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let (n, k) = (raw.n_samples, raw.n_models);
        if raw.logits.len() != n {
            return Err(AuditError::config(format!(
                "logits has {} rows, expected n_samples = {n}",
                raw.logits.len()
            )));
        }
        if raw.membership_mask.len() != n {
            return Err(AuditError::config(format!(
                "membership_mask has {} rows, expected n_samples = {n}",
                raw.membership_mask.len()
            )));
        }
        let mut logits = Vec::with_capacity(n * k);
        let mut mask = Vec::with_capacity(n * k);
        for (i, (lrow, mrow)) in raw.logits.iter().zip(&raw.membership_mask).enumerate() {
            if lrow.len() != k {
                return Err(AuditError::InvalidRecord {
                    index: i,
                    field: "logits",
                    message: format!("row has {} entries, expected n_models = {k}", lrow.len()),
                });
            }
            if mrow.len() != k {
                return Err(AuditError::InvalidRecord {
                    index: i,
                    field: "membership_mask",
                    message: format!("row has {} entries, expected n_models = {k}", mrow.len()),
                });
            }
            logits.extend_from_slice(lrow);
            for &b in mrow {
                mask.push(match b {
                    0 => false,
                    1 => true,
                    other => {
                        return Err(AuditError::InvalidRecord {
                            index: i,
                            field: "membership_mask",
                            message: format!("expected 0 or 1, got {other}"),
                        })
                    }
                });
            }
        }
        Self::new(n, k, logits, mask, raw.target_index, raw.true_membership, raw.metadata)
    }

    pub fn to_json_string(&self) -> String {
        let raw = LogitPanelJson {
            n_samples: self.n_samples,
            n_models: self.n_models,
            target_index: self.target_index,
            logits: self.logits.chunks(self.n_models).map(<[f64]>::to_vec).collect(),
            membership_mask: self
                .mask
                .chunks(self.n_models)
                .map(|r| r.iter().map(|&b| u8::from(b)).collect())
                .collect(),
            true_membership: self.true_membership.clone(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_string(&raw).expect("panel serializes")
    }
}

pub fn load_logit_panel(path: impl AsRef<Path>) -> Result<LogitPanel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    LogitPanel::from_json_str(&text)
}

pub fn save_logit_panel(path: impl AsRef<Path>, panel: &LogitPanel) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, panel.to_json_string() + "\n").map_err(|e| AuditError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessStrategy {
    /// Guess "member" on the highest-scoring canaries.
    OneSided,
    /// Guess "member" on the top half and "non-member" on the bottom half.
    TwoSided,
}

impl std::fmt::Display for GuessStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GuessStrategy::OneSided => "one_sided",
            GuessStrategy::TwoSided => "two_sided",
        })
    }
}

/// Outcome of a guessing game over `m` canaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuessSummary {
    pub m: usize,
    pub c_hat: usize,
    pub c: usize,
    pub strategy: GuessStrategy,
}

impl GuessSummary {
    pub fn new(m: usize, c_hat: usize, c: usize, strategy: GuessStrategy) -> Result<Self> {
        if c > c_hat || c_hat > m {
            return Err(AuditError::config(format!(
                "guess counts must satisfy c <= c_hat <= m (got c = {c}, c_hat = {c_hat}, m = {m})"
            )));
        }
        Ok(Self { m, c_hat, c, strategy })
    }
}

/// One decoding step of a target continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStep {
    pub target_token: TokenId,
    /// Raw model probability of the target token.
    pub target_prob: f64,
    /// 1-based rank of the target in the raw distribution, sorted descending.
    pub target_rank: usize,
    /// Head of the raw distribution, sorted descending.
    pub sorted_probs: Vec<f64>,
}

impl TokenStep {
    pub fn listed_mass(&self) -> f64 {
        self.sorted_probs.iter().sum()
    }

    /// Whether the listed head accounts for all the probability mass.
    pub fn is_complete(&self) -> bool {
        self.listed_mass() >= 1.0 - PROB_TOL
    }

    fn validate(&self, coverage_floor: f64) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.target_prob) {
            return Err(format!("target_prob {} outside [0, 1]", self.target_prob));
        }
        if self.target_rank == 0 {
            return Err("target_rank is 1-based".to_string());
        }
        if self.sorted_probs.is_empty() {
            return Err("sorted_probs is empty".to_string());
        }
        for (j, &p) in self.sorted_probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("sorted_probs[{j}] = {p} outside [0, 1]"));
            }
            if j > 0 && p > self.sorted_probs[j - 1] {
                return Err(format!("sorted_probs not non-increasing at position {j}"));
            }
        }
        let mass = self.listed_mass();
        if mass > 1.0 + PROB_TOL {
            return Err(format!("sorted_probs sum to {mass} > 1"));
        }
        if mass < coverage_floor - PROB_TOL {
            return Err(format!("sorted_probs cover {mass}, below coverage_floor {coverage_floor}"));
        }
        if let Some(&listed) = self.sorted_probs.get(self.target_rank - 1) {
            if (listed - self.target_prob).abs() > PROB_TOL {
                return Err(format!(
                    "sorted_probs[rank {}] = {listed} disagrees with target_prob {}",
                    self.target_rank, self.target_prob
                ));
            }
        } else if self.target_prob > self.sorted_probs[self.sorted_probs.len() - 1] + PROB_TOL {
            return Err("target ranked past the listed head but more probable than its tail".to_string());
        }
        Ok(())
    }
}

fn default_coverage() -> f64 {
    DEFAULT_COVERAGE_FLOOR
}

/// Per-step probabilities of a target continuation `z` given its prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub steps: Vec<TokenStep>,
    #[serde(default = "default_coverage")]
    pub coverage_floor: f64,
    /// Vocabulary size, when known; tightens temperature truncation bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
}

impl TokenTrace {
    pub fn new(id: Option<String>, steps: Vec<TokenStep>, coverage_floor: f64) -> Result<Self> {
        let trace = Self {
            id,
            steps,
            coverage_floor,
            vocab_size: None,
        };
        trace.validate(0)?;
        Ok(trace)
    }

    /// Display label used in diagnostics.
    pub fn label(&self, index: usize) -> String {
        self.id.clone().unwrap_or_else(|| format!("#{index}"))
    }

    /// The target continuation `z`.
    pub fn target(&self) -> Vec<TokenId> {
        self.steps.iter().map(|s| s.target_token).collect()
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coverage_floor) {
            return Err(AuditError::InvalidRecord {
                index,
                field: "coverage_floor",
                message: format!("{} outside [0, 1]", self.coverage_floor),
            });
        }
        if self.steps.is_empty() {
            return Err(AuditError::InvalidRecord {
                index,
                field: "steps",
                message: "trace has no steps".to_string(),
            });
        }
        for (s, step) in self.steps.iter().enumerate() {
            step.validate(self.coverage_floor).map_err(|m| AuditError::InvalidRecord {
                index,
                field: "steps",
                message: format!("step {s}: {m}"),
            })?;
        }
        Ok(())
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>, R: Read>(reader: R, mut check: impl FnMut(usize, &T) -> Result<()>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| AuditError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line).map_err(|e| AuditError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        check(lineno, &value).map_err(|e| AuditError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize, W: Write>(writer: W, items: &[T]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_token_traces<R: Read>(reader: R) -> Result<Vec<TokenTrace>> {
    read_jsonl(reader, |line, t: &TokenTrace| t.validate(line - 1))
}

pub fn load_token_traces(path: impl AsRef<Path>) -> Result<Vec<TokenTrace>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| AuditError::io(path, e))?;
    read_token_traces(file)
}

pub fn write_token_traces<W: Write>(writer: W, traces: &[TokenTrace]) -> std::io::Result<()> {
    write_jsonl(writer, traces)
}

/// A generated completion `Y` alongside the target continuation `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    /// Label of the decoding scheme that produced `generated`, e.g. `top_k=40`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    pub generated: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl CompletionRecord {
    pub fn new(generated: Vec<TokenId>, target: Vec<TokenId>) -> Result<Self> {
        let r = Self {
            id: None,
            scheme: None,
            generated,
            target,
        };
        r.validate(0)?;
        Ok(r)
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.generated.is_empty() {
            return Err(AuditError::InvalidRecord {
                index,
                field: "generated",
                message: "empty token sequence".to_string(),
            });
        }
        if self.target.is_empty() {
            return Err(AuditError::InvalidRecord {
                index,
                field: "target",
                message: "empty token sequence".to_string(),
            });
        }
        Ok(())
    }
}

pub fn read_completions<R: Read>(reader: R) -> Result<Vec<CompletionRecord>> {
    read_jsonl(reader, |line, c: &CompletionRecord| c.validate(line - 1))
}

pub fn load_completions(path: impl AsRef<Path>) -> Result<Vec<CompletionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| AuditError::io(path, e))?;
    read_completions(file)
}

pub fn write_completions<W: Write>(writer: W, records: &[CompletionRecord]) -> std::io::Result<()> {
    write_jsonl(writer, records)
}
