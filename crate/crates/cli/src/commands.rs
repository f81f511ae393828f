use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, Subcommand, ValueEnum};
use serde_json::json;

use privaudit::bootstrap::{bootstrap_audit, BootstrapConfig, Resampling};
use privaudit::extraction::{extraction_rates, np_curve, MatchPredicate, SamplingScheme};
use privaudit::guess::{sweep, Correction, GuessAuditConfig};
use privaudit::lira::{run_lira, LiraConfig, LiraMode, VarianceMode};
use privaudit::observation::{
    load_completions, load_logit_panel, load_score_records, load_token_traces, save_logit_panel, save_score_records,
    write_completions, write_token_traces, CompletionRecord, GuessStrategy, ScoreFormat, ScoreRecordSet,
};
use privaudit::report::{self, AuditReport, Series};
use privaudit::rmia::{run_rmia, sample_population, AlphaSetting, RmiaConfig};
use privaudit::roc::{self, ClassScores};
use privaudit::synthetic::{self, GaussianPairSpec, LogitPanelSpec, MaskDesign};
use privaudit::AuditError;

use crate::SeedArg;

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| AuditError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn score_summary(set: &ScoreRecordSet) -> serde_json::Value {
    let auc = ClassScores::from_set(set).ok().map(|c| c.auc());
    json!({
        "records": set.len(),
        "members": set.member_count(),
        "non_members": set.non_member_count(),
        "auc": auc,
        "metadata": set.metadata(),
    })
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Online,
    Offline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VarianceArg {
    Global,
    PerSample,
}

#[derive(Debug, Args)]
pub struct LiraArgs {
    /// Logit panel JSON.
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Online)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = VarianceArg::Global)]
    variance: VarianceArg,
    #[arg(long, default_value_t = 1e-6)]
    std_floor: f64,
    /// Score records output (`.csv` or JSONL).
    #[arg(long)]
    out: PathBuf,
}

pub fn lira(a: LiraArgs) -> Result<AuditReport> {
    let panel = load_logit_panel(&a.panel)?;
    let cfg = LiraConfig {
        mode: match a.mode {
            ModeArg::Online => LiraMode::Online,
            ModeArg::Offline => LiraMode::Offline,
        },
        variance_mode: match a.variance {
            VarianceArg::Global => VarianceMode::Global,
            VarianceArg::PerSample => VarianceMode::PerSample,
        },
        std_floor: a.std_floor,
        ..LiraConfig::default()
    };
    let scores = run_lira(&panel, &cfg)?;
    save_score_records(&a.out, &scores, ScoreFormat::from_path(&a.out))?;
    let mut report = AuditReport::new("lira", json!({"panel": a.panel, "out": a.out}));
    let mut results = score_summary(&scores);
    results["scores_path"] = json!(a.out);
    report.add_section("lira", &cfg, &results)?;
    Ok(report)
}

#[derive(Debug, Args)]
pub struct RmiaArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, default_value_t = privaudit::rmia::DEFAULT_GAMMA)]
    gamma: f64,
    /// Fixed interpolation weight for the marginal probability.
    #[arg(long, conflicts_with = "alpha_grid")]
    alpha: Option<f64>,
    /// Candidate weights for leave-one-shadow-out tuning.
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    /// Number of reference rows drawn from the panel.
    #[arg(long, default_value_t = 1000)]
    population: usize,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
}

pub fn rmia(a: RmiaArgs) -> Result<AuditReport> {
    let panel = load_logit_panel(&a.panel)?;
    let size = a.population.min(panel.n_samples().saturating_sub(1)).max(1);
    let mut cfg = RmiaConfig::new(sample_population(panel.n_samples(), size, a.seed.seed)?);
    cfg.gamma = a.gamma;
    cfg.alpha = match (a.alpha, a.alpha_grid) {
        (_, Some(grid)) => AlphaSetting::Auto(grid),
        (Some(x), None) => AlphaSetting::Fixed(x),
        (None, None) => AlphaSetting::Fixed(privaudit::rmia::DEFAULT_ALPHA),
    };
    let scores = run_rmia(&panel, &cfg)?;
    save_score_records(&a.out, &scores, ScoreFormat::from_path(&a.out))?;
    let mut report = AuditReport::new(
        "rmia",
        json!({"panel": a.panel, "out": a.out, "seed": a.seed.seed, "population": size}),
    );
    let mut results = score_summary(&scores);
    results["scores_path"] = json!(a.out);
    // The index list is reproducible from the seed; echo only its size.
    let config = json!({
        "gamma": cfg.gamma,
        "alpha": cfg.alpha,
        "population_size": cfg.population_indices.len(),
        "prob_floor": cfg.prob_floor,
    });
    report.add_section("rmia", &config, &results)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResamplingArg {
    WithReplacement,
    WithoutReplacement,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Score records (`.csv` or JSONL).
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = ResamplingArg::WithReplacement)]
    resampling: ResamplingArg,
    /// Also report epsilon at this true-positive rate (repeatable).
    #[arg(long = "epsilon-at-tpr")]
    epsilon_at_tpr: Vec<f64>,
    #[command(flatten)]
    seed: SeedArg,
    /// ROC curve as CSV.
    #[arg(long)]
    roc_csv: Option<PathBuf>,
    /// ROC curve as SVG.
    #[arg(long)]
    roc_svg: Option<PathBuf>,
}

pub fn audit(a: AuditArgs) -> Result<AuditReport> {
    let set = load_score_records(&a.scores, ScoreFormat::from_path(&a.scores))?;
    let cfg = BootstrapConfig {
        k: a.k,
        confidence: a.confidence,
        delta: a.delta,
        seed: a.seed.seed,
        resampling: match a.resampling {
            ResamplingArg::WithReplacement => Resampling::WithReplacement,
            ResamplingArg::WithoutReplacement => Resampling::WithoutReplacement,
        },
        tpr_targets: a.epsilon_at_tpr.clone(),
    };
    cfg.validate()?;
    let classes = ClassScores::from_set(&set)?;
    let (acc_threshold, acc) = classes.best_accuracy();
    let mut report = AuditReport::new("audit", json!({"scores": a.scores, "roc_csv": a.roc_csv, "roc_svg": a.roc_svg}));
    report.add_section(
        "metrics",
        &json!({"delta": a.delta}),
        &json!({
            "members": set.member_count(),
            "non_members": set.non_member_count(),
            "auc": classes.auc(),
            "best_accuracy": acc,
            "best_accuracy_threshold": privaudit::extreal::format(acc_threshold),
        }),
    )?;
    let boot = bootstrap_audit(&set, &cfg)?;
    for w in &boot.warnings {
        report.warn("bootstrap", w.clone());
    }
    report.add_section("bootstrap", &cfg, &boot)?;

    if a.roc_csv.is_some() || a.roc_svg.is_some() {
        let curve = roc::roc_curve(&set)?;
        if let Some(p) = &a.roc_csv {
            write_file(p, report::roc_csv(&curve).as_bytes())?;
        }
        if let Some(p) = &a.roc_svg {
            let series = Series {
                name: "roc".into(),
                points: curve.iter().map(|r| (r.fpr, r.tpr)).collect(),
            };
            write_file(p, report::svg_line_chart("ROC", "FPR", "TPR", &[series], false).as_bytes())?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    OneSided,
    TwoSided,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CorrectionArg {
    Bonferroni,
    None,
}

#[derive(Debug, Args)]
pub struct GuessArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.05)]
    significance: f64,
    #[arg(long, default_value_t = 10)]
    grid_min: usize,
    #[arg(long, default_value_t = 25)]
    grid_points: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
    strategy: StrategyArg,
    /// Multiplicity correction across the sweep.
    #[arg(long, value_enum, default_value_t = CorrectionArg::Bonferroni)]
    correction: CorrectionArg,
    /// Sweep table as CSV (`strategy,c_hat,c,epsilon`).
    #[arg(long)]
    sweep_csv: Option<PathBuf>,
    #[arg(long)]
    sweep_svg: Option<PathBuf>,
}

pub fn guess_audit(a: GuessArgs) -> Result<AuditReport> {
    let set = load_score_records(&a.scores, ScoreFormat::from_path(&a.scores))?;
    let cfg = GuessAuditConfig {
        delta: a.delta,
        significance: a.significance,
        grid_min: a.grid_min,
        grid_points: a.grid_points,
        strategies: match a.strategy {
            StrategyArg::OneSided => vec![GuessStrategy::OneSided],
            StrategyArg::TwoSided => vec![GuessStrategy::TwoSided],
            StrategyArg::Both => vec![GuessStrategy::OneSided, GuessStrategy::TwoSided],
        },
        correction: match a.correction {
            CorrectionArg::Bonferroni => Correction::Bonferroni,
            CorrectionArg::None => Correction::None,
        },
        ..GuessAuditConfig::default()
    };
    let result = sweep(&set, &cfg)?;
    if let Some(p) = &a.sweep_csv {
        write_file(p, report::sweep_csv(&result.rows).as_bytes())?;
    }
    if let Some(p) = &a.sweep_svg {
        let series: Vec<Series> = cfg
            .strategies
            .iter()
            .map(|s| Series {
                name: s.to_string(),
                points: result
                    .rows
                    .iter()
                    .filter(|r| r.strategy == *s)
                    .map(|r| (r.c_hat as f64, r.epsilon))
                    .collect(),
            })
            .collect();
        write_file(p, report::svg_line_chart("Guess audit", "guesses", "epsilon", &series, true).as_bytes())?;
    }
    let mut report = AuditReport::new("guess-audit", json!({"scores": a.scores, "sweep_csv": a.sweep_csv}));
    report.add_section("guess_sweep", &cfg, &result)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PredicateArg {
    Exact,
    Inclusion,
    Lcs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Token traces (JSONL).
    #[arg(long)]
    traces: PathBuf,
    /// Generated completions (JSONL).
    #[arg(long)]
    completions: Option<PathBuf>,
    /// Decoding scheme, e.g. `greedy`, `top_k=40`, `top_p=0.9`, `temperature=0.7` (repeatable).
    #[arg(long = "scheme", default_value = "greedy")]
    schemes: Vec<String>,
    /// Match predicate (repeatable).
    #[arg(long = "predicate", value_enum, default_values_t = [PredicateArg::Exact, PredicateArg::Inclusion, PredicateArg::Lcs])]
    predicates: Vec<PredicateArg>,
    /// LCS threshold relative to the target length.
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    #[arg(long = "pz-threshold", value_delimiter = ',', default_values_t = [0.5, 0.01])]
    pz_thresholds: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 10, 100, 1000, 10000, 100000])]
    n_grid: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 0.9])]
    p_targets: Vec<f64>,
    /// (n, p) curve of the first scheme as CSV.
    #[arg(long)]
    np_csv: Option<PathBuf>,
    #[arg(long)]
    np_svg: Option<PathBuf>,
}

pub fn extract(a: ExtractArgs) -> Result<AuditReport> {
    let traces = load_token_traces(&a.traces)?;
    let completions = match &a.completions {
        Some(p) => load_completions(p)?,
        None => Vec::new(),
    };
    let schemes = a.schemes.iter().map(|s| s.parse()).collect::<Result<Vec<SamplingScheme>, _>>()?;
    let predicates: Vec<MatchPredicate> = a
        .predicates
        .iter()
        .map(|p| match p {
            PredicateArg::Exact => MatchPredicate::Exact,
            PredicateArg::Inclusion => MatchPredicate::Inclusion,
            PredicateArg::Lcs => MatchPredicate::Lcs { tau: a.tau },
        })
        .collect();
    let table = extraction_rates(&traces, &completions, &schemes, &predicates, &a.pz_thresholds)?;

    let mut report = AuditReport::new(
        "extract",
        json!({"traces": a.traces, "completions": a.completions, "np_csv": a.np_csv}),
    );
    for row in &table.rows {
        if row.max_relative_error > 0.0 {
            report.warn(
                "extraction_rates",
                format!(
                    "{}: p_z may overestimate by a relative factor up to {} from truncated distributions",
                    row.scheme,
                    privaudit::extreal::format(row.max_relative_error)
                ),
            );
        }
    }
    let config = json!({
        "schemes": a.schemes,
        "predicates": predicates.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
        "pz_thresholds": a.pz_thresholds,
    });
    report.add_section("extraction_rates", &config, &json!({"rows": table.rows}))?;

    if !traces.is_empty() {
        let first = schemes[0].to_string();
        let curve = np_curve(&table.pz_values[&first], &a.n_grid, &a.p_targets)?;
        if let Some(p) = &a.np_csv {
            write_file(p, report::np_curve_csv(&curve).as_bytes())?;
        }
        if let Some(p) = &a.np_svg {
            let series: Vec<Series> = a
                .p_targets
                .iter()
                .map(|&pt| Series {
                    name: format!("p={pt}"),
                    points: curve.iter().filter(|q| q.p == pt).map(|q| (q.n as f64, q.fraction)).collect(),
                })
                .collect();
            write_file(
                p,
                report::svg_line_chart("(n, p) extraction", "n", "fraction extractable", &series, true).as_bytes(),
            )?;
        }
        report.add_section(
            "np_curve",
            &json!({"scheme": first, "n_grid": a.n_grid, "p_targets": a.p_targets}),
            &json!({"points": curve}),
        )?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DesignArg {
    Balanced,
    Independent,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Members N(shift, sigma^2), non-members N(0, sigma^2).
    ShiftedGaussian {
        #[arg(long, default_value_t = 1000)]
        m_per_class: usize,
        #[arg(long, default_value_t = 2.0)]
        shift: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Membership bits reported through epsilon0-randomized response.
    RandomizedResponse {
        #[arg(long, default_value_t = 10000)]
        m: usize,
        #[arg(long, default_value_t = 1.0)]
        epsilon0: f64,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Likelihood-ratio scores of a Gaussian mechanism.
    GaussianMechanism {
        #[arg(long, default_value_t = 4000)]
        m: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma_noise: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shadow-model logit panel.
    LogitPanel {
        #[arg(long, default_value_t = 4000)]
        n_samples: usize,
        #[arg(long, default_value_t = 8)]
        n_models: usize,
        #[arg(long, default_value_t = 2.0)]
        mu_in: f64,
        #[arg(long, default_value_t = 0.0)]
        mu_out: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, value_enum, default_value_t = DesignArg::Balanced)]
        design: DesignArg,
        #[command(flatten)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Toy Markov language model, its exact traces and optional sampled completions.
    ToyLm {
        #[arg(long, default_value_t = 3)]
        vocab: usize,
        #[arg(long, default_value_t = 3)]
        length: usize,
        #[arg(long, default_value_t = 20)]
        n_traces: usize,
        #[command(flatten)]
        seed: SeedArg,
        /// Token traces (JSONL).
        #[arg(long)]
        out: PathBuf,
        /// Start distribution and transition table (JSON).
        #[arg(long)]
        tables: Option<PathBuf>,
        /// Sampled completions (JSONL), one per trace and scheme.
        #[arg(long)]
        completions: Option<PathBuf>,
        #[arg(long = "scheme", default_value = "greedy")]
        schemes: Vec<String>,
    },
}

fn synth_scores(report: &mut AuditReport, config: serde_json::Value, set: &ScoreRecordSet, out: &Path) -> Result<()> {
    save_score_records(out, set, ScoreFormat::from_path(out))?;
    report.add_section("synthetic", &config, &json!({"path": out, "summary": score_summary(set)}))?;
    Ok(())
}

pub fn synth(cmd: SynthCommand) -> Result<AuditReport> {
    let mut report = AuditReport::new("synth", json!({}));
    match cmd {
        SynthCommand::ShiftedGaussian { m_per_class, shift, sigma, seed, out } => {
            let spec = GaussianPairSpec { m_per_class, shift, sigma, seed: seed.seed };
            let set = synthetic::gen_shifted_gaussian_scores(&spec)?;
            synth_scores(&mut report, json!({"generator": "shifted_gaussian", "spec": spec}), &set, &out)?;
        }
        SynthCommand::RandomizedResponse { m, epsilon0, seed, out } => {
            let set = synthetic::gen_randomized_response_guesses(m, epsilon0, seed.seed)?;
            let config = json!({"generator": "randomized_response", "m": m, "epsilon0": epsilon0, "seed": seed.seed});
            synth_scores(&mut report, config, &set, &out)?;
        }
        SynthCommand::GaussianMechanism { m, sigma_noise, delta, seed, out } => {
            let set = synthetic::gen_gaussian_mechanism_scores(m, sigma_noise, delta, seed.seed)?;
            let config = json!({
                "generator": "gaussian_mechanism", "m": m, "sigma_noise": sigma_noise, "delta": delta, "seed": seed.seed
            });
            synth_scores(&mut report, config, &set, &out)?;
        }
        SynthCommand::LogitPanel { n_samples, n_models, mu_in, mu_out, sigma, design, seed, out } => {
            let mut spec = LogitPanelSpec::new(n_samples, n_models, mu_in, mu_out, sigma, seed.seed);
            spec.design = match design {
                DesignArg::Balanced => MaskDesign::Balanced,
                DesignArg::Independent => MaskDesign::Independent,
            };
            let panel = synthetic::gen_logit_panel(&spec)?;
            save_logit_panel(&out, &panel)?;
            report.add_section(
                "synthetic",
                &json!({"generator": "logit_panel", "spec": spec}),
                &json!({"path": out, "metadata": panel.metadata()}),
            )?;
        }
        SynthCommand::ToyLm { vocab, length, n_traces, seed, out, tables, completions, schemes } => {
            let (traces, lm) = synthetic::gen_toy_lm_traces(vocab, length, n_traces, seed.seed)?;
            let mut buf = Vec::new();
            write_token_traces(&mut buf, &traces)?;
            write_file(&out, &buf)?;
            if let Some(p) = &tables {
                write_file(p, (serde_json::to_string_pretty(&lm)? + "\n").as_bytes())?;
            }
            if let Some(p) = &completions {
                let schemes = schemes.iter().map(|s| s.parse()).collect::<Result<Vec<SamplingScheme>, _>>()?;
                let mut rng = privaudit::rng::stream_rng(seed.seed, 2);
                let mut records = Vec::new();
                for scheme in &schemes {
                    for (i, t) in traces.iter().enumerate() {
                        let mut rec = CompletionRecord::new(lm.sample(scheme, length, &mut rng), t.target())?;
                        rec.id = Some(t.label(i));
                        rec.scheme = Some(scheme.to_string());
                        records.push(rec);
                    }
                }
                let mut buf = Vec::new();
                write_completions(&mut buf, &records)?;
                write_file(p, &buf)?;
            }
            report.add_section(
                "synthetic",
                &json!({"generator": "toy_lm", "vocab": vocab, "length": length, "n_traces": n_traces, "seed": seed.seed}),
                &json!({"path": out, "tables": tables, "completions": completions, "traces": traces.len()}),
            )?;
        }
    }
    Ok(report)
}
