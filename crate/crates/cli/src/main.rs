use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use privaudit::report::ReportFormat;
use privaudit::ErrorKind;

mod commands;

/// Empirical privacy auditing from attack observations.
///
/// Exit status: 0 on success, 2 on invalid input, 3 when an analysis
/// precondition fails on valid input.
#[derive(Debug, Parser)]
#[command(name = "privaudit", version)]
struct Cli {
    /// Where to write the audit report (defaults to standard output).
    #[arg(long, global = true)]
    report: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Markdown => ReportFormat::Markdown,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    /// Random seed.
    #[arg(long, env = privaudit::rng::SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score a logit panel with LiRA.
    Lira(commands::LiraArgs),
    /// Score a logit panel with RMIA.
    Rmia(commands::RmiaArgs),
    /// AUC, accuracy and empirical epsilon with bootstrap intervals.
    Audit(commands::AuditArgs),
    /// Guess-count audit sweep.
    GuessAudit(commands::GuessArgs),
    /// Extraction rates and (n, p) curves from token traces.
    Extract(commands::ExtractArgs),
    /// Write synthetic fixtures with known ground truth.
    Synth {
        #[command(subcommand)]
        generator: commands::SynthCommand,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let report = match cli.command {
        Command::Lira(a) => commands::lira(a)?,
        Command::Rmia(a) => commands::rmia(a)?,
        Command::Audit(a) => commands::audit(a)?,
        Command::GuessAudit(a) => commands::guess_audit(a)?,
        Command::Extract(a) => commands::extract(a)?,
        Command::Synth { generator } => commands::synth(generator)?,
    };
    let bytes = privaudit::report::render(&report, cli.format.into());
    match &cli.report {
        Some(path) => commands::write_file(path, &bytes)?,
        None => {
            use std::io::Write;
            match std::io::stdout().write_all(&bytes) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("privaudit: {err}");
            let analysis = err
                .downcast_ref::<privaudit::AuditError>()
                .is_some_and(|e| e.kind() == ErrorKind::Analysis);
            ExitCode::from(if analysis { 3 } else { 2 })
        }
    }
}
