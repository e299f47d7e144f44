//! `gap`: command-line front end to the pipeline.
//!
//! Exit status is 0 on success, 2 for invalid input or configuration and 3
//! when a required file is missing.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gap_core::pipeline::{self, Overrides, PipelineConfig};
use gap_core::{Error, Result};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "gap", version, about = "Gendered pronoun resolution pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "gap.toml")]
    config: PathBuf,

    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Embedding layers for every model, comma separated (e.g. -5,-6).
    #[arg(long, global = true, allow_hyphen_values = true)]
    layers: Option<String>,

    /// Ensemble weights, comma separated, one per model.
    #[arg(long, global = true)]
    weights: Option<String>,

    /// Probability floor applied after ensembling.
    #[arg(long, global = true)]
    clip: Option<f64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Expand the training corpus into anonymized variants and report coverage.
    Augment,
    /// Write stub embeddings for every usable variant.
    ExtractStub,
    /// Cross-validate every configured model.
    Train,
    /// Predict the test corpus with the trained checkpoints.
    Predict,
    /// Score a submission against the labeled test corpus.
    Evaluate,
    /// Bootstrap the log loss of a submission.
    Bootstrap,
    /// Histogram document lengths of each corpus file.
    ReportLengths,
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("--{flag}: cannot parse `{x}`")))
        })
        .collect()
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        layers: cli.layers.as_deref().map(|s| parse_list("layers", s)).transpose()?,
        weights: cli.weights.as_deref().map(|s| parse_list("weights", s)).transpose()?,
        clip: cli.clip,
        out: cli.out.clone(),
    });
    cfg.validate()?;
    match cli.command {
        Command::Augment => print(&pipeline::cmd_augment(&cfg)?),
        Command::ExtractStub => {
            println!("{}", pipeline::cmd_extract_stub(&cfg)?.display());
            Ok(())
        }
        Command::Train => print(&pipeline::cmd_train(&cfg)?),
        Command::Predict => {
            let rows = pipeline::cmd_predict(&cfg)?;
            println!("{} rows -> {}", rows.len(), cfg.out_dir.join("submission.csv").display());
            Ok(())
        }
        Command::Evaluate => print(&pipeline::cmd_evaluate(&cfg)?),
        Command::Bootstrap => print(&pipeline::cmd_bootstrap(&cfg)?),
        Command::ReportLengths => print(&pipeline::cmd_report_lengths(&cfg)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
