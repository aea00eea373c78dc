//! `docrel`: document-level relation extraction and evidence retrieval.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime
//! failure.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "docrel",
    about = "Document-level relation extraction with supervised intermediate steps",
    after_help = "Environment: DOCREL_CACHE sets the cache directory for \
                  pretrained encoder containers."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration file (TOML). Flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training corpus path override.
    #[arg(long)]
    train_data: Option<PathBuf>,
    /// Dev corpus path override.
    #[arg(long)]
    dev_data: Option<PathBuf>,
    /// Test corpus path override.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Corpus format override (docred|pubtator).
    #[arg(long)]
    format: Option<String>,
    /// Auxiliary task toggles override, comma-separated subset of
    /// CR,ET,PER,FER (empty string for relation extraction only).
    #[arg(long)]
    tasks: Option<String>,
    /// Epoch count override.
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed override (training and head initialization).
    #[arg(long)]
    seed: Option<u64>,
    /// Evidence threshold override.
    #[arg(long)]
    alpha: Option<f64>,
    /// Per-pair rejection cap override.
    #[arg(long)]
    per_pair_cap: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(CliError::Validation)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(p) = &self.train_data {
            cfg.data.train = Some(p.clone());
        }
        if let Some(p) = &self.dev_data {
            cfg.data.dev = Some(p.clone());
        }
        if let Some(p) = &self.test_data {
            cfg.data.test = Some(p.clone());
        }
        if let Some(f) = &self.format {
            cfg.data.format = f.clone();
        }
        if let Some(tasks) = &self.tasks {
            cfg.model.tasks = tasks
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.encoder.seed = s;
            cfg.model.head_seed = s.wrapping_add(1);
        }
        if let Some(a) = self.alpha {
            cfg.infer.alpha = a;
        }
        if let Some(c) = self.per_pair_cap {
            cfg.infer.per_pair_cap = c;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the pipeline and write the best-dev checkpoint plus a run log.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Run ensemble inference (or plain inference with --no-augment).
    Infer {
        #[command(flatten)]
        common: ConfigArgs,
        /// Trained checkpoint container.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to predict: dev or test.
        #[arg(long, default_value = "dev")]
        split: String,
        /// Skip augmentation and blending; original decisions only.
        #[arg(long)]
        no_augment: bool,
    },
    /// Score a prediction file against gold annotations.
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        /// Prediction JSON in the submission shape.
        #[arg(long)]
        predictions: PathBuf,
        /// Gold corpus file.
        #[arg(long)]
        gold: PathBuf,
        /// Training corpus for the leak-excluded F1 (optional).
        #[arg(long)]
        train_facts: Option<PathBuf>,
        /// Row label in the report.
        #[arg(long, default_value = "model")]
        label: String,
    },
    /// Merge evaluation reports into one comparison table.
    Report {
        #[command(flatten)]
        common: ConfigArgs,
        /// report.json files produced by `eval`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap's own help/version output is not an error
        if e.kind() == clap::error::ErrorKind::DisplayHelp
            || e.kind() == clap::error::ErrorKind::DisplayVersion
        {
            let _ = e.print();
            std::process::exit(0);
        }
        CliError::Usage(e.to_string())
    })?;
    match cli.command {
        Command::Train { common } => {
            let cfg = common.resolve()?;
            commands::cmd_train(&cfg)
        }
        Command::Infer {
            common,
            checkpoint,
            split,
            no_augment,
        } => {
            let mut cfg = common.resolve()?;
            if no_augment {
                cfg.infer.no_augment = true;
            }
            commands::cmd_infer(&cfg, &checkpoint, &split)
        }
        Command::Eval {
            common,
            predictions,
            gold,
            train_facts,
            label,
        } => {
            let cfg = common.resolve()?;
            let write_out = common.out.is_some() || common.config.is_some();
            commands::cmd_eval(
                &cfg,
                &predictions,
                &gold,
                train_facts.as_deref(),
                &label,
                write_out,
            )
        }
        Command::Report { common, inputs } => {
            let cfg = common.resolve()?;
            let write_out = common.out.is_some() || common.config.is_some();
            commands::cmd_report(&cfg, &inputs, write_out)
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
