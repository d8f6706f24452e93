//! Command-line front end: `duet [OPTIONS] <COMMAND> [KEY=VALUE]...`.
//!
//! Exit status is 0 on success, 1 when inputs or configuration are
//! invalid, and 2 when a command fails at run time.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

pub use commands::{
    evaluate_predictions, execute, predict_cases, read_predictions, PredictionRecord,
};
pub use config::{
    apply_override, config_reference, CorpusConfig, EncoderSection, EvalConfig, MiningConfig,
    PathsConfig, RunConfig, VerbalizerConfig, KEY_DOCS,
};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Load raw cases and catalog, filter, and split off held-out cases.
    Ingest,
    /// Build the vocabulary from training facts and catalog texts.
    BuildVocab,
    /// Encode training facts into an embedding matrix.
    Embed,
    /// Mine same-label positives and hard negative cases.
    MineLcc,
    /// Train the label classifier and mine confusable decisions.
    MineLdm,
    /// Contrastive pretraining of the encoder.
    Pretrain,
    /// Train classifier heads (and the encoder) on labelled cases.
    Finetune,
    /// Predict labels for held-out cases.
    Predict,
    /// Score predictions against held-out labels.
    Eval,
    /// Per-case cross-entropy of the gold label.
    Entropy,
    /// Davies–Bouldin Index over charge clusters.
    Dbi,
    /// Write held-out fact embeddings for external plotting.
    ExportEmbeddings,
    /// Generate the synthetic confusable-charge corpus.
    SynthData,
}

#[derive(Debug, Parser)]
#[command(
    name = "duet",
    version,
    about = "Dual-view contrastive pretraining for legal judgment prediction"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Worker threads; 1 keeps runs bit-reproducible across machines.
    #[arg(short, long, default_value_t = 1)]
    pub workers: usize,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
    /// Print the configuration reference page and exit.
    #[arg(long)]
    pub config_reference: bool,
    #[arg(required_unless_present_any = ["print_config", "config_reference"])]
    pub command: Option<Command>,
    /// `section.key=value` overrides applied after the config file.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_validation() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

/// Parses `args`, runs the command, and maps failures to exit codes.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if cli.config_reference {
        print!("{}", config_reference());
        return ExitCode::SUCCESS;
    }
    let config = match RunConfig::load(cli.config.as_deref(), &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if cli.print_config {
        print!("{}", config.to_toml());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        return ExitCode::from(1);
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.max(1))
        .build();
    let result = match pool {
        Ok(pool) => pool.install(|| execute(command, &config)),
        Err(e) => Err(Error::invalid(format!("thread pool: {e}"))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
