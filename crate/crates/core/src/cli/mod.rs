//! The `nndwl` command line: vocabulary building, training, evaluation,
//! phrase-pair precomputation and n-best rescoring.
//!
//! Exit codes: 0 success, 1 output failure, 2 bad input, 3 numerical
//! divergence during training.

pub mod config;
pub mod manifest;

mod eval;
mod score;
mod train;
mod vocab;

pub use eval::EvalArgs;
pub use manifest::RunManifest;
pub use score::{PrecomputeArgs, RescoreArgs};
pub use train::TrainArgs;
pub use vocab::BuildVocabArgs;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Side, Vocabulary};
use crate::exec::Execution;
use crate::network::{ModelFileError, NetworkModel};
use crate::scoring::ScoringError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Output(_) => 1,
            CliError::Input(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::Output(_) => CliError::Output(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Divergence(e.to_string()),
            TrainError::Snapshot { .. } => CliError::Output(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nndwl", version, about = "Neural discriminative word lexicon")]
pub struct Cli {
    /// Log level for messages on standard error.
    #[arg(long, global = true, default_value = "info")]
    pub log: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count a parallel corpus and write source and target vocabularies.
    BuildVocab(BuildVocabArgs),
    /// Train a network and keep the epoch with the best validation error.
    Train(TrainArgs),
    /// Mean cross-entropy (and per-word precision/recall) of a model.
    Eval(EvalArgs),
    /// Score every phrase pair that matches each source sentence.
    Precompute(PrecomputeArgs),
    /// Add the lexicon feature to an n-best list.
    Rescore(RescoreArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Run even if an input file changed since the manifest was written.
    #[arg(long)]
    pub force: bool,
}

/// Parallelism flags shared by the compute-heavy commands. Results do not
/// depend on them.
#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ExecArgs {
    /// sequential or parallel.
    #[arg(long, default_value = "sequential")]
    pub execution: Execution,
    /// Worker threads for parallel execution (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl ExecArgs {
    fn setup(&self) -> Execution {
        if self.execution == Execution::Parallel && !Execution::PARALLEL_AVAILABLE {
            log::warn!("built without parallel support; running sequentially");
        }
        #[cfg(feature = "parallel")]
        if let Some(n) = self.threads {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::debug!("thread pool already configured: {e}");
            }
        }
        self.execution
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildVocab(a) => vocab::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Precompute(a) => score::run_precompute(a),
        Command::Rescore(a) => score::run_rescore(a),
        Command::Replay(a) => replay(a),
    }
}

fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let m = RunManifest::read(&args.manifest)?;
    if m.tool != manifest::TOOL_NAME {
        return Err(CliError::Input(format!("{}: not an {} manifest", args.manifest.display(), manifest::TOOL_NAME)));
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        log::warn!("manifest written by version {}, running {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    if args.force {
        if let Err(e) = m.verify_inputs() {
            log::warn!("{e}");
        }
    } else {
        m.verify_inputs()?;
    }
    fn config<T: serde::de::DeserializeOwned>(m: &RunManifest) -> Result<T, CliError> {
        serde_json::from_value(m.config.clone())
            .map_err(|e| CliError::Input(format!("manifest config for {}: {e}", m.command)))
    }
    log::info!("replaying {}", m.command);
    match m.command.as_str() {
        vocab::NAME => vocab::run(config(&m)?),
        train::NAME => train::run(config(&m)?),
        eval::NAME => eval::run(config(&m)?),
        score::PRECOMPUTE => score::run_precompute(config(&m)?),
        score::RESCORE => score::run_rescore(config(&m)?),
        other => Err(CliError::Input(format!("unknown command {other:?} in manifest"))),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Output(format!("cannot create {}: {e}", path.display())))
}

/// A file, or standard output when `path` is `None` or `-`.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) if p != Path::new("-") => Ok(Box::new(create(p)?)),
        _ => Ok(Box::new(BufWriter::new(std::io::stdout().lock()))),
    }
}

fn write_err(e: std::io::Error) -> CliError {
    CliError::Output(format!("write failed: {e}"))
}

fn load_vocab(path: &Path, side: Side) -> Result<Vocabulary, CliError> {
    Ok(Vocabulary::read_from(open(path)?, side, &path.display().to_string())?)
}

fn load_model(path: &Path) -> Result<NetworkModel, CliError> {
    NetworkModel::load(path).map_err(|e: ModelFileError| CliError::Input(format!("{}: {e}", path.display())))
}

/// Checks that `model` was trained with exactly these vocabularies.
fn check_model_vocab(model: &NetworkModel, src: &Vocabulary, tgt: &Vocabulary) -> Result<(), CliError> {
    let meta = model.metadata();
    for (side, vocab, hash, dim) in [
        ("source", src, meta.source_vocab_hash, model.input_dim()),
        ("target", tgt, meta.target_vocab_hash, model.output_dim()),
    ] {
        if vocab.len() != dim {
            return Err(CliError::Input(format!(
                "{side} vocabulary has {} entries but the model expects {dim}",
                vocab.len()
            )));
        }
        if vocab.content_hash() != hash {
            return Err(CliError::Input(format!(
                "{side} vocabulary does not match the one the model was trained with (hash {} vs {})",
                manifest::hex(&vocab.content_hash()),
                manifest::hex(&hash)
            )));
        }
    }
    Ok(())
}

/// Manifest destination: explicit, else next to `artifact` if it is a file.
fn manifest_path(explicit: Option<&Path>, artifact: Option<&Path>) -> Option<PathBuf> {
    match (explicit, artifact) {
        (Some(p), _) => Some(p.to_owned()),
        (None, Some(a)) if a != Path::new("-") => Some(manifest::default_path(a)),
        _ => None,
    }
}
