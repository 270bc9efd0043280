use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::corpus::{featurize_source, featurize_target, load_parallel_corpus, Side, Vocabulary};
use crate::network::ModelMetadata;
use crate::training::{self, EpochReport, Example, SnapshotStore, TrainError, TrainingConfig};

use super::config::{parse_num, ConfigFile};
use super::{create, load_vocab, manifest_path, write_err, CliError, ExecArgs, RunManifest};

pub(super) const NAME: &str = "train";

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_src: PathBuf,
    #[arg(long)]
    pub train_tgt: PathBuf,
    #[arg(long)]
    pub valid_src: PathBuf,
    #[arg(long)]
    pub valid_tgt: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
    /// Where the best model is written.
    #[arg(long, short)]
    pub out: PathBuf,
    /// key = value file with defaults for the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated hidden layer sizes; "" trains without hidden layers
    /// [default: 1000,500,1000].
    #[arg(long)]
    pub hidden: Option<String>,
    /// Minibatch size, or "full" for one update per epoch [default: 15].
    #[arg(long)]
    pub batch: Option<String>,
    /// Learning rate [default: 0.02].
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 35]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// L2 weight decay coefficient [default: 1e-5].
    #[arg(long)]
    pub l2: Option<f64>,
    /// Drop probability for the last hidden layer [default: 0].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Half-width of the uniform weight initialization [default: 0.05].
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub exec: ExecArgs,
    /// Per-epoch log, epoch<TAB>train_E<TAB>valid_E<TAB>seconds
    /// [default: <out>.epochs.tsv].
    #[arg(long)]
    pub epoch_log: Option<PathBuf>,
    /// Directory for a model file per improving epoch.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Manifest path [default: <out>.manifest.json].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn parse_hidden(s: &str) -> Result<Vec<usize>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|d| parse_num::<usize>(d.trim())).collect()
}

pub fn parse_batch(s: &str) -> Result<usize, String> {
    match s.trim() {
        "full" => Ok(usize::MAX),
        n => parse_num(n),
    }
}

fn format_batch(n: usize) -> String {
    if n == usize::MAX {
        "full".into()
    } else {
        n.to_string()
    }
}

impl TrainArgs {
    /// Defaults, then the config file, then explicit flags. The returned
    /// arguments have every option filled in and no config file.
    pub fn resolve(&self) -> Result<(TrainArgs, TrainingConfig), CliError> {
        let mut cfg = TrainingConfig {
            execution: self.exec.execution,
            ..TrainingConfig::default()
        };
        if let Some(path) = &self.config {
            let mut file = ConfigFile::read(path)?;
            if let Some(v) = file.take(&["hidden", "hidden_dims"], parse_hidden)? {
                cfg.hidden_dims = v;
            }
            if let Some(v) = file.take(&["batch", "batch_size"], parse_batch)? {
                cfg.batch_size = v;
            }
            if let Some(v) = file.take(&["lr", "learning_rate"], parse_num)? {
                cfg.learning_rate = v;
            }
            if let Some(v) = file.take(&["epochs"], parse_num)? {
                cfg.epochs = v;
            }
            if let Some(v) = file.take(&["l2"], parse_num)? {
                cfg.l2 = v;
            }
            if let Some(v) = file.take(&["dropout"], parse_num)? {
                cfg.dropout = v;
            }
            if let Some(v) = file.take(&["seed"], parse_num)? {
                cfg.seed = v;
            }
            if let Some(v) = file.take(&["init_scale"], parse_num)? {
                cfg.init_scale = v;
            }
            file.finish()?;
        }
        let flag = |name: &str, e: String| CliError::Input(format!("--{name}: {e}"));
        if let Some(h) = &self.hidden {
            cfg.hidden_dims = parse_hidden(h).map_err(|e| flag("hidden", e))?;
        }
        if let Some(b) = &self.batch {
            cfg.batch_size = parse_batch(b).map_err(|e| flag("batch", e))?;
        }
        cfg.learning_rate = self.lr.unwrap_or(cfg.learning_rate);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.l2 = self.l2.unwrap_or(cfg.l2);
        cfg.dropout = self.dropout.unwrap_or(cfg.dropout);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.init_scale = self.init_scale.unwrap_or(cfg.init_scale);
        cfg.validate()?;

        let hidden: Vec<String> = cfg.hidden_dims.iter().map(usize::to_string).collect();
        let resolved = TrainArgs {
            config: None,
            hidden: Some(hidden.join(",")),
            batch: Some(format_batch(cfg.batch_size)),
            lr: Some(cfg.learning_rate),
            epochs: Some(cfg.epochs),
            l2: Some(cfg.l2),
            dropout: Some(cfg.dropout),
            seed: Some(cfg.seed),
            init_scale: Some(cfg.init_scale),
            epoch_log: Some(self.epoch_log.clone().unwrap_or_else(|| default_epoch_log(&self.out))),
            ..self.clone()
        };
        Ok((resolved, cfg))
    }
}

fn default_epoch_log(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".epochs.tsv");
    PathBuf::from(name)
}

/// Featurizes a line-aligned corpus; pairs with an empty side are skipped.
pub fn load_examples(
    src: &Path,
    tgt: &Path,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<Vec<Example>, CliError> {
    let mut corpus = load_parallel_corpus(src, tgt)?;
    let mut out = Vec::new();
    for pair in corpus.by_ref() {
        let pair = pair?;
        out.push(Example {
            source: featurize_source(&pair.source, src_vocab)?,
            target: featurize_target(&pair.target, tgt_vocab)?,
        });
    }
    if corpus.skipped() > 0 {
        log::warn!("{}: skipped {} pairs with an empty side", src.display(), corpus.skipped());
    }
    Ok(out)
}

fn write_epoch_log(path: &Path, reports: &[EpochReport]) -> Result<(), CliError> {
    let mut out = create(path)?;
    for r in reports {
        writeln!(out, "{}", r.to_line()).map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

fn save(model: &crate::network::NetworkModel, path: &Path) -> Result<(), CliError> {
    model
        .save(path)
        .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

pub(super) fn run(args: TrainArgs) -> Result<(), CliError> {
    let (args, config) = args.resolve()?;
    let config = TrainingConfig {
        execution: args.exec.setup(),
        ..config
    };
    let src_vocab = load_vocab(&args.src_vocab, Side::Source)?;
    let tgt_vocab = load_vocab(&args.tgt_vocab, Side::Target)?;
    let train_set = load_examples(&args.train_src, &args.train_tgt, &src_vocab, &tgt_vocab)?;
    let valid_set = load_examples(&args.valid_src, &args.valid_tgt, &src_vocab, &tgt_vocab)?;
    log::info!(
        "{} training / {} validation pairs, dims {} -> {:?} -> {}",
        train_set.len(),
        valid_set.len(),
        src_vocab.len(),
        config.hidden_dims,
        tgt_vocab.len()
    );

    let mut model = training::init_model(
        src_vocab.len(),
        &config.hidden_dims,
        tgt_vocab.len(),
        config.seed,
        config.init_scale,
    )
    .map_err(|e| CliError::Input(e.to_string()))?;
    model.set_metadata(ModelMetadata {
        source_vocab_hash: src_vocab.content_hash(),
        target_vocab_hash: tgt_vocab.content_hash(),
        ngram_config: src_vocab.ngram_config(),
        seed: config.seed,
    });

    let snapshots = match &args.snapshots {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))?;
            SnapshotStore::Directory(dir.clone())
        }
        None => SnapshotStore::Memory,
    };
    let epoch_log = args.epoch_log.clone().expect("resolved");
    let mut manifest = RunManifest::new(NAME, &args, Some(config.seed))?;
    for (role, path) in [
        ("train_src", &args.train_src),
        ("train_tgt", &args.train_tgt),
        ("valid_src", &args.valid_src),
        ("valid_tgt", &args.valid_tgt),
        ("src_vocab", &args.src_vocab),
        ("tgt_vocab", &args.tgt_vocab),
    ] {
        manifest.add_input(role, path)?;
    }
    let manifest_file = manifest_path(args.manifest.as_deref(), Some(&args.out));

    match training::train_from(model, &train_set, &valid_set, &config, &snapshots, &mut |_| {}) {
        Ok(outcome) => {
            save(&outcome.model, &args.out)?;
            write_epoch_log(&epoch_log, &outcome.reports)?;
            log::info!(
                "best epoch {} of {}; model written to {}",
                outcome.best_epoch,
                outcome.reports.len(),
                args.out.display()
            );
        }
        Err(TrainError::Divergence {
            epoch,
            source,
            last_good,
            reports,
        }) => {
            write_epoch_log(&epoch_log, &reports)?;
            let kept = match last_good {
                Some(m) => {
                    save(&m, &args.out)?;
                    format!("best model so far written to {}", args.out.display())
                }
                None => "no epoch completed, no model written".into(),
            };
            if let Some(p) = &manifest_file {
                manifest.write(p)?;
            }
            return Err(CliError::Divergence(format!(
                "divergence detected at epoch {epoch}: {source}; {kept}"
            )));
        }
        Err(e) => return Err(e.into()),
    }
    if let Some(p) = &manifest_file {
        manifest.write(p)?;
    }
    Ok(())
}
