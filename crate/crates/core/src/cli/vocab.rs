use std::cell::RefCell;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocabulary, load_parallel_corpus, CorpusError, NgramConfig, Side, Vocabulary};

use super::{create, manifest_path, write_err, CliError, RunManifest};

pub(super) const NAME: &str = "build-vocab";

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct BuildVocabArgs {
    /// Source side of the training corpus.
    #[arg(long)]
    pub src: PathBuf,
    /// Target side, line-aligned with --src.
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub src_out: PathBuf,
    #[arg(long)]
    pub tgt_out: PathBuf,
    /// Most frequent source words kept; 0 keeps all.
    #[arg(long, default_value_t = 0)]
    pub src_cutoff: usize,
    /// Most frequent target words kept; 0 keeps all.
    #[arg(long, default_value_t = 0)]
    pub tgt_cutoff: usize,
    /// Most frequent source bigrams added as features.
    #[arg(long, default_value_t = 0)]
    pub bigrams: usize,
    /// Most frequent source trigrams added as features (needs --bigrams).
    #[arg(long, default_value_t = 0)]
    pub trigrams: usize,
    /// Manifest path (default: <src-out>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Sentence and token counts of one corpus side.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
struct SideStats {
    sentences: usize,
    tokens: usize,
    skipped: usize,
}

fn cutoff(n: usize) -> Option<usize> {
    (n > 0).then_some(n)
}

/// Builds one side's vocabulary in a single streaming pass.
fn build_side(
    args: &BuildVocabArgs,
    side: Side,
    limit: usize,
    ngrams: NgramConfig,
) -> Result<(Vocabulary, SideStats), CliError> {
    let mut corpus = load_parallel_corpus(&args.src, &args.tgt)?;
    let stats = RefCell::new(SideStats::default());
    let error: RefCell<Option<CorpusError>> = RefCell::new(None);
    let sentences = corpus.by_ref().map_while(|pair| match pair {
        Ok(p) => {
            let tokens = match side {
                Side::Source => p.source,
                Side::Target => p.target,
            };
            let mut s = stats.borrow_mut();
            s.sentences += 1;
            s.tokens += tokens.len();
            Some(tokens)
        }
        Err(e) => {
            *error.borrow_mut() = Some(e);
            None
        }
    });
    let vocab = build_vocabulary(sentences, side, cutoff(limit), ngrams);
    if let Some(e) = error.into_inner() {
        return Err(e.into());
    }
    let mut stats = stats.into_inner();
    stats.skipped = corpus.skipped();
    Ok((vocab?, stats))
}

fn write_vocab(vocab: &Vocabulary, path: &Path) -> Result<(), CliError> {
    let mut out = create(path)?;
    vocab.write_to(&mut out).map_err(write_err)?;
    out.flush().map_err(write_err)?;
    log::info!("wrote {} entries to {}", vocab.len(), path.display());
    Ok(())
}

pub(super) fn run(args: BuildVocabArgs) -> Result<(), CliError> {
    let ngrams = NgramConfig::new(args.bigrams, args.trigrams)?;
    let (src_vocab, src_stats) = build_side(&args, Side::Source, args.src_cutoff, ngrams)?;
    let (tgt_vocab, tgt_stats) = build_side(&args, Side::Target, args.tgt_cutoff, NgramConfig::NONE)?;
    if src_stats.skipped > 0 {
        log::warn!("{} line pairs with an empty side were skipped", src_stats.skipped);
    }
    write_vocab(&src_vocab, &args.src_out)?;
    write_vocab(&tgt_vocab, &args.tgt_out)?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let ng = src_vocab.ngram_config();
    writeln!(out, "side\tsentences\ttokens\tvocabulary\tbigrams\ttrigrams").map_err(write_err)?;
    writeln!(
        out,
        "source\t{}\t{}\t{}\t{}\t{}",
        src_stats.sentences,
        src_stats.tokens,
        src_vocab.len(),
        ng.max_bigrams,
        ng.max_trigrams
    )
    .map_err(write_err)?;
    writeln!(
        out,
        "target\t{}\t{}\t{}\t0\t0",
        tgt_stats.sentences,
        tgt_stats.tokens,
        tgt_vocab.len()
    )
    .map_err(write_err)?;

    if let Some(path) = manifest_path(args.manifest.as_deref(), Some(&args.src_out)) {
        let mut m = RunManifest::new(NAME, &args, None)?;
        m.add_input("src", &args.src)?;
        m.add_input("tgt", &args.tgt)?;
        m.write(&path)?;
    }
    Ok(())
}
