use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::corpus::{featurize_source, tokenize, LineReader, Side};
use crate::scoring::{
    precompute, restrict_target_vocab, score_phrase_pair, OovPolicy, PhraseTable, RescoreOptions, Rescorer,
    ScoreMode, SourceSentences,
};

use super::{
    check_model_vocab, load_model, load_vocab, manifest_path, open, output, write_err, CliError, ExecArgs,
    RunManifest,
};

pub(super) const PRECOMPUTE: &str = "precompute";
pub(super) const RESCORE: &str = "rescore";

/// Source sentences processed per parallel batch.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct PrecomputeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
    /// Source sentences, one per line; ids are 0-based line numbers.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub phrase_table: PathBuf,
    /// unk or skip: how target words outside the vocabulary are scored.
    #[arg(long, default_value = "unk")]
    pub oov: OovPolicy,
    #[command(flatten)]
    #[serde(flatten)]
    pub exec: ExecArgs,
    /// `id ||| source phrase ||| target phrase ||| score` lines
    /// [default: standard output].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct RescoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
    /// Source sentences the n-best ids refer to (0-based line numbers).
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub nbest: PathBuf,
    /// Restrict each sentence's vocabulary to its matching phrase pairs;
    /// without it the words of the sentence's hypotheses are used.
    #[arg(long)]
    pub phrase_table: Option<PathBuf>,
    /// unique or positional.
    #[arg(long, default_value = "positional")]
    pub mode: ScoreMode,
    /// Weight of the feature in the total score.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub weight: f64,
    /// unk or skip: how hypothesis words without a probability are scored.
    #[arg(long, default_value = "unk")]
    pub oov: OovPolicy,
    #[command(flatten)]
    #[serde(flatten)]
    pub exec: ExecArgs,
    /// Rescored n-best list [default: standard output].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn read_table(path: &Path) -> Result<PhraseTable, CliError> {
    let table = PhraseTable::read_from(open(path)?, &path.display().to_string())?;
    log::info!("{}: {} source phrases", path.display(), table.len());
    Ok(table)
}

pub(super) fn run_precompute(args: PrecomputeArgs) -> Result<(), CliError> {
    let exec = args.exec.setup();
    let model = load_model(&args.model)?;
    let src_vocab = load_vocab(&args.src_vocab, Side::Source)?;
    let tgt_vocab = load_vocab(&args.tgt_vocab, Side::Target)?;
    check_model_vocab(&model, &src_vocab, &tgt_vocab)?;
    let table = read_table(&args.phrase_table)?;

    let score_sentence = |id: usize, tokens: &Vec<String>| -> Result<Vec<String>, CliError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let x = featurize_source(tokens, &src_vocab)?;
        let restricted = restrict_target_vocab(tokens, &table);
        let scores = precompute(&model, id, &x, &restricted, &tgt_vocab, args.oov)
            .map_err(|e| CliError::Input(e.to_string()))?;
        let mut seen: BTreeSet<&[String]> = BTreeSet::new();
        let mut lines = Vec::new();
        for (_, src, targets) in table.matches(tokens) {
            if !seen.insert(src) {
                continue;
            }
            for tgt in targets {
                let s = score_phrase_pair(&scores, tgt);
                lines.push(format!("{id} ||| {} ||| {} ||| {}", src.join(" "), tgt.join(" "), s.logprob));
            }
        }
        Ok(lines)
    };

    let mut out = output(args.out.as_deref())?;
    let mut chunk: Vec<Vec<String>> = Vec::with_capacity(CHUNK);
    let mut first_id = 0;
    let mut pairs = 0usize;
    let mut flush = |chunk: &mut Vec<Vec<String>>, first_id: usize| -> Result<(), CliError> {
        for lines in exec.map(chunk, |i, tokens| score_sentence(first_id + i, tokens)) {
            for line in lines? {
                writeln!(out, "{line}").map_err(write_err)?;
                pairs += 1;
            }
        }
        chunk.clear();
        Ok(())
    };
    for line in LineReader::open(&args.source)? {
        let (_, text) = line?;
        chunk.push(tokenize(&text));
        if chunk.len() == CHUNK {
            flush(&mut chunk, first_id)?;
            first_id += CHUNK;
        }
    }
    flush(&mut chunk, first_id)?;
    out.flush().map_err(write_err)?;
    log::info!("scored {pairs} phrase pairs");

    if let Some(path) = manifest_path(args.manifest.as_deref(), args.out.as_deref()) {
        let mut m = RunManifest::new(PRECOMPUTE, &args, Some(model.metadata().seed))?;
        m.add_input("model", &args.model)?;
        m.add_input("src_vocab", &args.src_vocab)?;
        m.add_input("tgt_vocab", &args.tgt_vocab)?;
        m.add_input("source", &args.source)?;
        m.add_input("phrase_table", &args.phrase_table)?;
        m.write(&path)?;
    }
    Ok(())
}

pub(super) fn run_rescore(args: RescoreArgs) -> Result<(), CliError> {
    let exec = args.exec.setup();
    let model = load_model(&args.model)?;
    let src_vocab = load_vocab(&args.src_vocab, Side::Source)?;
    let tgt_vocab = load_vocab(&args.tgt_vocab, Side::Target)?;
    check_model_vocab(&model, &src_vocab, &tgt_vocab)?;
    let table = args.phrase_table.as_deref().map(read_table).transpose()?;

    let rescorer = Rescorer {
        model: &model,
        source_vocab: &src_vocab,
        target_vocab: &tgt_vocab,
        table: table.as_ref(),
        options: RescoreOptions {
            mode: args.mode,
            weight: args.weight,
            policy: args.oov,
            execution: exec,
            ..RescoreOptions::default()
        },
    };
    let mut sources = SourceSentences::from_path(&args.source)?;
    let out = output(args.out.as_deref())?;
    let stats = rescorer.rescore(&mut sources, open(&args.nbest)?, &args.nbest.display().to_string(), out)?;
    log::info!(
        "rescored {} hypotheses of {} sentences ({} forward passes)",
        stats.hypotheses,
        stats.sentences,
        stats.forward_passes
    );
    if stats.skipped_words > 0 {
        log::warn!("{} hypothesis words had no probability and were skipped", stats.skipped_words);
    }

    if let Some(path) = manifest_path(args.manifest.as_deref(), args.out.as_deref()) {
        let mut m = RunManifest::new(RESCORE, &args, Some(model.metadata().seed))?;
        m.add_input("model", &args.model)?;
        m.add_input("src_vocab", &args.src_vocab)?;
        m.add_input("tgt_vocab", &args.tgt_vocab)?;
        m.add_input("source", &args.source)?;
        m.add_input("nbest", &args.nbest)?;
        if let Some(t) = &args.phrase_table {
            m.add_input("phrase_table", t)?;
        }
        m.write(&path)?;
    }
    Ok(())
}
