use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::corpus::Side;
use crate::network::forward;
use crate::training::evaluate;

use super::train::load_examples;
use super::{check_model_vocab, load_model, load_vocab, manifest_path, output, write_err, CliError, ExecArgs, RunManifest};

pub(super) const NAME: &str = "eval";

/// Outputs strictly above this count as predicting the word present; an
/// output of exactly 0.5 predicts absence.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
    /// Also report precision and recall per target word.
    #[arg(long)]
    pub per_word: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub exec: ExecArgs,
    /// Report destination [default: standard output].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Manifest path [default: <out>.manifest.json when --out is a file].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

fn ratio(num: u64, den: u64) -> String {
    if den == 0 {
        "-".into()
    } else {
        format!("{:.6}", num as f64 / den as f64)
    }
}

pub(super) fn run(args: EvalArgs) -> Result<(), CliError> {
    let exec = args.exec.setup();
    let model = load_model(&args.model)?;
    let src_vocab = load_vocab(&args.src_vocab, Side::Source)?;
    let tgt_vocab = load_vocab(&args.tgt_vocab, Side::Target)?;
    check_model_vocab(&model, &src_vocab, &tgt_vocab)?;
    let set = load_examples(&args.src, &args.tgt, &src_vocab, &tgt_vocab)?;
    let mean = evaluate(&model, &set, exec)?;

    let mut out = output(args.out.as_deref())?;
    writeln!(out, "sentences\t{}", set.len()).map_err(write_err)?;
    writeln!(out, "mean_cross_entropy\t{mean}").map_err(write_err)?;

    if args.per_word {
        let predictions = exec.map(&set, |_, ex| {
            forward(&model, &ex.source, None).map(|a| {
                a.output()
                    .iter()
                    .map(|&p| p > THRESHOLD)
                    .collect::<Vec<bool>>()
            })
        });
        let mut counts = vec![Counts::default(); tgt_vocab.len()];
        for (ex, predicted) in set.iter().zip(predictions) {
            let predicted = predicted.map_err(|e| CliError::Input(e.to_string()))?;
            for (j, (&p, c)) in predicted.iter().zip(counts.iter_mut()).enumerate() {
                match (p, ex.target.contains(j)) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => {}
                }
            }
        }
        writeln!(out, "word\tprecision\trecall\ttp\tfp\tfn").map_err(write_err)?;
        for (j, c) in counts.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                tgt_vocab.token(j).unwrap_or("?"),
                ratio(c.tp, c.tp + c.fp),
                ratio(c.tp, c.tp + c.fn_),
                c.tp,
                c.fp,
                c.fn_
            )
            .map_err(write_err)?;
        }
    }
    out.flush().map_err(write_err)?;

    if let Some(path) = manifest_path(args.manifest.as_deref(), args.out.as_deref()) {
        let mut m = RunManifest::new(NAME, &args, Some(model.metadata().seed))?;
        m.add_input("model", &args.model)?;
        m.add_input("src", &args.src)?;
        m.add_input("tgt", &args.tgt)?;
        m.add_input("src_vocab", &args.src_vocab)?;
        m.add_input("tgt_vocab", &args.tgt_vocab)?;
        m.write(&path)?;
    }
    Ok(())
}
