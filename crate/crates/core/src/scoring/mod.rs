//! Sentence- and phrase-level lexical scores from a trained network.
//!
//! For a source sentence the network output is computed once and the log
//! probabilities of a restricted set of target words are kept in
//! [`PrecomputedScores`]. Hypotheses are then scored either once per distinct
//! word ([`ScoreMode::Unique`]) or once per token ([`ScoreMode::Positional`]);
//! the positional form decomposes additively over phrases.

mod nbest;
mod phrase_table;

pub use nbest::{NBestEntry, RescoreOptions, RescoreStats, Rescorer, SourceSentences, FEATURE_NAME};
pub use phrase_table::{restrict_target_vocab, PhraseTable};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::{CorpusError, FeatureVector, Vocabulary, UNK_INDEX};
use crate::network::{clamp_prob, forward, NetworkError, NetworkModel};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: sentence id {id} is outside the source corpus ({available} sentences)")]
    SourceOutOfRange {
        path: String,
        line: usize,
        id: usize,
        available: usize,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("write failed: {0}")]
    Output(#[source] std::io::Error),
}

/// Which sentence score to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Each distinct target word counted once.
    Unique,
    /// Every token counted; additive over phrases.
    #[default]
    Positional,
}

impl std::str::FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unique" => Ok(ScoreMode::Unique),
            "positional" => Ok(ScoreMode::Positional),
            other => Err(format!("unknown score mode {other:?} (expected unique or positional)")),
        }
    }
}

/// What to do with a hypothesis word that has no stored probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    /// Score it with the probability of the unknown-word output.
    #[default]
    Unk,
    /// Leave it out of the sum and count it.
    Skip,
}

impl std::str::FromStr for OovPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unk" => Ok(OovPolicy::Unk),
            "skip" => Ok(OovPolicy::Skip),
            other => Err(format!("unknown OOV policy {other:?} (expected unk or skip)")),
        }
    }
}

/// A log-probability plus the number of words the policy left out.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Score {
    pub logprob: f64,
    pub skipped: usize,
}

/// Log presence probabilities of a restricted target vocabulary for one
/// source sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedScores {
    source_id: usize,
    probs: BTreeMap<String, f64>,
    unk_logprob: f64,
    policy: OovPolicy,
}

impl PrecomputedScores {
    /// Builds the table from an already computed network output. Words not in
    /// `target_vocab` take the unknown-word output.
    pub fn from_output<'a, I>(
        source_id: usize,
        output: &[f64],
        restricted: I,
        target_vocab: &Vocabulary,
        policy: OovPolicy,
    ) -> Result<Self, NetworkError>
    where
        I: IntoIterator<Item = &'a String>,
    {
        if output.len() != target_vocab.len() {
            return Err(NetworkError::DimensionMismatch {
                what: "target vocabulary",
                expected: output.len(),
                actual: target_vocab.len(),
            });
        }
        let logp = |i: usize| clamp_prob(output[i]).ln();
        let probs = restricted
            .into_iter()
            .map(|w| (w.clone(), logp(target_vocab.lookup(w))))
            .collect();
        Ok(PrecomputedScores {
            source_id,
            probs,
            unk_logprob: logp(UNK_INDEX),
            policy,
        })
    }

    pub fn source_id(&self) -> usize {
        self.source_id
    }

    pub fn probs(&self) -> &BTreeMap<String, f64> {
        &self.probs
    }

    pub fn restricted_vocab(&self) -> BTreeSet<&str> {
        self.probs.keys().map(String::as_str).collect()
    }

    pub fn logprob(&self, word: &str) -> Option<f64> {
        self.probs.get(word).copied()
    }

    pub fn policy(&self) -> OovPolicy {
        self.policy
    }

    pub fn with_policy(mut self, policy: OovPolicy) -> Self {
        self.policy = policy;
        self
    }

    fn add(&self, score: &mut Score, word: &str) {
        match (self.probs.get(word), self.policy) {
            (Some(&lp), _) => score.logprob += lp,
            (None, OovPolicy::Unk) => score.logprob += self.unk_logprob,
            (None, OovPolicy::Skip) => score.skipped += 1,
        }
    }
}

/// One forward pass for `source`, then [`PrecomputedScores::from_output`].
pub fn precompute<'a, I>(
    model: &NetworkModel,
    source_id: usize,
    source: &FeatureVector,
    restricted: I,
    target_vocab: &Vocabulary,
    policy: OovPolicy,
) -> Result<PrecomputedScores, NetworkError>
where
    I: IntoIterator<Item = &'a String>,
{
    let output = forward(model, source, None)?.into_output();
    PrecomputedScores::from_output(source_id, &output, restricted, target_vocab, policy)
}

/// Sum of log probabilities over the distinct words of `target`, taken in
/// order of first occurrence.
pub fn score_sentence_unique(scores: &PrecomputedScores, target: &[String]) -> Score {
    let mut seen = HashSet::with_capacity(target.len());
    let mut score = Score::default();
    for w in target {
        if seen.insert(w.as_str()) {
            scores.add(&mut score, w);
        }
    }
    score
}

/// Sum of log probabilities over every token of `target`.
pub fn score_sentence_positional(scores: &PrecomputedScores, target: &[String]) -> Score {
    let mut score = Score::default();
    for w in target {
        scores.add(&mut score, w);
    }
    score
}

/// Positional score of a target phrase; scores of adjacent phrases add up to
/// the positional score of their concatenation.
pub fn score_phrase_pair(scores: &PrecomputedScores, target_phrase: &[String]) -> Score {
    score_sentence_positional(scores, target_phrase)
}

pub fn score_sentence(scores: &PrecomputedScores, target: &[String], mode: ScoreMode) -> Score {
    match mode {
        ScoreMode::Unique => score_sentence_unique(scores, target),
        ScoreMode::Positional => score_sentence_positional(scores, target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, NgramConfig, Side};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn fixed(probs: &[(&str, f64)]) -> PrecomputedScores {
        PrecomputedScores {
            source_id: 0,
            probs: probs.iter().map(|&(w, p)| (w.to_owned(), p.ln())).collect(),
            unk_logprob: 0.01f64.ln(),
            policy: OovPolicy::Unk,
        }
    }

    #[test]
    fn unique_counts_each_word_once() {
        let s = fixed(&[("le", 0.5), ("chat", 0.25)]);
        let a = score_sentence_unique(&s, &toks("le chat"));
        let b = score_sentence_unique(&s, &toks("le chat le"));
        assert!((a.logprob - 0.125f64.ln()).abs() < 1e-15);
        assert_eq!(a, b);
        assert_eq!(score_sentence_unique(&s, &[]).logprob, 0.0);
    }

    #[test]
    fn positional_counts_every_token() {
        let s = fixed(&[("le", 0.5), ("chat", 0.25)]);
        let p = score_sentence_positional(&s, &toks("le chat le"));
        assert!((p.logprob - 0.0625f64.ln()).abs() < 1e-15);
        let distinct = toks("chat le");
        assert_eq!(
            score_sentence_positional(&s, &distinct),
            score_sentence_unique(&s, &distinct)
        );
    }

    #[test]
    fn phrase_scores_add_up() {
        let s = fixed(&[("le", 0.5), ("chat", 0.25), ("noir", 0.7)]);
        assert!((score_phrase_pair(&s, &toks("le")).logprob - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(score_phrase_pair(&s, &[]).logprob, 0.0);
        let whole = score_phrase_pair(&s, &toks("le chat noir")).logprob;
        let parts = score_phrase_pair(&s, &toks("le")).logprob
            + score_phrase_pair(&s, &toks("chat noir")).logprob;
        assert!((whole - parts).abs() < 1e-15);
    }

    #[test]
    fn oov_policies() {
        let s = fixed(&[("le", 0.5)]);
        let unk = score_sentence_positional(&s, &toks("le xx xx"));
        assert!((unk.logprob - (0.5f64.ln() + 2.0 * 0.01f64.ln())).abs() < 1e-14);
        assert_eq!(unk.skipped, 0);
        let s = s.with_policy(OovPolicy::Skip);
        let skip = score_sentence_positional(&s, &toks("le xx xx"));
        assert_eq!(skip.logprob, 0.5f64.ln());
        assert_eq!(skip.skipped, 2);
        assert_eq!(score_sentence_unique(&s, &toks("le xx xx")).skipped, 1);
    }

    #[test]
    fn zero_model_stores_ln_half() {
        let pairs = [(toks("a b"), toks("x y"))];
        let src = build_vocabulary(pairs.iter().map(|p| &p.0), Side::Source, None, NgramConfig::NONE).unwrap();
        let tgt = build_vocabulary(pairs.iter().map(|p| &p.1), Side::Target, None, NgramConfig::NONE).unwrap();
        let model = NetworkModel::zeros(&[src.len(), 4, tgt.len()]).unwrap();
        let x = crate::corpus::featurize_source(&toks("a b"), &src).unwrap();
        let restricted: BTreeSet<String> = ["x", "y", "zz"].iter().map(|s| s.to_string()).collect();
        let s = precompute(&model, 3, &x, &restricted, &tgt, OovPolicy::Unk).unwrap();
        assert_eq!(s.source_id(), 3);
        assert_eq!(s.probs().len(), 3);
        assert!(s.probs().values().all(|&v| v == 0.5f64.ln()));
        let empty = precompute(&model, 0, &x, &BTreeSet::new(), &tgt, OovPolicy::Unk).unwrap();
        assert!(empty.probs().is_empty());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("unique".parse::<ScoreMode>().unwrap(), ScoreMode::Unique);
        assert_eq!(ScoreMode::default(), ScoreMode::Positional);
        assert!("bogus".parse::<ScoreMode>().is_err());
        assert_eq!("skip".parse::<OovPolicy>().unwrap(), OovPolicy::Skip);
    }
}
