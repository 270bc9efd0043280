use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::corpus::{featurize_source, tokenize, CorpusError, FeatureVector, LineReader, Vocabulary};
use crate::exec::Execution;
use crate::network::{forward, NetworkError, NetworkModel};

use super::{restrict_target_vocab, OovPolicy, PhraseTable, PrecomputedScores, ScoreMode, ScoringError};

/// Name of the feature added to every hypothesis.
pub const FEATURE_NAME: &str = "nndwl";

const FIELD_SEP: &str = "|||";

/// One `id ||| hypothesis ||| features ||| total [||| ...]` line.
#[derive(Debug, Clone, PartialEq)]
pub struct NBestEntry {
    /// 0-based index into the source corpus.
    pub sentence_id: usize,
    pub hypothesis: Vec<String>,
    /// Feature names (without the trailing `=`) and their value tokens,
    /// kept verbatim.
    pub features: Vec<(String, Vec<String>)>,
    pub total: f64,
    total_text: String,
    /// Fields after the total, kept verbatim.
    pub extra: Vec<String>,
}

impl NBestEntry {
    pub fn parse(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split(FIELD_SEP).map(str::trim).collect();
        if fields.len() < 4 {
            return Err(format!("expected at least 4 ||| separated fields, found {}", fields.len()));
        }
        let sentence_id = fields[0]
            .parse()
            .map_err(|_| format!("invalid sentence id {:?}", fields[0]))?;
        let hypothesis = tokenize(fields[1]);
        let mut features: Vec<(String, Vec<String>)> = Vec::new();
        for tok in fields[2].split_whitespace() {
            match tok.strip_suffix('=') {
                Some(name) if !name.is_empty() => features.push((name.to_owned(), Vec::new())),
                _ => match features.last_mut() {
                    Some((_, values)) => values.push(tok.to_owned()),
                    None => return Err(format!("feature value {tok:?} has no name")),
                },
            }
        }
        let total_text = fields[3].to_owned();
        let total: f64 = total_text
            .parse()
            .map_err(|_| format!("invalid total score {total_text:?}"))?;
        Ok(NBestEntry {
            sentence_id,
            hypothesis,
            features,
            total,
            total_text,
            extra: fields[4..].iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn to_line(&self) -> String {
        let mut feats = String::new();
        for (name, values) in &self.features {
            if !feats.is_empty() {
                feats.push(' ');
            }
            feats.push_str(name);
            feats.push('=');
            for v in values {
                feats.push(' ');
                feats.push_str(v);
            }
        }
        let mut line = format!(
            "{} ||| {} ||| {} ||| {}",
            self.sentence_id,
            self.hypothesis.join(" "),
            feats,
            self.total_text
        );
        for e in &self.extra {
            line.push_str(" ||| ");
            line.push_str(e);
        }
        line
    }

    pub fn feature(&self, name: &str) -> Option<&[String]> {
        self.features
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn set_total(&mut self, total: f64) {
        if total.to_bits() != self.total.to_bits() {
            self.total = total;
            self.total_text = total.to_string();
        }
    }

    /// Sets the [`FEATURE_NAME`] feature to `value`, replacing an earlier
    /// one, and moves the total by `weight * (value - previous value)`.
    pub fn apply_feature(&mut self, value: f64, weight: f64) -> Result<(), String> {
        let old = match self.feature(FEATURE_NAME) {
            Some([v]) => Some(
                v.parse::<f64>()
                    .map_err(|_| format!("invalid {FEATURE_NAME} value {v:?}"))?,
            ),
            Some(_) => return Err(format!("{FEATURE_NAME} feature must have exactly one value")),
            None => None,
        };
        let mut total = self.total;
        if let Some(old) = old {
            total -= weight * old;
        }
        total += weight * value;
        let text = vec![value.to_string()];
        match self.features.iter_mut().find(|(n, _)| n == FEATURE_NAME) {
            Some((_, v)) => *v = text,
            None => self.features.push((FEATURE_NAME.to_owned(), text)),
        }
        self.set_total(total);
        Ok(())
    }
}

/// Random access by 0-based sentence id to a tokenized source corpus.
///
/// File-backed corpora are streamed; asking for an id before the current
/// position reopens the file.
pub struct SourceSentences {
    inner: Inner,
}

enum Inner {
    Memory(Vec<Vec<String>>),
    File {
        path: PathBuf,
        reader: LineReader,
        next: usize,
    },
}

impl SourceSentences {
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        Ok(SourceSentences {
            inner: Inner::File {
                path: path.to_owned(),
                reader: LineReader::open(path)?,
                next: 0,
            },
        })
    }

    pub fn from_tokens(sentences: Vec<Vec<String>>) -> Self {
        SourceSentences {
            inner: Inner::Memory(sentences),
        }
    }

    pub fn name(&self) -> String {
        match &self.inner {
            Inner::Memory(_) => "<memory>".into(),
            Inner::File { path, .. } => path.display().to_string(),
        }
    }

    /// `Err(n)` when the corpus has only `n` sentences.
    pub fn get(&mut self, id: usize) -> Result<Result<Vec<String>, usize>, CorpusError> {
        match &mut self.inner {
            Inner::Memory(s) => Ok(s.get(id).cloned().ok_or(s.len())),
            Inner::File { path, reader, next } => {
                if id < *next {
                    *reader = LineReader::open(path)?;
                    *next = 0;
                }
                loop {
                    match reader.next() {
                        None => return Ok(Err(*next)),
                        Some(line) => {
                            let (_, text) = line?;
                            *next += 1;
                            if *next == id + 1 {
                                return Ok(Ok(tokenize(&text)));
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescoreOptions {
    pub mode: ScoreMode,
    pub weight: f64,
    pub policy: OovPolicy,
    pub execution: Execution,
    /// Consecutive source sentences processed together.
    pub chunk: usize,
    /// Network outputs kept for repeated source sentences.
    pub cache_capacity: usize,
}

impl Default for RescoreOptions {
    fn default() -> Self {
        RescoreOptions {
            mode: ScoreMode::Positional,
            weight: 1.0,
            policy: OovPolicy::Unk,
            execution: Execution::Sequential,
            chunk: 64,
            cache_capacity: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RescoreStats {
    pub hypotheses: usize,
    /// Groups of consecutive hypotheses sharing a sentence id.
    pub sentences: usize,
    /// Forward passes actually run.
    pub forward_passes: usize,
    /// Hypothesis words left out under [`OovPolicy::Skip`].
    pub skipped_words: usize,
}

/// Adds the lexicon feature to n-best lists.
pub struct Rescorer<'a> {
    pub model: &'a NetworkModel,
    pub source_vocab: &'a Vocabulary,
    pub target_vocab: &'a Vocabulary,
    /// Restricts the precomputed vocabulary; without it each sentence uses
    /// the words of its own hypotheses.
    pub table: Option<&'a PhraseTable>,
    pub options: RescoreOptions,
}

struct Group {
    id: usize,
    first_line: usize,
    entries: Vec<NBestEntry>,
}

impl Rescorer<'_> {
    /// Streams `input` (named `name` in errors) to `out`, one output line per
    /// input line, in input order. Blank lines are dropped.
    pub fn rescore<R: BufRead, W: Write>(
        &self,
        sources: &mut SourceSentences,
        input: R,
        name: &str,
        mut out: W,
    ) -> Result<RescoreStats, ScoringError> {
        let mut stats = RescoreStats::default();
        let mut cache: HashMap<Vec<String>, Arc<Vec<f64>>> = HashMap::new();
        let mut chunk: Vec<Group> = Vec::new();
        let chunk_len = self.options.chunk.max(1);

        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|source| ScoringError::Io {
                path: name.into(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = NBestEntry::parse(&line).map_err(|message| ScoringError::Malformed {
                path: name.to_owned(),
                line: line_no,
                message,
            })?;
            match chunk.last_mut() {
                Some(g) if g.id == entry.sentence_id => g.entries.push(entry),
                _ => {
                    if chunk.len() == chunk_len {
                        self.flush(&mut chunk, sources, name, &mut cache, &mut stats, &mut out)?;
                    }
                    chunk.push(Group {
                        id: entry.sentence_id,
                        first_line: line_no,
                        entries: vec![entry],
                    });
                }
            }
        }
        self.flush(&mut chunk, sources, name, &mut cache, &mut stats, &mut out)?;
        out.flush().map_err(ScoringError::Output)?;
        Ok(stats)
    }

    fn flush<W: Write>(
        &self,
        chunk: &mut Vec<Group>,
        sources: &mut SourceSentences,
        name: &str,
        cache: &mut HashMap<Vec<String>, Arc<Vec<f64>>>,
        stats: &mut RescoreStats,
        out: &mut W,
    ) -> Result<(), ScoringError> {
        if chunk.is_empty() {
            return Ok(());
        }
        let exec = self.options.execution;

        let mut source_tokens = Vec::with_capacity(chunk.len());
        for g in chunk.iter() {
            let tokens = sources.get(g.id)?.map_err(|available| ScoringError::SourceOutOfRange {
                path: name.to_owned(),
                line: g.first_line,
                id: g.id,
                available,
            })?;
            source_tokens.push(tokens);
        }

        let mut missing: Vec<&Vec<String>> = Vec::new();
        for t in &source_tokens {
            if !cache.contains_key(t) && !missing.contains(&t) {
                missing.push(t);
            }
        }
        if cache.len() + missing.len() > self.options.cache_capacity {
            cache.retain(|k, _| source_tokens.contains(k));
        }
        let outputs = exec.map(&missing, |_, tokens| self.network_output(tokens));
        for (tokens, output) in missing.iter().zip(outputs) {
            cache.insert((*tokens).clone(), Arc::new(output?));
        }
        stats.forward_passes += missing.len();

        let scored = exec.map(chunk.as_slice(), |i, g| {
            let output = &cache[&source_tokens[i]];
            self.score_group(g, &source_tokens[i], output)
        });
        for (g, result) in chunk.iter().zip(scored) {
            let (lines, skipped) = result.map_err(|(offset, message)| ScoringError::Malformed {
                path: name.to_owned(),
                line: g.first_line + offset,
                message,
            })?;
            stats.sentences += 1;
            stats.hypotheses += lines.len();
            stats.skipped_words += skipped;
            for line in lines {
                writeln!(out, "{line}").map_err(ScoringError::Output)?;
            }
        }
        chunk.clear();
        Ok(())
    }

    fn network_output(&self, tokens: &[String]) -> Result<Vec<f64>, NetworkError> {
        let x = match featurize_source(tokens, self.source_vocab) {
            Ok(x) => x,
            Err(_) => FeatureVector::from_indices(Vec::new(), self.source_vocab.len()),
        };
        Ok(forward(self.model, &x, None)?.into_output())
    }

    /// Rescored lines plus the skipped-word count; errors carry the entry
    /// offset within the group.
    fn score_group(
        &self,
        group: &Group,
        source: &[String],
        output: &[f64],
    ) -> Result<(Vec<String>, usize), (usize, String)> {
        let restricted: BTreeSet<String> = match self.table {
            Some(table) => restrict_target_vocab(source, table),
            None => group
                .entries
                .iter()
                .flat_map(|e| e.hypothesis.iter().cloned())
                .collect(),
        };
        let scores = PrecomputedScores::from_output(
            group.id,
            output,
            &restricted,
            self.target_vocab,
            self.options.policy,
        )
        .map_err(|e| (0, e.to_string()))?;
        let mut skipped = 0;
        let mut lines = Vec::with_capacity(group.entries.len());
        for (offset, entry) in group.entries.iter().enumerate() {
            let score = super::score_sentence(&scores, &entry.hypothesis, self.options.mode);
            skipped += score.skipped;
            let mut entry = entry.clone();
            entry
                .apply_feature(score.logprob, self.options.weight)
                .map_err(|m| (offset, m))?;
            lines.push(entry.to_line());
        }
        Ok((lines, skipped))
    }
}
