//! Parallel corpus loading, vocabularies and sparse sentence features.

mod features;
mod vocab;

pub use features::{extract_ngrams, featurize_source, featurize_target, FeatureVector};
pub use vocab::{build_vocabulary, Side, Vocabulary, VocabEntry, UNK_INDEX, UNK_TOKEN};

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Joins the constituent tokens of an encoded n-gram (ASCII unit separator).
pub const NGRAM_JOINER: char = '\u{1F}';

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid UTF-8")]
    Utf8 { path: PathBuf, line: usize },
    #[error("line count mismatch {0} vs {1}")]
    LineCountMismatch(usize, usize),
    #[error("empty sentence")]
    EmptySentence,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("target vocabularies cannot carry n-gram features")]
    TargetNgrams,
    #[error("invalid n-gram config: trigrams ({trigrams}) require bigrams")]
    InvalidNgramConfig { trigrams: usize },
    #[error("{path}:{line}: {message}")]
    VocabFormat {
        path: String,
        line: usize,
        message: String,
    },
}

/// How many of the most frequent bigrams and trigrams become source features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct NgramConfig {
    pub max_bigrams: usize,
    pub max_trigrams: usize,
}

impl NgramConfig {
    pub const NONE: NgramConfig = NgramConfig {
        max_bigrams: 0,
        max_trigrams: 0,
    };

    pub fn new(max_bigrams: usize, max_trigrams: usize) -> Result<Self, CorpusError> {
        if max_trigrams > 0 && max_bigrams == 0 {
            return Err(CorpusError::InvalidNgramConfig {
                trigrams: max_trigrams,
            });
        }
        Ok(NgramConfig {
            max_bigrams,
            max_trigrams,
        })
    }

    pub fn is_enabled(&self) -> bool {
        self.max_bigrams > 0 || self.max_trigrams > 0
    }
}

/// One aligned line pair. `line_no` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub line_no: usize,
}

/// Whitespace tokenization. The n-gram joiner also separates tokens so that
/// no word can collide with an encoded n-gram.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split(|c: char| c.is_whitespace() || c == NGRAM_JOINER)
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Reads `path` line by line, yielding `(line_no, text)`; invalid UTF-8 is an
/// error carrying the 1-based line number.
pub struct LineReader {
    path: PathBuf,
    reader: BufReader<File>,
    line_no: usize,
    buf: Vec<u8>,
}

impl LineReader {
    pub fn open(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(LineReader {
            path: path.to_owned(),
            reader: BufReader::new(file),
            line_no: 0,
            buf: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Iterator for LineReader {
    type Item = Result<(usize, String), CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.buf.clear();
        match self.reader.read_until(b'\n', &mut self.buf) {
            Ok(0) => None,
            Ok(_) => {
                self.line_no += 1;
                if self.buf.last() == Some(&b'\n') {
                    self.buf.pop();
                    if self.buf.last() == Some(&b'\r') {
                        self.buf.pop();
                    }
                }
                match String::from_utf8(std::mem::take(&mut self.buf)) {
                    Ok(s) => Some(Ok((self.line_no, s))),
                    Err(_) => Some(Err(CorpusError::Utf8 {
                        path: self.path.clone(),
                        line: self.line_no,
                    })),
                }
            }
            Err(source) => Some(Err(CorpusError::Io {
                path: self.path.clone(),
                source,
            })),
        }
    }
}

/// Counts lines without decoding them.
fn count_lines(path: &Path) -> Result<usize, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let mut reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut n = 0;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf).map_err(io_err)? == 0 {
            return Ok(n);
        }
        n += 1;
    }
}

/// Streams aligned sentence pairs from two line-aligned files.
///
/// Line counts are checked up front; pairs where either side is empty are
/// skipped and counted in [`ParallelCorpus::skipped`].
pub struct ParallelCorpus {
    source: LineReader,
    target: LineReader,
    skipped: usize,
}

impl ParallelCorpus {
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

pub fn load_parallel_corpus(
    source_path: &Path,
    target_path: &Path,
) -> Result<ParallelCorpus, CorpusError> {
    let (ns, nt) = (count_lines(source_path)?, count_lines(target_path)?);
    if ns != nt {
        return Err(CorpusError::LineCountMismatch(ns, nt));
    }
    Ok(ParallelCorpus {
        source: LineReader::open(source_path)?,
        target: LineReader::open(target_path)?,
        skipped: 0,
    })
}

impl Iterator for ParallelCorpus {
    type Item = Result<SentencePair, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (line_no, src) = match self.source.next()? {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            let tgt = match self.target.next()? {
                Ok((_, t)) => t,
                Err(e) => return Some(Err(e)),
            };
            let source = tokenize(&src);
            let target = tokenize(&tgt);
            if source.is_empty() || target.is_empty() {
                log::warn!(
                    "skipping line {} ({} side empty)",
                    line_no,
                    if source.is_empty() { "source" } else { "target" }
                );
                self.skipped += 1;
                continue;
            }
            return Some(Ok(SentencePair {
                source,
                target,
                line_no,
            }));
        }
    }
}
