use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;

use super::ScoringError;

const FIELD_SEP: &str = " ||| ";

/// Source phrase to target phrases, as read from a phrase table. Only the
/// first two fields of each line are used.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhraseTable {
    entries: HashMap<Vec<String>, BTreeSet<Vec<String>>>,
    max_source_len: usize,
}

impl PhraseTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on an empty phrase.
    pub fn insert(&mut self, source: Vec<String>, target: Vec<String>) {
        assert!(!source.is_empty() && !target.is_empty(), "phrases must be non-empty");
        self.max_source_len = self.max_source_len.max(source.len());
        self.entries.entry(source).or_default().insert(target);
    }

    /// Parses `src ||| tgt [||| ...]` lines; `name` labels error messages.
    pub fn read_from<R: BufRead>(input: R, name: &str) -> Result<Self, ScoringError> {
        let mut table = PhraseTable::new();
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|source| ScoringError::Io {
                path: name.into(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: &str| ScoringError::Malformed {
                path: name.to_owned(),
                line: line_no,
                message: message.to_owned(),
            };
            let mut fields = line.split(FIELD_SEP);
            let source = split(fields.next().unwrap_or(""));
            let target = split(fields.next().ok_or_else(|| malformed("expected at least two ||| separated fields"))?);
            if source.is_empty() {
                return Err(malformed("empty source phrase"));
            }
            if target.is_empty() {
                return Err(malformed("empty target phrase"));
            }
            table.insert(source, target);
        }
        Ok(table)
    }

    pub fn get(&self, source: &[String]) -> Option<&BTreeSet<Vec<String>>> {
        self.entries.get(source)
    }

    /// Number of distinct source phrases.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every `(start, source phrase, target phrases)` whose source phrase
    /// occurs contiguously in `sentence`, by start then length.
    pub fn matches<'a>(
        &'a self,
        sentence: &'a [String],
    ) -> impl Iterator<Item = (usize, &'a [String], &'a BTreeSet<Vec<String>>)> + 'a {
        (0..sentence.len()).flat_map(move |start| {
            let longest = self.max_source_len.min(sentence.len() - start);
            (1..=longest).filter_map(move |len| {
                let phrase = &sentence[start..start + len];
                self.entries.get(phrase).map(|t| (start, phrase, t))
            })
        })
    }
}

fn split(field: &str) -> Vec<String> {
    field.split_whitespace().map(str::to_owned).collect()
}

/// Union of the words of every target phrase whose source phrase occurs
/// contiguously in `source`.
pub fn restrict_target_vocab(source: &[String], table: &PhraseTable) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (_, _, targets) in table.matches(source) {
        for phrase in targets {
            out.extend(phrase.iter().cloned());
        }
    }
    out
}
