use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use super::{extract_ngrams, CorpusError, NgramConfig, NGRAM_JOINER};

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_INDEX: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub token: String,
    pub count: u64,
}

/// Frequency-ranked token index with the unknown token at index 0.
///
/// Entries after index 0 are sorted by descending count, ties by ascending
/// byte order of the token. For source vocabularies the entries mix words and
/// joiner-encoded n-grams; `ngram_config` records how many of each were kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    side: Side,
    ngram_config: NgramConfig,
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
}

fn ngram_order(token: &str) -> usize {
    1 + token.chars().filter(|&c| c == NGRAM_JOINER).count()
}

/// Keeps the `limit` most frequent items (all when `None`), deterministic
/// under any iteration order of `counts`.
fn top_k(counts: HashMap<String, u64>, limit: Option<usize>) -> Vec<VocabEntry> {
    let mut items: Vec<VocabEntry> = counts
        .into_iter()
        .map(|(token, count)| VocabEntry { token, count })
        .collect();
    items.sort_unstable_by(rank_order);
    if let Some(limit) = limit {
        items.truncate(limit);
    }
    items
}

fn rank_order(a: &VocabEntry, b: &VocabEntry) -> std::cmp::Ordering {
    b.count
        .cmp(&a.count)
        .then_with(|| a.token.as_bytes().cmp(b.token.as_bytes()))
}

/// Counts words (and, for source vocabularies, adjacent n-grams) and keeps the
/// most frequent of each kind. Word and n-gram rankings are independent.
///
/// `word_cutoff = None` keeps every distinct word.
pub fn build_vocabulary<I, S>(
    corpus: I,
    side: Side,
    word_cutoff: Option<usize>,
    ngram_config: NgramConfig,
) -> Result<Vocabulary, CorpusError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[String]>,
{
    if side == Side::Target && ngram_config.is_enabled() {
        return Err(CorpusError::TargetNgrams);
    }
    let ngram_config = NgramConfig::new(ngram_config.max_bigrams, ngram_config.max_trigrams)?;

    let mut words: HashMap<String, u64> = HashMap::new();
    let mut bigrams: HashMap<String, u64> = HashMap::new();
    let mut trigrams: HashMap<String, u64> = HashMap::new();
    let mut sentences = 0usize;
    for sentence in corpus {
        let tokens = sentence.as_ref();
        if tokens.is_empty() {
            continue;
        }
        sentences += 1;
        for tok in tokens {
            if tok != UNK_TOKEN {
                *words.entry(tok.clone()).or_default() += 1;
            }
        }
        for gram in extract_ngrams(tokens, ngram_config) {
            let table = if ngram_order(&gram) == 2 {
                &mut bigrams
            } else {
                &mut trigrams
            };
            *table.entry(gram).or_default() += 1;
        }
    }
    if sentences == 0 {
        return Err(CorpusError::EmptyCorpus);
    }

    let mut kept = top_k(words, word_cutoff);
    let n_bigrams = {
        let b = top_k(bigrams, Some(ngram_config.max_bigrams));
        let n = b.len();
        kept.extend(b);
        n
    };
    let n_trigrams = {
        let t = top_k(trigrams, Some(ngram_config.max_trigrams));
        let n = t.len();
        kept.extend(t);
        n
    };
    kept.sort_by(rank_order);

    let mut entries = Vec::with_capacity(kept.len() + 1);
    entries.push(VocabEntry {
        token: UNK_TOKEN.to_owned(),
        count: 0,
    });
    entries.extend(kept);
    Ok(Vocabulary::from_entries(
        side,
        NgramConfig {
            max_bigrams: n_bigrams,
            max_trigrams: n_trigrams,
        },
        entries,
    ))
}

impl Vocabulary {
    fn from_entries(side: Side, ngram_config: NgramConfig, entries: Vec<VocabEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.token.clone(), i))
            .collect();
        Vocabulary {
            side,
            ngram_config,
            entries,
            index,
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn ngram_config(&self) -> NgramConfig {
        self.ngram_config
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    /// Number of entries including the unknown token.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of `token`, or [`UNK_INDEX`] when it is not in the vocabulary.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    /// Index of `token` if it is a real entry (never the unknown index).
    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&i| i != UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(|e| e.token.as_str())
    }

    /// Writes `index<TAB>token<TAB>count` lines.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", i, e.token, e.count)?;
        }
        out.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// SHA-256 of the serialized vocabulary file.
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    /// Parses a vocabulary file. `name` is used in error messages.
    pub fn read_from<R: BufRead>(input: R, side: Side, name: &str) -> Result<Self, CorpusError> {
        let format_err = |line: usize, message: String| CorpusError::VocabFormat {
            path: name.to_owned(),
            line,
            message,
        };
        let mut entries = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let (mut n_bigrams, mut n_trigrams) = (0, 0);
        for (i, line) in input.split(b'\n').enumerate() {
            let line_no = i + 1;
            let bytes = line.map_err(|e| format_err(line_no, e.to_string()))?;
            let text = String::from_utf8(bytes)
                .map_err(|_| format_err(line_no, "invalid UTF-8".to_owned()))?;
            let mut fields = text.split('\t');
            let (Some(idx), Some(token), Some(count), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(format_err(line_no, "expected index<TAB>token<TAB>count".into()));
            };
            let idx: usize = idx
                .parse()
                .map_err(|_| format_err(line_no, format!("bad index {idx:?}")))?;
            let count: u64 = count
                .parse()
                .map_err(|_| format_err(line_no, format!("bad count {count:?}")))?;
            if idx != entries.len() {
                return Err(format_err(
                    line_no,
                    format!("expected index {}, found {idx}", entries.len()),
                ));
            }
            if idx == 0 && (token != UNK_TOKEN || count != 0) {
                return Err(format_err(line_no, format!("first entry must be {UNK_TOKEN}")));
            }
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(format_err(line_no, format!("invalid token {token:?}")));
            }
            if !seen.insert(token.to_owned()) {
                return Err(format_err(line_no, format!("duplicate token {token:?}")));
            }
            match ngram_order(token) {
                1 => {}
                2 => n_bigrams += 1,
                3 => n_trigrams += 1,
                n => return Err(format_err(line_no, format!("unsupported {n}-gram"))),
            }
            entries.push(VocabEntry {
                token: token.to_owned(),
                count,
            });
        }
        if entries.is_empty() {
            return Err(format_err(0, "empty vocabulary".into()));
        }
        let ngram_config = NgramConfig::new(n_bigrams, n_trigrams)?;
        if side == Side::Target && ngram_config.is_enabled() {
            return Err(CorpusError::TargetNgrams);
        }
        Ok(Vocabulary::from_entries(side, ngram_config, entries))
    }
}
