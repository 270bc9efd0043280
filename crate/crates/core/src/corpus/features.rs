use super::{CorpusError, NgramConfig, Side, Vocabulary, NGRAM_JOINER};

/// Sparse binary vector: the set of active indices of a `dim`-dimensional
/// 0/1 vector, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    active: Vec<usize>,
    dim: usize,
}

impl FeatureVector {
    /// Builds a vector from arbitrary indices; duplicates collapse.
    ///
    /// Panics if an index is out of range.
    pub fn from_indices(mut indices: Vec<usize>, dim: usize) -> Self {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            assert!(last < dim, "feature index {last} out of range for dim {dim}");
        }
        FeatureVector {
            active: indices,
            dim,
        }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, index: usize) -> bool {
        self.active.binary_search(&index).is_ok()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &i in &self.active {
            v[i] = 1.0;
        }
        v
    }
}

fn join(parts: &[String]) -> String {
    let mut s = String::with_capacity(parts.iter().map(|p| p.len() + 1).sum());
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            s.push(NGRAM_JOINER);
        }
        s.push_str(p);
    }
    s
}

/// All adjacent bigrams, then all adjacent trigrams, joiner-encoded.
pub fn extract_ngrams(tokens: &[String], config: NgramConfig) -> Vec<String> {
    let mut out = Vec::new();
    if config.max_bigrams > 0 {
        out.extend(tokens.windows(2).map(join));
    }
    if config.max_trigrams > 0 {
        out.extend(tokens.windows(3).map(join));
    }
    out
}

/// Bag-of-words (plus bag-of-n-grams) presence vector of a source sentence.
/// Unknown words fire [`UNK_INDEX`](super::UNK_INDEX); unknown n-grams fire nothing.
pub fn featurize_source(tokens: &[String], vocab: &Vocabulary) -> Result<FeatureVector, CorpusError> {
    debug_assert_eq!(vocab.side(), Side::Source);
    if tokens.is_empty() {
        return Err(CorpusError::EmptySentence);
    }
    let mut indices: Vec<usize> = tokens.iter().map(|t| vocab.lookup(t)).collect();
    indices.extend(
        extract_ngrams(tokens, vocab.ngram_config())
            .iter()
            .filter_map(|g| vocab.get(g)),
    );
    Ok(FeatureVector::from_indices(indices, vocab.len()))
}

/// Presence vector of a target sentence, the training label.
pub fn featurize_target(tokens: &[String], vocab: &Vocabulary) -> Result<FeatureVector, CorpusError> {
    debug_assert_eq!(vocab.side(), Side::Target);
    if tokens.is_empty() {
        return Err(CorpusError::EmptySentence);
    }
    let indices = tokens.iter().map(|t| vocab.lookup(t)).collect();
    Ok(FeatureVector::from_indices(indices, vocab.len()))
}
