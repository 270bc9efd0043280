//! Shared fixtures for the integration suites: the synthetic one-to-one
//! lexicon corpus and a high-precision finite-difference gradient oracle.
#![allow(dead_code)]

pub mod oracle;

use nndwl::corpus::{build_vocabulary, featurize_source, featurize_target, NgramConfig, Side, Vocabulary};
use nndwl::training::Example;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parallel corpus whose target sentences are the word-by-word image of the
/// source sentences under a fixed bijection `src_i -> tgt_{perm[i]}`.
pub struct Lexicon {
    pub words: usize,
    pub image: Vec<usize>,
    pub train: Vec<(Vec<String>, Vec<String>)>,
    pub valid: Vec<(Vec<String>, Vec<String>)>,
}

pub fn src_word(i: usize) -> String {
    format!("s{i}")
}

pub fn tgt_word(i: usize) -> String {
    format!("t{i}")
}

impl Lexicon {
    pub fn generate(words: usize, n_train: usize, n_valid: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut image: Vec<usize> = (0..words).collect();
        image.shuffle(&mut rng);
        let sentence = |rng: &mut ChaCha8Rng| {
            let len = rng.gen_range(5..=10);
            let src: Vec<usize> = (0..len).map(|_| rng.gen_range(0..words)).collect();
            (
                src.iter().map(|&i| src_word(i)).collect::<Vec<_>>(),
                src.iter().map(|&i| tgt_word(image[i])).collect::<Vec<_>>(),
            )
        };
        let train = (0..n_train).map(|_| sentence(&mut rng)).collect();
        let valid = (0..n_valid).map(|_| sentence(&mut rng)).collect();
        Lexicon {
            words,
            image,
            train,
            valid,
        }
    }

    pub fn vocabularies(&self, ngrams: NgramConfig) -> (Vocabulary, Vocabulary) {
        let src = build_vocabulary(self.train.iter().map(|p| &p.0[..]), Side::Source, None, ngrams)
            .unwrap();
        let tgt = build_vocabulary(
            self.train.iter().map(|p| &p.1[..]),
            Side::Target,
            None,
            NgramConfig::NONE,
        )
        .unwrap();
        (src, tgt)
    }

    pub fn examples(
        pairs: &[(Vec<String>, Vec<String>)],
        src: &Vocabulary,
        tgt: &Vocabulary,
    ) -> Vec<Example> {
        pairs
            .iter()
            .map(|(s, t)| Example {
                source: featurize_source(s, src).unwrap(),
                target: featurize_target(t, tgt).unwrap(),
            })
            .collect()
    }

    /// Writes the corpus as four line-aligned files and returns their paths
    /// `(train.src, train.tgt, valid.src, valid.tgt)`.
    pub fn write(&self, dir: &std::path::Path) -> [std::path::PathBuf; 4] {
        let write = |name: &str, lines: Vec<String>| {
            let path = dir.join(name);
            std::fs::write(&path, lines.join("\n") + "\n").unwrap();
            path
        };
        [
            write("train.src", self.train.iter().map(|p| p.0.join(" ")).collect()),
            write("train.tgt", self.train.iter().map(|p| p.1.join(" ")).collect()),
            write("valid.src", self.valid.iter().map(|p| p.0.join(" ")).collect()),
            write("valid.tgt", self.valid.iter().map(|p| p.1.join(" ")).collect()),
        ]
    }
}

/// Number of source words `s{i}` whose highest network output, given the
/// one-word sentence `s{i}`, is their image `t{image[i]}`.
pub fn argmax_recovery(
    lex: &Lexicon,
    model: &nndwl::network::NetworkModel,
    src: &Vocabulary,
    tgt: &Vocabulary,
) -> usize {
    (0..lex.words)
        .filter(|&w| {
            let x = featurize_source(&[src_word(w)], src).unwrap();
            let p = nndwl::network::forward(model, &x, None).unwrap().into_output();
            let best = (0..p.len())
                .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
                .unwrap();
            tgt.token(best) == Some(tgt_word(lex.image[w]).as_str())
        })
        .count()
}
