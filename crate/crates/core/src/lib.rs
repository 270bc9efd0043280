//! Neural discriminative word lexicon.
//!
//! Learns, from a line-aligned parallel corpus, the probability that each
//! target word appears in the translation of a source sentence, and turns
//! those probabilities into sentence- and phrase-level lexical scores for
//! n-best rescoring.

pub mod cli;
pub mod corpus;
pub mod exec;
pub mod network;
pub mod scoring;
pub mod training;
