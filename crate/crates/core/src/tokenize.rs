//! Token counting.
//!
//! Counts are estimates: the default estimator pre-splits text the way
//! byte-pair-encoding tokenizers of the GPT family do (letters, digit runs of
//! at most three, punctuation runs, whitespace) and charges long pieces one
//! token per few characters.

use std::sync::OnceLock;

use regex::Regex;

pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Pre-tokenizing BPE estimator. Deterministic across platforms.
#[derive(Debug, Clone, Copy, Default)]
pub struct BpeEstimator;

fn pretokenizer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"'(?:[sdmt]|ll|ve|re)| ?\p{L}+| ?\p{N}{1,3}| ?[^\s\p{L}\p{N}]+|\s+").expect("valid pretokenizer")
    })
}

impl Tokenizer for BpeEstimator {
    fn count(&self, text: &str) -> usize {
        pretokenizer()
            .find_iter(text)
            .map(|m| {
                let piece = m.as_str();
                let body = piece.trim_start_matches(' ');
                let chars = body.chars().count();
                match body.chars().next() {
                    None => 1,
                    Some(c) if c.is_alphabetic() => chars.div_ceil(6).max(1),
                    Some(c) if c.is_numeric() => 1,
                    Some(c) if c.is_whitespace() => 1,
                    Some(_) => chars.div_ceil(2).max(1),
                }
            })
            .sum()
    }
}

/// Splits on whitespace; useful as a crude lower bound in tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}
