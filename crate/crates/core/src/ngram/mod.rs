//! Word-level n-gram counting and the oracle scorers built on it.

mod fixture;
mod index;
mod persist;
pub mod synthetic;
mod vocab;

use thiserror::Error;

pub use fixture::{pile_fixture, pile_fixture_counts, PILE_FIXTURE_CSV};
pub use index::{NGramIndex, SmoothingKind, SmoothingSpec};
pub use vocab::{TokenId, TokenizedCorpus, Vocabulary, DOC_BOUNDARY};

#[derive(Debug, Error)]
pub enum NGramError {
    #[error("max_order must be at least 1 (got {0})")]
    InvalidOrder(usize),
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("order {order} out of range 1..={max_order}")]
    OrderOutOfRange { order: usize, max_order: usize },
    #[error("context of length {context_len} exceeds max_order - 1 = {}", .max_order - 1)]
    OrderOverflow { context_len: usize, max_order: usize },
    #[error("token id {0} outside the vocabulary")]
    InvalidToken(TokenId),
    #[error("candidate {0:?} produced no tokens")]
    EmptyCandidate(String),
    #[error("invalid smoothing: {0}")]
    InvalidSmoothing(String),
    #[error("malformed index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercase, split on whitespace, and give every punctuation character its
/// own token. Anything that is neither alphanumeric nor whitespace counts as
/// punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_lowercase().collect());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat sleeps."), vec!["the", "cat", "sleeps", "."]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \n\t").is_empty());
        // count by hand: the / athlete / near / the / bike / knows
        assert_eq!(tokenize("The athlete near the bike knows").len(), 6);
        assert_eq!(tokenize("don't, STOP!"), vec!["don", "'", "t", ",", "stop", "!"]);
    }

    #[test]
    fn boundary_marker_is_not_reachable_from_text() {
        assert_ne!(tokenize(DOC_BOUNDARY), vec![DOC_BOUNDARY.to_string()]);
    }
}
