use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, TokenizedCorpus, Vocabulary};
use super::{tokenize, NGramError};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    AdditiveBackoff,
}

/// Additive-delta estimates at every order, linearly interpolated with the
/// next-lower order and grounded at the additive unigram.
///
/// `lambdas[k]` weights order `k + 2`; orders past the end of the list reuse
/// the last entry. A lambda of exactly 1 disables interpolation and is only
/// meant for hand-checkable tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub kind: SmoothingKind,
    pub delta: f64,
    pub lambdas: Vec<f64>,
    /// Reserve one extra outcome for out-of-vocabulary tokens.
    pub unknown_slot: bool,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        SmoothingSpec {
            kind: SmoothingKind::AdditiveBackoff,
            delta: 0.1,
            lambdas: vec![0.9],
            unknown_slot: true,
        }
    }
}

impl SmoothingSpec {
    /// Pure additive estimate at the highest available order, no unknown slot.
    pub fn additive(delta: f64) -> Self {
        SmoothingSpec {
            kind: SmoothingKind::AdditiveBackoff,
            delta,
            lambdas: vec![1.0],
            unknown_slot: false,
        }
    }

    pub fn validate(&self) -> Result<(), NGramError> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(NGramError::InvalidSmoothing(format!("delta must be > 0 (got {})", self.delta)));
        }
        if self.lambdas.is_empty() {
            return Err(NGramError::InvalidSmoothing("at least one lambda required".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
            return Err(NGramError::InvalidSmoothing(format!("lambda must lie in (0, 1] (got {l})")));
        }
        Ok(())
    }

    /// Interpolation weight for an estimate of the given order (>= 2).
    pub fn lambda(&self, order: usize) -> f64 {
        let idx = order.saturating_sub(2).min(self.lambdas.len() - 1);
        self.lambdas[idx]
    }
}

type CountTable = HashMap<Box<[TokenId]>, u64>;

/// Immutable n-gram count table over a token stream.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramIndex {
    pub(super) max_order: usize,
    pub(super) vocab: Vocabulary,
    pub(super) smoothing: SmoothingSpec,
    pub(super) token_count: u64,
    /// `counts[k]` holds sequences of length `k + 1`.
    pub(super) counts: Vec<CountTable>,
    /// Last `min(max_order - 1, N)` tokens; sequences ending the stream have
    /// one fewer continuation than occurrence.
    pub(super) tail: Vec<TokenId>,
}

impl NGramIndex {
    pub fn build(corpus_text: &str, max_order: usize) -> Result<Self, NGramError> {
        Self::build_with(corpus_text, max_order, SmoothingSpec::default(), Exec::default())
    }

    pub fn build_with(
        corpus_text: &str,
        max_order: usize,
        smoothing: SmoothingSpec,
        exec: Exec,
    ) -> Result<Self, NGramError> {
        if max_order < 1 {
            return Err(NGramError::InvalidOrder(max_order));
        }
        smoothing.validate()?;
        let corpus = TokenizedCorpus::from_text(corpus_text)?;
        Ok(Self::from_corpus(corpus, max_order, smoothing, exec))
    }

    pub fn from_corpus(
        corpus: TokenizedCorpus,
        max_order: usize,
        smoothing: SmoothingSpec,
        exec: Exec,
    ) -> Self {
        let (tokens, vocab) = corpus.into_parts();
        let counts = count_ngrams(&tokens, max_order, exec);
        let tail_len = (max_order - 1).min(tokens.len());
        NGramIndex {
            max_order,
            vocab,
            smoothing,
            token_count: tokens.len() as u64,
            counts,
            tail: tokens[tokens.len() - tail_len..].to_vec(),
        }
    }

    /// Unigram-only index from explicit word counts.
    pub fn from_unigram_counts<'a, I>(counts: I, smoothing: SmoothingSpec) -> Result<Self, NGramError>
    where
        I: IntoIterator<Item = (&'a str, u64)>,
    {
        smoothing.validate()?;
        let mut vocab = Vocabulary::new();
        let mut table = CountTable::new();
        let mut total = 0u64;
        for (word, count) in counts {
            let id = vocab.intern(word);
            *table.entry(vec![id].into_boxed_slice()).or_insert(0) += count;
            total += count;
        }
        if total == 0 {
            return Err(NGramError::EmptyCorpus);
        }
        Ok(NGramIndex {
            max_order: 1,
            vocab,
            smoothing,
            token_count: total,
            counts: vec![table],
            tail: Vec::new(),
        })
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn smoothing(&self) -> &SmoothingSpec {
        &self.smoothing
    }

    pub fn token_count(&self) -> u64 {
        self.token_count
    }

    /// Copy of this index with different smoothing parameters.
    pub fn with_smoothing(&self, smoothing: SmoothingSpec) -> Result<Self, NGramError> {
        smoothing.validate()?;
        Ok(NGramIndex { smoothing, ..self.clone() })
    }

    /// Number of distinct stored sequences of the given length.
    pub fn distinct(&self, order: usize) -> usize {
        self.counts.get(order.wrapping_sub(1)).map_or(0, HashMap::len)
    }

    /// Iterate stored sequences of one length.
    pub fn entries(&self, order: usize) -> impl Iterator<Item = (&[TokenId], u64)> {
        self.counts
            .get(order.wrapping_sub(1))
            .into_iter()
            .flat_map(|t| t.iter().map(|(k, &v)| (&k[..], v)))
    }

    /// Id used for out-of-vocabulary words when the unknown slot is enabled.
    pub fn unknown_id(&self) -> TokenId {
        self.vocab.len() as TokenId
    }

    /// Number of outcomes the conditional distribution ranges over.
    pub fn outcome_count(&self) -> usize {
        self.vocab.len() + usize::from(self.smoothing.unknown_slot)
    }

    /// Map a word to its id, falling back to the unknown id.
    pub fn encode(&self, word: &str) -> TokenId {
        self.vocab.id(word).unwrap_or_else(|| self.unknown_id())
    }

    /// Occurrences of `seq` in the token stream. The empty sequence counts
    /// every token. `None` when `seq` is longer than `max_order`.
    pub fn count(&self, seq: &[TokenId]) -> Option<u64> {
        match seq.len() {
            0 => Some(self.token_count),
            n if n > self.max_order => None,
            n => Some(self.counts[n - 1].get(seq).copied().unwrap_or(0)),
        }
    }

    pub fn count_words(&self, words: &[&str]) -> Option<u64> {
        let mut ids = Vec::with_capacity(words.len());
        for w in words {
            match self.vocab.id(w) {
                Some(id) => ids.push(id),
                None if words.len() <= self.max_order => return Some(0),
                None => return None,
            }
        }
        self.count(&ids)
    }

    /// Unigram count of a word; 0 when out of vocabulary.
    pub fn word_frequency(&self, word: &str) -> u64 {
        let lowered = word.trim().to_lowercase();
        self.vocab
            .id(&lowered)
            .and_then(|id| self.count(&[id]))
            .unwrap_or(0)
    }

    /// Total count of tokens following `context` in the stream.
    fn follow_count(&self, context: &[TokenId]) -> u64 {
        let c = self.count(context).unwrap_or(0);
        if !context.is_empty() && self.tail.ends_with(context) {
            c - 1
        } else {
            c
        }
    }

    fn check_token(&self, token: TokenId) -> Result<(), NGramError> {
        if (token as usize) < self.outcome_count() {
            Ok(())
        } else {
            Err(NGramError::InvalidToken(token))
        }
    }

    /// Smoothed conditional probability of `token` after `context`.
    ///
    /// The estimate uses order `context.len() + 1`; callers wanting a lower
    /// order pass a shorter context.
    pub fn cond_prob(&self, context: &[TokenId], token: TokenId) -> Result<f64, NGramError> {
        if context.len() + 1 > self.max_order {
            return Err(NGramError::OrderOverflow {
                context_len: context.len(),
                max_order: self.max_order,
            });
        }
        self.check_token(token)?;
        let delta = self.smoothing.delta;
        let outcomes = self.outcome_count() as f64;
        let mut seq = Vec::with_capacity(context.len() + 1);

        seq.push(token);
        let mut p = (self.count(&seq).unwrap_or(0) as f64 + delta)
            / (self.token_count as f64 + delta * outcomes);
        for k in 1..=context.len() {
            let ctx = &context[context.len() - k..];
            seq.clear();
            seq.extend_from_slice(ctx);
            seq.push(token);
            let joint = self.count(&seq).unwrap_or(0) as f64;
            let est = (joint + delta) / (self.follow_count(ctx) as f64 + delta * outcomes);
            let lambda = self.smoothing.lambda(k + 1);
            p = lambda * est + (1.0 - lambda) * p;
        }
        Ok(p)
    }

    /// Per-token natural-log probabilities of `candidate_text` after
    /// `context_text` under an order-`order` model.
    pub fn oracle_score(
        &self,
        order: usize,
        context_text: &str,
        candidate_text: &str,
    ) -> Result<Vec<f64>, NGramError> {
        Ok(self
            .oracle_score_tokens(order, context_text, candidate_text)?
            .into_iter()
            .map(|(_, lp)| lp)
            .collect())
    }

    /// Like [`oracle_score`](Self::oracle_score) but keeps the token strings.
    pub fn oracle_score_tokens(
        &self,
        order: usize,
        context_text: &str,
        candidate_text: &str,
    ) -> Result<Vec<(String, f64)>, NGramError> {
        if order < 1 || order > self.max_order {
            return Err(NGramError::OrderOutOfRange {
                order,
                max_order: self.max_order,
            });
        }
        let cand = tokenize(candidate_text);
        if cand.is_empty() {
            return Err(NGramError::EmptyCandidate(candidate_text.to_string()));
        }
        let mut history: Vec<TokenId> = tokenize(context_text).iter().map(|w| self.encode(w)).collect();
        let mut out = Vec::with_capacity(cand.len());
        for word in cand {
            let id = self.encode(&word);
            let keep = (order - 1).min(history.len());
            let p = self.cond_prob(&history[history.len() - keep..], id)?;
            out.push((word, p.ln()));
            history.push(id);
        }
        Ok(out)
    }
}

/// Count every sequence of length 1..=max_order. The parallel path splits
/// start positions into chunks and merges per-chunk tables.
fn count_ngrams(tokens: &[TokenId], max_order: usize, exec: Exec) -> Vec<CountTable> {
    const MIN_CHUNK: usize = 1 << 14;
    let n = tokens.len();
    let chunks = if exec.is_parallel() {
        (n / MIN_CHUNK).clamp(1, crate::par::worker_count() * 4)
    } else {
        1
    };
    let step = n.div_ceil(chunks);
    let mut partials = exec.map_range(chunks, |c| {
        let start = c * step;
        let end = ((c + 1) * step).min(n);
        count_range(tokens, start, end, max_order)
    });
    let mut merged = partials.swap_remove(0);
    for part in partials {
        for (order, table) in part.into_iter().enumerate() {
            let dst = &mut merged[order];
            for (k, v) in table {
                *dst.entry(k).or_insert(0) += v;
            }
        }
    }
    merged
}

fn count_range(tokens: &[TokenId], start: usize, end: usize, max_order: usize) -> Vec<CountTable> {
    let mut tables: Vec<CountTable> = (0..max_order).map(|_| CountTable::new()).collect();
    for i in start..end {
        let longest = max_order.min(tokens.len() - i);
        for len in 1..=longest {
            let key = &tokens[i..i + len];
            match tables[len - 1].get_mut(key) {
                Some(c) => *c += 1,
                None => {
                    tables[len - 1].insert(key.into(), 1);
                }
            }
        }
    }
    tables
}
