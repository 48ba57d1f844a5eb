//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;

use sva_core::scoring::{CandidateScore, ScoreRecord, ScorerId, VerbClass};

pub const BOUNDARY: &str = "<doc>";

/// Random corpus of `w<k>` words, lines of 1..=30 words, occasional blank
/// lines, at most `max_tokens` words.
pub fn random_corpus<R: Rng>(rng: &mut R, max_tokens: usize, vocab: usize) -> String {
    let target = rng.gen_range(1..=max_tokens);
    let mut out = String::new();
    let mut n = 0;
    while n < target {
        if rng.gen_bool(0.05) {
            out.push('\n');
        }
        let len = rng.gen_range(1..=30).min(target - n);
        let words: Vec<String> = (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
        n += len;
    }
    out
}

/// Word stream with a boundary token between non-empty lines. Assumes the
/// text holds only lowercase alphanumeric words.
pub fn stream(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(BOUNDARY.to_string());
        }
        out.extend(words.iter().map(|w| w.to_string()));
    }
    out
}

/// Count every window of length 1..=max_order.
pub fn naive_counts(tokens: &[String], max_order: usize) -> Vec<HashMap<Vec<String>, u64>> {
    (1..=max_order)
        .map(|k| {
            let mut m = HashMap::new();
            if tokens.len() >= k {
                for w in tokens.windows(k) {
                    *m.entry(w.to_vec()).or_insert(0) += 1;
                }
            }
            m
        })
        .collect()
}

/// Positions where `ctx` occurs and is followed by another token.
fn naive_follow(tokens: &[String], ctx: &[String]) -> u64 {
    if ctx.is_empty() {
        return tokens.len() as u64;
    }
    (0..tokens.len().saturating_sub(ctx.len()))
        .filter(|&i| tokens[i..i + ctx.len()] == *ctx)
        .count() as u64
}

fn naive_joint(tokens: &[String], seq: &[String]) -> u64 {
    if tokens.len() < seq.len() {
        return 0;
    }
    tokens.windows(seq.len()).filter(|w| *w == seq).count() as u64
}

/// Additive-delta estimates interpolated from the unigram upward, computed
/// by scanning the stream.
pub fn naive_prob(
    tokens: &[String],
    outcomes: usize,
    context: &[String],
    word: &str,
    delta: f64,
    lambda: f64,
) -> f64 {
    let v = outcomes as f64;
    let w = word.to_string();
    let mut p = (naive_joint(tokens, std::slice::from_ref(&w)) as f64 + delta) / (tokens.len() as f64 + delta * v);
    for k in 1..=context.len() {
        let ctx = &context[context.len() - k..];
        let mut seq = ctx.to_vec();
        seq.push(w.clone());
        let est = (naive_joint(tokens, &seq) as f64 + delta) / (naive_follow(tokens, ctx) as f64 + delta * v);
        p = lambda * est + (1.0 - lambda) * p;
    }
    p
}

/// Record with single-token candidates.
pub fn single_token_record(item_id: &str, scorer: ScorerId, correct_lp: f64, incorrect_lp: f64) -> ScoreRecord {
    ScoreRecord::new(
        item_id,
        scorer,
        CandidateScore::new(" a", vec!["a".into()], vec![correct_lp]).unwrap(),
        CandidateScore::new(" b", vec!["b".into()], vec![incorrect_lp]).unwrap(),
        VerbClass::SingleToken,
    )
    .unwrap()
}

/// Log-likelihood of pooled binomial counts, written out directly.
pub fn binomial_ll(successes: &[u64], trials: &[u64]) -> f64 {
    let s: u64 = successes.iter().sum();
    let t: u64 = trials.iter().sum();
    if t == 0 {
        return 0.0;
    }
    let p = s as f64 / t as f64;
    let mut ll = 0.0;
    if s > 0 {
        ll += s as f64 * p.ln();
    }
    if t > s {
        ll += (t - s) as f64 * (1.0 - p).ln();
    }
    ll
}

/// Best split points found by trying every admissible combination.
pub fn exhaustive_splits(successes: &[u64], trials: &[u64], splits: usize, min_segment: usize) -> Vec<usize> {
    fn rec(
        s: &[u64],
        t: &[u64],
        start: usize,
        left: usize,
        min: usize,
        cur: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) {
        let n = s.len();
        if left == 0 {
            let mut bounds = vec![0];
            bounds.extend(cur.iter().copied());
            bounds.push(n);
            if bounds.windows(2).any(|w| w[1] - w[0] < min) {
                return;
            }
            let ll: f64 = bounds.windows(2).map(|w| binomial_ll(&s[w[0]..w[1]], &t[w[0]..w[1]])).sum();
            if ll > best.0 + 1e-9 {
                *best = (ll, cur.clone());
            }
            return;
        }
        for k in start + min..n {
            cur.push(k);
            rec(s, t, k, left - 1, min, cur, best);
            cur.pop();
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    rec(successes, trials, 0, splits, min_segment, &mut Vec::new(), &mut best);
    best.1
}
