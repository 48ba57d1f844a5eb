use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, BinomialSeries};
use crate::scoring::{Aggregation, ScoreRecord};

/// Heuristic a model's decisions can align with, in increasing order of
/// context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Heuristic {
    Unigram,
    Bigram,
    Trigram,
    LongerContext,
    Grammar,
}

impl Heuristic {
    pub fn from_order(order: usize) -> Self {
        match order {
            0 | 1 => Heuristic::Unigram,
            2 => Heuristic::Bigram,
            3 => Heuristic::Trigram,
            _ => Heuristic::LongerContext,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Heuristic::Unigram => "Unigram",
            Heuristic::Bigram => "Bigram",
            Heuristic::Trigram => "Trigram",
            Heuristic::LongerContext => "LongerContext",
            Heuristic::Grammar => "Grammar",
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSegment {
    pub start_step: u64,
    pub end_step: u64,
    pub label: Heuristic,
    pub alignment: BTreeMap<Heuristic, f64>,
}

/// (agreeing items, total items). Records are matched by item id.
fn alignment_counts(
    model: &[ScoreRecord],
    oracle: &[ScoreRecord],
    aggregation: Aggregation,
) -> Result<(u64, u64), AnalysisError> {
    if model.len() != oracle.len() {
        return Err(AnalysisError::ItemMismatch);
    }
    let mut pending: HashMap<&str, Vec<bool>> = HashMap::new();
    for r in oracle {
        pending.entry(r.item_id.as_str()).or_default().push(r.decision(aggregation));
    }
    let mut agree = 0u64;
    for r in model {
        let slot = pending.get_mut(r.item_id.as_str()).ok_or(AnalysisError::ItemMismatch)?;
        let other = slot.pop().ok_or(AnalysisError::ItemMismatch)?;
        if other == r.decision(aggregation) {
            agree += 1;
        }
    }
    Ok((agree, model.len() as u64))
}

fn shared_items(model: &[ScoreRecord], oracle: &[ScoreRecord]) -> (Vec<ScoreRecord>, Vec<ScoreRecord>) {
    let in_model: HashSet<&str> = model.iter().map(|r| r.item_id.as_str()).collect();
    let in_oracle: HashSet<&str> = oracle.iter().map(|r| r.item_id.as_str()).collect();
    let keep = |rs: &[ScoreRecord], other: &HashSet<&str>| {
        rs.iter().filter(|r| other.contains(r.item_id.as_str())).cloned().collect::<Vec<_>>()
    };
    (keep(model, &in_oracle), keep(oracle, &in_model))
}

/// Fraction of items on which the two record lists make the same decision.
pub fn heuristic_alignment(
    model: &[ScoreRecord],
    oracle: &[ScoreRecord],
    aggregation: Aggregation,
) -> Result<f64, AnalysisError> {
    let (agree, n) = alignment_counts(model, oracle, aggregation)?;
    if n == 0 {
        return Err(AnalysisError::EmptyOutcomes);
    }
    Ok(agree as f64 / n as f64)
}

/// Alignment of stepped model records with each oracle, per step.
pub fn alignment_series(
    model: &[ScoreRecord],
    oracles: &[(Heuristic, &[ScoreRecord])],
    aggregation: Aggregation,
) -> Result<BTreeMap<Heuristic, BinomialSeries>, AnalysisError> {
    // one checkpoint = (step, seed); seeds at the same step are pooled
    let mut by_step: BTreeMap<u64, BTreeMap<Option<i64>, Vec<ScoreRecord>>> = BTreeMap::new();
    for r in model {
        let step = r.scorer.step.ok_or_else(|| AnalysisError::MissingStep(r.item_id.clone()))?;
        by_step.entry(step).or_default().entry(r.scorer.seed).or_default().push(r.clone());
    }
    let mut out = BTreeMap::new();
    for (label, records) in oracles {
        let mut steps = Vec::new();
        let mut hits = Vec::new();
        let mut trials = Vec::new();
        for (step, seeds) in &by_step {
            let (mut a, mut n) = (0, 0);
            for at_step in seeds.values() {
                // items that failed on either side drop out of this checkpoint
                let (m, o) = shared_items(at_step, records);
                let (x, y) = alignment_counts(&m, &o, aggregation)?;
                a += x;
                n += y;
            }
            steps.push(*step);
            hits.push(a);
            trials.push(n);
        }
        if out.insert(*label, BinomialSeries::new(steps, hits, trials)?).is_some() {
            return Err(AnalysisError::DuplicateHeuristic(*label));
        }
    }
    Ok(out)
}

/// Segments between consecutive breakpoints, each labeled with the heuristic
/// of highest mean alignment. Ties go to the lower-order heuristic.
pub fn label_phases(
    alignments: &BTreeMap<Heuristic, BinomialSeries>,
    breakpoints: &[u64],
) -> Result<Vec<PhaseSegment>, AnalysisError> {
    let steps: BTreeSet<u64> = alignments.values().flat_map(|s| s.steps.iter().copied()).collect();
    let steps: Vec<u64> = steps.into_iter().collect();
    let mut table: BTreeMap<Heuristic, Vec<f64>> = BTreeMap::new();
    for (label, series) in alignments {
        let values: HashMap<u64, f64> = series.steps.iter().enumerate().map(|(i, s)| (*s, series.accuracy(i))).collect();
        let row = steps
            .iter()
            .map(|s| values.get(s).copied().ok_or(AnalysisError::AlignmentMissing { label: *label, step: *s }))
            .collect::<Result<Vec<f64>, _>>()?;
        table.insert(*label, row);
    }
    if steps.is_empty() {
        return Ok(Vec::new());
    }

    let mut bounds = vec![0usize];
    for bp in breakpoints {
        let k = steps.partition_point(|s| s < bp);
        if k > *bounds.last().expect("nonempty") && k < steps.len() {
            bounds.push(k);
        }
    }
    bounds.push(steps.len());

    Ok(bounds
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let alignment: BTreeMap<Heuristic, f64> = table
                .iter()
                .map(|(h, row)| (*h, row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64))
                .collect();
            let mut label = None;
            let mut best = f64::NEG_INFINITY;
            for (h, v) in &alignment {
                if *v > best {
                    best = *v;
                    label = Some(*h);
                }
            }
            PhaseSegment {
                start_step: steps[lo],
                end_step: steps[hi - 1],
                label: label.expect("at least one heuristic"),
                alignment,
            }
        })
        .collect())
}
