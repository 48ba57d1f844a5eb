//! Disaggregated accuracy, confidence intervals, trajectories, change points
//! and heuristic phase labels.

mod bootstrap;
mod changepoint;
mod phases;
mod trajectory;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Exec;
use crate::scoring::{Aggregation, ScoreRecord};
use crate::stimuli::{Condition, StimulusItem, Structure};

pub use bootstrap::{bootstrap_ci, cluster_bootstrap_ci, CiParams, CiPooling};
pub use changepoint::{
    detect_changepoints, detect_changepoints_joint, BinomialSeries, ChangepointParams, Penalty,
};
pub use phases::{
    alignment_series, heuristic_alignment, label_phases, Heuristic, PhaseSegment,
};
pub use trajectory::{aggregate_trajectory, build_trajectory, TrajectoryPoint, TrajectorySeries};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("unknown dimension {0:?}")]
    UnknownDimension(String),
    #[error("at least one grouping dimension is required")]
    NoDimensions,
    #[error("record refers to unknown item {0}")]
    UnknownItem(String),
    #[error("cannot bootstrap an empty outcome list")]
    EmptyOutcomes,
    #[error("invalid bootstrap parameters: {0}")]
    InvalidBootstrap(String),
    #[error("duplicate condition {0} in aggregate")]
    DuplicateCondition(String),
    #[error("missing condition {0} in aggregate")]
    MissingCondition(String),
    #[error("cell without a condition value")]
    NoConditionDimension,
    #[error("record {0} has no training step")]
    MissingStep(String),
    #[error("series has {len} points; at least {needed} required")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("series do not share the same step axis")]
    MisalignedSeries,
    #[error("item ids differ between model and oracle records")]
    ItemMismatch,
    #[error("two oracles map to heuristic {0}")]
    DuplicateHeuristic(Heuristic),
    #[error("alignment for {label} missing at step {step}")]
    AlignmentMissing { label: Heuristic, step: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Grouping dimension for accuracy cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Scorer,
    Model,
    Size,
    Seed,
    Step,
    VerbClass,
    VerbLemma,
    Structure,
    Condition,
}

impl Dimension {
    pub fn name(self) -> &'static str {
        match self {
            Dimension::Scorer => "scorer",
            Dimension::Model => "model",
            Dimension::Size => "size",
            Dimension::Seed => "seed",
            Dimension::Step => "step",
            Dimension::VerbClass => "verb_class",
            Dimension::VerbLemma => "verb_lemma",
            Dimension::Structure => "structure",
            Dimension::Condition => "condition",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Dimension>, AnalysisError> {
        s.split(',').filter(|x| !x.trim().is_empty()).map(str::parse).collect()
    }

    pub fn value(self, record: &ScoreRecord, item: &StimulusItem) -> GroupValue {
        let text = |s: &str| GroupValue::Text(s.to_string());
        match self {
            Dimension::Scorer => text(&record.scorer.label()),
            Dimension::Model => text(&record.scorer.model_name),
            Dimension::Size => record.scorer.size_label.as_deref().map_or(GroupValue::Missing, text),
            Dimension::Seed => record.scorer.seed.map_or(GroupValue::Missing, GroupValue::Int),
            Dimension::Step => record.scorer.step.map_or(GroupValue::Missing, |s| GroupValue::Int(s as i64)),
            Dimension::VerbClass => GroupValue::Ranked(record.verb_class as u32, record.verb_class.to_string()),
            Dimension::VerbLemma => text(&item.verb_lemma),
            Dimension::Structure => match item.condition.structure() {
                Structure::Simple => GroupValue::Ranked(0, "simple".into()),
                Structure::NounPP => GroupValue::Ranked(1, "nounpp".into()),
            },
            Dimension::Condition => condition_value(item.condition),
        }
    }
}

impl FromStr for Dimension {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "scorer" => Dimension::Scorer,
            "model" => Dimension::Model,
            "size" => Dimension::Size,
            "seed" => Dimension::Seed,
            "step" => Dimension::Step,
            "verb_class" => Dimension::VerbClass,
            "verb_lemma" | "verb" => Dimension::VerbLemma,
            "structure" => Dimension::Structure,
            "condition" => Dimension::Condition,
            other => return Err(AnalysisError::UnknownDimension(other.to_string())),
        })
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A value along one dimension. `Ranked` keeps a canonical order for
/// enumerations such as conditions (S, P, SS, SP, PS, PP).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupValue {
    Missing,
    Int(i64),
    Ranked(u32, String),
    Text(String),
}

impl GroupValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            GroupValue::Int(i) => Some(*i),
            _ => None,
        }
    }
}

impl fmt::Display for GroupValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupValue::Missing => f.write_str("NA"),
            GroupValue::Int(i) => write!(f, "{i}"),
            GroupValue::Ranked(_, s) | GroupValue::Text(s) => f.write_str(s),
        }
    }
}

impl Serialize for GroupValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GroupValue::Missing => s.serialize_none(),
            GroupValue::Int(i) => s.serialize_i64(*i),
            GroupValue::Ranked(_, t) | GroupValue::Text(t) => s.serialize_str(t),
        }
    }
}

pub fn condition_value(c: Condition) -> GroupValue {
    let rank = Condition::all().iter().position(|x| *x == c).unwrap_or(0) as u32;
    GroupValue::Ranked(rank, c.label())
}

pub type GroupKey = BTreeMap<Dimension, GroupValue>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyCell {
    pub group: GroupKey,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl AccuracyCell {
    pub fn condition(&self) -> Option<Condition> {
        match self.group.get(&Dimension::Condition)? {
            GroupValue::Ranked(_, label) => label.parse().ok(),
            _ => None,
        }
    }
}

/// Outcome of one record plus the cluster it belongs to for seed-level
/// resampling.
#[derive(Debug, Clone)]
struct Outcome {
    correct: bool,
    cluster: GroupValue,
}

fn item_table(items: &[StimulusItem]) -> HashMap<&str, &StimulusItem> {
    items.iter().map(|i| (i.id.as_str(), i)).collect()
}

/// Per-cell seed derived from the cell key so results do not depend on
/// iteration or thread order.
fn cell_seed(base: u64, key: &[GroupValue]) -> u64 {
    let text: Vec<String> = key.iter().map(|v| format!("{v:?}")).collect();
    let digest = crate::sha256_hex(text.join("\u{1f}").as_bytes());
    base ^ u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

/// Accuracy per observed combination of `dims`, with bootstrap intervals.
pub fn disaggregate(
    records: &[ScoreRecord],
    items: &[StimulusItem],
    dims: &[Dimension],
    aggregation: Aggregation,
    ci: &CiParams,
    exec: Exec,
) -> Result<Vec<AccuracyCell>, AnalysisError> {
    if dims.is_empty() {
        return Err(AnalysisError::NoDimensions);
    }
    ci.validate()?;
    let table = item_table(items);
    let mut groups: BTreeMap<Vec<GroupValue>, Vec<Outcome>> = BTreeMap::new();
    for r in records {
        let item = table
            .get(r.item_id.as_str())
            .ok_or_else(|| AnalysisError::UnknownItem(r.item_id.clone()))?;
        let key = dims.iter().map(|d| d.value(r, item)).collect();
        groups.entry(key).or_default().push(Outcome {
            correct: r.decision(aggregation),
            cluster: Dimension::Seed.value(r, item),
        });
    }
    let groups: Vec<(Vec<GroupValue>, Vec<Outcome>)> = groups.into_iter().collect();
    exec.map(&groups, |(key, outcomes)| {
        let n = outcomes.len();
        let correct = outcomes.iter().filter(|o| o.correct).count();
        let accuracy = correct as f64 / n as f64;
        let seed = cell_seed(ci.seed, key);
        let (lo, hi) = match ci.pooling {
            CiPooling::Items => {
                let flat: Vec<bool> = outcomes.iter().map(|o| o.correct).collect();
                bootstrap_ci(&flat, ci.resamples, ci.alpha, seed)?
            }
            CiPooling::Seeds => {
                let mut clusters: BTreeMap<&GroupValue, Vec<bool>> = BTreeMap::new();
                for o in outcomes {
                    clusters.entry(&o.cluster).or_default().push(o.correct);
                }
                let clusters: Vec<Vec<bool>> = clusters.into_values().collect();
                cluster_bootstrap_ci(&clusters, ci.resamples, ci.alpha, seed)?
            }
        };
        Ok(AccuracyCell {
            group: dims.iter().copied().zip(key.iter().cloned()).collect(),
            n,
            correct,
            accuracy,
            ci_low: lo.min(accuracy),
            ci_high: hi.max(accuracy),
        })
    })
    .into_iter()
    .collect()
}

/// Unweighted mean of per-condition accuracies. Every structure that occurs
/// must be represented by all of its conditions exactly once.
pub fn aggregate_score(cells: &[AccuracyCell]) -> Result<f64, AnalysisError> {
    let mut by_condition: BTreeMap<Condition, f64> = BTreeMap::new();
    for cell in cells {
        let c = cell.condition().ok_or(AnalysisError::NoConditionDimension)?;
        if by_condition.insert(c, cell.accuracy).is_some() {
            return Err(AnalysisError::DuplicateCondition(c.label()));
        }
    }
    if by_condition.is_empty() {
        return Err(AnalysisError::MissingCondition("any".into()));
    }
    for structure in [Structure::Simple, Structure::NounPP] {
        let expected = Condition::of_structure(structure);
        if expected.iter().any(|c| by_condition.contains_key(c)) {
            if let Some(missing) = expected.iter().find(|c| !by_condition.contains_key(c)) {
                return Err(AnalysisError::MissingCondition(missing.label()));
            }
        }
    }
    let total: f64 = by_condition.values().sum();
    Ok(total / by_condition.len() as f64)
}

/// Aggregate row per grouping key (all cell dims except condition).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub group: GroupKey,
    pub conditions: usize,
    pub n: usize,
    pub aggregate: f64,
    pub pooled_accuracy: f64,
}

pub fn aggregate_rows(cells: &[AccuracyCell]) -> Result<Vec<AggregateRow>, AnalysisError> {
    let mut groups: BTreeMap<GroupKey, Vec<AccuracyCell>> = BTreeMap::new();
    for c in cells {
        let mut key = c.group.clone();
        if key.remove(&Dimension::Condition).is_none() {
            return Err(AnalysisError::NoConditionDimension);
        }
        groups.entry(key).or_default().push(c.clone());
    }
    groups
        .into_iter()
        .map(|(group, cells)| {
            let n: usize = cells.iter().map(|c| c.n).sum();
            let correct: usize = cells.iter().map(|c| c.correct).sum();
            Ok(AggregateRow {
                group,
                conditions: cells.len(),
                n,
                aggregate: aggregate_score(&cells)?,
                pooled_accuracy: correct as f64 / n as f64,
            })
        })
        .collect()
}

/// Method parameters embedded in every analysis output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodInfo {
    pub version: String,
    pub aggregation: Aggregation,
    pub ci_method: String,
    pub bootstrap_resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub ci_pooling: CiPooling,
    pub changepoint_cost: String,
    pub changepoint_penalty: Penalty,
    pub min_segment: usize,
}

impl MethodInfo {
    pub fn new(aggregation: Aggregation, ci: &CiParams, cp: &ChangepointParams) -> Self {
        MethodInfo {
            version: format!("sva-analysis/{}", crate::TOOL_VERSION),
            aggregation,
            ci_method: "percentile-bootstrap".into(),
            bootstrap_resamples: ci.resamples,
            alpha: ci.alpha,
            seed: ci.seed,
            ci_pooling: ci.pooling,
            changepoint_cost: "binomial-log-likelihood binary segmentation".into(),
            changepoint_penalty: cp.penalty,
            min_segment: cp.min_segment,
        }
    }

    fn comment_lines(&self) -> String {
        let json = serde_json::to_string(self).expect("method info serializes");
        format!("# method: {json}\n")
    }
}

/// CSV: `# method: {...}` comment line, then `dims...,n,accuracy,ci_low,ci_high`.
pub fn write_accuracy_csv<W: Write>(
    mut w: W,
    dims: &[Dimension],
    cells: &[AccuracyCell],
    method: &MethodInfo,
) -> Result<(), AnalysisError> {
    w.write_all(method.comment_lines().as_bytes())?;
    let mut header: Vec<&str> = dims.iter().map(|d| d.name()).collect();
    header.extend(["n", "accuracy", "ci_low", "ci_high"]);
    writeln!(w, "{}", header.join(","))?;
    for c in cells {
        let mut row: Vec<String> = dims
            .iter()
            .map(|d| csv_field(&c.group.get(d).map_or("NA".into(), |v| v.to_string())))
            .collect();
        row.push(c.n.to_string());
        row.push(fmt_float(c.accuracy));
        row.push(fmt_float(c.ci_low));
        row.push(fmt_float(c.ci_high));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// CSV of aggregate rows: `dims...,conditions,n,aggregate,pooled_accuracy`.
pub fn write_aggregate_csv<W: Write>(
    mut w: W,
    dims: &[Dimension],
    rows: &[AggregateRow],
    method: &MethodInfo,
) -> Result<(), AnalysisError> {
    w.write_all(method.comment_lines().as_bytes())?;
    let dims: Vec<Dimension> = dims.iter().copied().filter(|d| *d != Dimension::Condition).collect();
    let mut header: Vec<&str> = dims.iter().map(|d| d.name()).collect();
    header.extend(["conditions", "n", "aggregate", "pooled_accuracy"]);
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut row: Vec<String> = dims
            .iter()
            .map(|d| csv_field(&r.group.get(d).map_or("NA".into(), |v| v.to_string())))
            .collect();
        row.push(r.conditions.to_string());
        row.push(r.n.to_string());
        row.push(fmt_float(r.aggregate));
        row.push(fmt_float(r.pooled_accuracy));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{CandidateScore, ScorerId, VerbClass};
    use crate::stimuli::{expand_nounpp, with_simple_items, NounPair, VerbPair};

    pub(crate) fn items() -> Vec<StimulusItem> {
        let subj = NounPair::new("athlete", "athletes").unwrap();
        let attr = NounPair::new("bike", "bikes").unwrap();
        let nounpp = expand_nounpp(&subj, "near", &attr, &VerbPair::be(), "ab").unwrap();
        with_simple_items(nounpp).unwrap()
    }

    pub(crate) fn record(item: &StimulusItem, scorer: ScorerId, correct: bool) -> ScoreRecord {
        let (c, i) = if correct { (-1.0, -2.0) } else { (-2.0, -1.0) };
        ScoreRecord::new(
            &item.id,
            scorer,
            CandidateScore::new(" x", vec!["x".into()], vec![c]).unwrap(),
            CandidateScore::new(" y", vec!["y".into()], vec![i]).unwrap(),
            VerbClass::Be,
        )
        .unwrap()
    }

    fn ci() -> CiParams {
        CiParams { resamples: 200, ..CiParams::default() }
    }

    #[test]
    fn partition_counts() {
        let items: Vec<StimulusItem> = items().into_iter().filter(|i| i.condition.structure() == Structure::NounPP).collect();
        let scorer = ScorerId::oracle("o", 1);
        let records: Vec<ScoreRecord> = items
            .iter()
            .chain(items.iter())
            .map(|i| record(i, scorer.clone(), true))
            .collect();
        assert_eq!(records.len(), 8);
        let cells = disaggregate(&records, &items, &[Dimension::Condition], Aggregation::Sum, &ci(), Exec::Sequential).unwrap();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| c.n == 2 && c.accuracy == 1.0));
        assert!(cells.iter().all(|c| c.ci_low == 1.0 && c.ci_high == 1.0));
        let labels: Vec<String> = cells.iter().map(|c| c.condition().unwrap().label()).collect();
        assert_eq!(labels, ["SS", "SP", "PS", "PP"]);
    }

    #[test]
    fn unknown_dimension_and_item() {
        assert!(matches!("colour".parse::<Dimension>(), Err(AnalysisError::UnknownDimension(_))));
        assert_eq!(Dimension::parse_list("condition, step").unwrap(), vec![Dimension::Condition, Dimension::Step]);
        let items = items();
        let rec = record(&items[0], ScorerId::oracle("o", 1), true);
        let r = disaggregate(std::slice::from_ref(&rec), &[], &[Dimension::Condition], Aggregation::Sum, &ci(), Exec::Sequential);
        assert!(matches!(r, Err(AnalysisError::UnknownItem(_))));
        let r = disaggregate(&[rec], &items, &[], Aggregation::Sum, &ci(), Exec::Sequential);
        assert!(matches!(r, Err(AnalysisError::NoDimensions)));
    }

    fn cell(label: &str, n: usize, correct: usize) -> AccuracyCell {
        let c: Condition = label.parse().unwrap();
        AccuracyCell {
            group: [(Dimension::Condition, condition_value(c))].into_iter().collect(),
            n,
            correct,
            accuracy: correct as f64 / n as f64,
            ci_low: 0.0,
            ci_high: 1.0,
        }
    }

    #[test]
    fn aggregate_examples() {
        let cells = [cell("SS", 4, 4), cell("SP", 4, 4), cell("PS", 4, 0), cell("PP", 4, 0)];
        assert_eq!(aggregate_score(&cells).unwrap(), 0.5);
        let all = [cell("SS", 2, 2), cell("SP", 2, 2), cell("PS", 2, 2), cell("PP", 2, 2)];
        assert_eq!(aggregate_score(&all).unwrap(), 1.0);
        // unweighted: unequal n does not matter
        assert_eq!(aggregate_score(&[cell("S", 10, 10), cell("P", 2, 0)]).unwrap(), 0.5);
        assert!(matches!(
            aggregate_score(&[cell("S", 1, 1), cell("S", 1, 0), cell("P", 1, 1)]),
            Err(AnalysisError::DuplicateCondition(_))
        ));
        assert!(matches!(
            aggregate_score(&[cell("SS", 1, 1), cell("SP", 1, 1), cell("PS", 1, 1)]),
            Err(AnalysisError::MissingCondition(ref c)) if c == "PP"
        ));
    }

    #[test]
    fn aggregate_rows_emit_both_means() {
        let cells = [cell("S", 10, 10), cell("P", 2, 0)];
        let rows = aggregate_rows(&cells).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].aggregate, 0.5);
        assert_eq!(rows[0].pooled_accuracy, 10.0 / 12.0);
    }

    #[test]
    fn csv_layout() {
        let cells = [cell("S", 2, 1)];
        let method = MethodInfo::new(Aggregation::Sum, &CiParams::default(), &ChangepointParams::default());
        let mut buf = Vec::new();
        write_accuracy_csv(&mut buf, &[Dimension::Condition], &cells, &method).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# method: {"));
        assert_eq!(lines[1], "condition,n,accuracy,ci_low,ci_high");
        assert_eq!(lines[2], "S,2,0.500000,0.000000,1.000000");
    }

    #[test]
    fn parallel_and_sequential_cells_agree() {
        let items = items();
        let records: Vec<ScoreRecord> = (0..5)
            .flat_map(|s| {
                items
                    .iter()
                    .enumerate()
                    .map(move |(k, i)| record(i, ScorerId::checkpoint("m", "14m", s, 0), !(k + s as usize).is_multiple_of(3)))
            })
            .collect();
        for pooling in [CiPooling::Items, CiPooling::Seeds] {
            let ci = CiParams { pooling, ..ci() };
            let dims = [Dimension::Condition];
            let a = disaggregate(&records, &items, &dims, Aggregation::Sum, &ci, Exec::Sequential).unwrap();
            let b = disaggregate(&records, &items, &dims, Aggregation::Sum, &ci, Exec::Parallel).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|c| c.ci_low <= c.accuracy && c.accuracy <= c.ci_high));
        }
    }
}
