use std::collections::BTreeMap;

use serde::Serialize;

use super::{aggregate_score, disaggregate, AccuracyCell, AnalysisError, CiParams, Dimension, GroupKey};
use crate::par::Exec;
use crate::scoring::{Aggregation, ScoreRecord};
use crate::stimuli::{Condition, StimulusItem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl TrajectoryPoint {
    fn from_cell(step: u64, c: &AccuracyCell) -> Self {
        TrajectoryPoint {
            step,
            n: c.n,
            correct: c.correct,
            accuracy: c.accuracy,
            ci_low: c.ci_low,
            ci_high: c.ci_high,
        }
    }
}

/// Accuracy over training steps for one key and condition. `condition` is
/// `None` for the aggregate series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySeries {
    pub key: GroupKey,
    pub condition: Option<Condition>,
    pub points: Vec<TrajectoryPoint>,
}

impl TrajectorySeries {
    pub fn steps(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.step).collect()
    }

    pub fn label(&self) -> String {
        let mut parts: Vec<String> = self.key.values().map(|v| v.to_string()).collect();
        parts.push(self.condition.map_or("aggregate".into(), |c| c.label()));
        parts.join("/")
    }
}

/// One series per (key, condition), points sorted by step. Every record must
/// carry a step.
pub fn build_trajectory(
    records: &[ScoreRecord],
    items: &[StimulusItem],
    key_dims: &[Dimension],
    aggregation: Aggregation,
    ci: &CiParams,
    exec: Exec,
) -> Result<Vec<TrajectorySeries>, AnalysisError> {
    if let Some(r) = records.iter().find(|r| r.scorer.step.is_none()) {
        return Err(AnalysisError::MissingStep(r.item_id.clone()));
    }
    let mut dims: Vec<Dimension> = key_dims
        .iter()
        .copied()
        .filter(|d| *d != Dimension::Step && *d != Dimension::Condition)
        .collect();
    dims.push(Dimension::Condition);
    dims.push(Dimension::Step);
    let cells = disaggregate(records, items, &dims, aggregation, ci, exec)?;

    let mut series: BTreeMap<(GroupKey, Option<Condition>), Vec<TrajectoryPoint>> = BTreeMap::new();
    for cell in &cells {
        let step = cell.group[&Dimension::Step].as_int().expect("steps are present") as u64;
        let condition = cell.condition();
        let mut key = cell.group.clone();
        key.remove(&Dimension::Step);
        key.remove(&Dimension::Condition);
        series
            .entry((key, condition))
            .or_default()
            .push(TrajectoryPoint::from_cell(step, cell));
    }
    Ok(series
        .into_iter()
        .map(|((key, condition), mut points)| {
            points.sort_by_key(|p| p.step);
            TrajectorySeries { key, condition, points }
        })
        .collect())
}

/// Aggregate series for one key: the unweighted condition mean at each step.
/// The band collapses to the point value.
pub fn aggregate_trajectory(series: &[TrajectorySeries]) -> Result<Vec<TrajectorySeries>, AnalysisError> {
    let mut per_key: BTreeMap<&GroupKey, BTreeMap<u64, Vec<AccuracyCell>>> = BTreeMap::new();
    for s in series.iter().filter(|s| s.condition.is_some()) {
        let condition = s.condition.expect("filtered");
        for p in &s.points {
            per_key.entry(&s.key).or_default().entry(p.step).or_default().push(AccuracyCell {
                group: [(Dimension::Condition, super::condition_value(condition))].into_iter().collect(),
                n: p.n,
                correct: p.correct,
                accuracy: p.accuracy,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
            });
        }
    }
    per_key
        .into_iter()
        .map(|(key, steps)| {
            let points = steps
                .into_iter()
                .map(|(step, cells)| {
                    let value = aggregate_score(&cells)?;
                    Ok(TrajectoryPoint {
                        step,
                        n: cells.iter().map(|c| c.n).sum(),
                        correct: cells.iter().map(|c| c.correct).sum(),
                        accuracy: value,
                        ci_low: value,
                        ci_high: value,
                    })
                })
                .collect::<Result<Vec<_>, AnalysisError>>()?;
            Ok(TrajectorySeries { key: key.clone(), condition: None, points })
        })
        .collect()
}
