use serde::{Deserialize, Serialize};

use super::{AnalysisError, TrajectorySeries};

/// Success counts over a step axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinomialSeries {
    pub steps: Vec<u64>,
    pub successes: Vec<u64>,
    pub trials: Vec<u64>,
}

impl BinomialSeries {
    pub fn new(steps: Vec<u64>, successes: Vec<u64>, trials: Vec<u64>) -> Result<Self, AnalysisError> {
        if steps.len() != successes.len() || steps.len() != trials.len() {
            return Err(AnalysisError::MisalignedSeries);
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) || successes.iter().zip(&trials).any(|(s, t)| s > t) {
            return Err(AnalysisError::MisalignedSeries);
        }
        Ok(BinomialSeries { steps, successes, trials })
    }

    /// Series with `trials` observations per point and rounded success counts.
    pub fn from_accuracies(steps: Vec<u64>, accuracies: &[f64], trials: u64) -> Result<Self, AnalysisError> {
        let successes = accuracies.iter().map(|a| (a * trials as f64).round() as u64).collect();
        Self::new(steps, successes, vec![trials; accuracies.len()])
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn accuracy(&self, i: usize) -> f64 {
        self.successes[i] as f64 / self.trials[i] as f64
    }
}

impl From<&TrajectorySeries> for BinomialSeries {
    fn from(s: &TrajectorySeries) -> Self {
        BinomialSeries {
            steps: s.points.iter().map(|p| p.step).collect(),
            successes: s.points.iter().map(|p| p.correct as u64).collect(),
            trials: s.points.iter().map(|p| p.n as u64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// ln(number of points)
    #[default]
    Bic,
    Fixed(f64),
}

impl Penalty {
    pub fn resolve(self, points: usize) -> f64 {
        match self {
            Penalty::Bic => (points as f64).ln(),
            Penalty::Fixed(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChangepointParams {
    pub min_segment: usize,
    pub penalty: Penalty,
}

impl Default for ChangepointParams {
    fn default() -> Self {
        ChangepointParams { min_segment: 2, penalty: Penalty::Bic }
    }
}

fn xlogx_ratio(k: f64, total: f64) -> f64 {
    if k <= 0.0 {
        0.0
    } else {
        k * (k / total).ln()
    }
}

/// Maximized binomial log-likelihood of pooled counts.
fn segment_ll(s: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    xlogx_ratio(s, t) + xlogx_ratio(t - s, t)
}

struct Prefix {
    s: Vec<f64>,
    t: Vec<f64>,
}

impl Prefix {
    fn new(series: &BinomialSeries) -> Self {
        let mut s = vec![0.0];
        let mut t = vec![0.0];
        for i in 0..series.len() {
            s.push(s[i] + series.successes[i] as f64);
            t.push(t[i] + series.trials[i] as f64);
        }
        Prefix { s, t }
    }

    fn ll(&self, lo: usize, hi: usize) -> f64 {
        segment_ll(self.s[hi] - self.s[lo], self.t[hi] - self.t[lo])
    }
}

/// Breakpoint steps (first step of each new segment), ascending.
pub fn detect_changepoints(series: &BinomialSeries, params: &ChangepointParams) -> Result<Vec<u64>, AnalysisError> {
    detect_changepoints_joint(std::slice::from_ref(series), params)
}

/// Binary segmentation on the summed log-likelihood gain of several series
/// sharing one step axis.
pub fn detect_changepoints_joint(
    series: &[BinomialSeries],
    params: &ChangepointParams,
) -> Result<Vec<u64>, AnalysisError> {
    let first = series.first().ok_or(AnalysisError::MisalignedSeries)?;
    if series.iter().any(|s| s.steps != first.steps) {
        return Err(AnalysisError::MisalignedSeries);
    }
    let m = params.min_segment.max(1);
    let len = first.len();
    if len < 2 * m {
        return Err(AnalysisError::SeriesTooShort { len, needed: 2 * m });
    }
    let penalty = params.penalty.resolve(len);
    let prefixes: Vec<Prefix> = series.iter().map(Prefix::new).collect();
    let ll = |lo: usize, hi: usize| prefixes.iter().map(|p| p.ll(lo, hi)).sum::<f64>();

    let mut cuts = Vec::new();
    let mut stack = vec![(0usize, len)];
    while let Some((lo, hi)) = stack.pop() {
        if hi - lo < 2 * m {
            continue;
        }
        let whole = ll(lo, hi);
        let mut best: Option<(usize, f64)> = None;
        for k in lo + m..=hi - m {
            let gain = ll(lo, k) + ll(k, hi) - whole;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((k, gain));
            }
        }
        if let Some((k, gain)) = best {
            if gain > penalty {
                cuts.push(k);
                stack.push((lo, k));
                stack.push((k, hi));
            }
        }
    }
    cuts.sort_unstable();
    Ok(cuts.into_iter().map(|k| first.steps[k]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plateaus(levels: &[f64], width: usize, offset: u64) -> BinomialSeries {
        let acc: Vec<f64> = levels.iter().flat_map(|l| std::iter::repeat_n(*l, width)).collect();
        let steps = (0..acc.len() as u64).map(|s| s + offset).collect();
        BinomialSeries::from_accuracies(steps, &acc, 100).unwrap()
    }

    #[test]
    fn two_plateaus() {
        let s = plateaus(&[0.1, 0.9], 8, 0);
        assert_eq!(detect_changepoints(&s, &ChangepointParams::default()).unwrap(), vec![8]);
    }

    #[test]
    fn shift_moves_breakpoints() {
        let s = plateaus(&[0.1, 0.5, 0.9], 8, 1000);
        assert_eq!(detect_changepoints(&s, &ChangepointParams::default()).unwrap(), vec![1008, 1016]);
    }

    #[test]
    fn constant_has_none() {
        let s = plateaus(&[0.4], 12, 0);
        assert!(detect_changepoints(&s, &ChangepointParams::default()).unwrap().is_empty());
    }

    #[test]
    fn min_segment_respected() {
        // a single outlying point cannot form its own segment when min_segment is 3
        let mut acc = vec![0.2; 10];
        acc[0] = 0.9;
        let s = BinomialSeries::from_accuracies((0..10).collect(), &acc, 100).unwrap();
        let p = ChangepointParams { min_segment: 3, penalty: Penalty::Fixed(0.0) };
        let cps = detect_changepoints(&s, &p).unwrap();
        let mut bounds = vec![0u64];
        bounds.extend(&cps);
        bounds.push(10);
        assert!(bounds.windows(2).all(|w| w[1] - w[0] >= 3), "{cps:?}");
    }

    #[test]
    fn too_short() {
        let s = plateaus(&[0.5], 3, 0);
        assert!(matches!(
            detect_changepoints(&s, &ChangepointParams::default()),
            Err(AnalysisError::SeriesTooShort { len: 3, needed: 4 })
        ));
    }

    #[test]
    fn joint_needs_shared_axis() {
        let a = plateaus(&[0.1, 0.9], 4, 0);
        let b = plateaus(&[0.1, 0.9], 4, 1);
        assert!(matches!(
            detect_changepoints_joint(&[a.clone(), b], &ChangepointParams::default()),
            Err(AnalysisError::MisalignedSeries)
        ));
        let flat = plateaus(&[0.5], 8, 0);
        assert_eq!(detect_changepoints_joint(&[a, flat], &ChangepointParams::default()).unwrap(), vec![4]);
    }

    #[test]
    fn bad_series_rejected() {
        assert!(BinomialSeries::new(vec![1, 1], vec![0, 0], vec![1, 1]).is_err());
        assert!(BinomialSeries::new(vec![1], vec![2], vec![1]).is_err());
    }
}
