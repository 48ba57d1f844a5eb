use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;

/// Which unit is resampled when building intervals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiPooling {
    /// Resample item outcomes (outcomes from all seeds pooled).
    #[default]
    Items,
    /// Resample whole seeds, keeping each seed's outcomes together.
    Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CiParams {
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
    pub pooling: CiPooling,
}

impl Default for CiParams {
    fn default() -> Self {
        CiParams {
            resamples: 1000,
            alpha: 0.05,
            seed: 42,
            pooling: CiPooling::Items,
        }
    }
}

impl CiParams {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        check_params(self.resamples, self.alpha)
    }
}

fn check_params(resamples: usize, alpha: f64) -> Result<(), AnalysisError> {
    if resamples < 1 {
        return Err(AnalysisError::InvalidBootstrap("resamples must be >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AnalysisError::InvalidBootstrap(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Lower and upper percentile of sorted bootstrap statistics.
fn percentiles(mut stats: Vec<f64>, alpha: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let b = stats.len();
    let lo = ((alpha / 2.0 * b as f64).floor() as usize).min(b - 1);
    let hi = (((1.0 - alpha / 2.0) * b as f64).ceil() as usize)
        .saturating_sub(1)
        .min(b - 1);
    (stats[lo], stats[hi])
}

/// Percentile bootstrap interval for the proportion of `true` outcomes.
pub fn bootstrap_ci(outcomes: &[bool], resamples: usize, alpha: f64, seed: u64) -> Result<(f64, f64), AnalysisError> {
    if outcomes.is_empty() {
        return Err(AnalysisError::EmptyOutcomes);
    }
    check_params(resamples, alpha)?;
    let n = outcomes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = (0..resamples)
        .map(|_| {
            let hits = (0..n).filter(|_| outcomes[rng.gen_range(0..n)]).count();
            hits as f64 / n as f64
        })
        .collect();
    Ok(percentiles(stats, alpha))
}

/// Cluster bootstrap: resample clusters, statistic is the pooled proportion.
pub fn cluster_bootstrap_ci(
    clusters: &[Vec<bool>],
    resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<(f64, f64), AnalysisError> {
    let clusters: Vec<(usize, usize)> = clusters
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| (c.iter().filter(|x| **x).count(), c.len()))
        .collect();
    if clusters.is_empty() {
        return Err(AnalysisError::EmptyOutcomes);
    }
    check_params(resamples, alpha)?;
    let k = clusters.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats = (0..resamples)
        .map(|_| {
            let (mut hits, mut total) = (0usize, 0usize);
            for _ in 0..k {
                let (h, t) = clusters[rng.gen_range(0..k)];
                hits += h;
                total += t;
            }
            hits as f64 / total as f64
        })
        .collect();
    Ok(percentiles(stats, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_outcomes_have_zero_width() {
        assert_eq!(bootstrap_ci(&[true; 7], 1000, 0.05, 1).unwrap(), (1.0, 1.0));
        assert_eq!(bootstrap_ci(&[false; 7], 1000, 0.05, 1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn six_of_ten() {
        let mut xs = vec![true; 6];
        xs.extend([false; 4]);
        let (lo, hi) = bootstrap_ci(&xs, 1000, 0.05, 42).unwrap();
        assert!(lo <= 0.6 && 0.6 <= hi, "({lo}, {hi})");
        assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        assert!(hi - lo > 0.2);
        assert_eq!(bootstrap_ci(&xs, 1000, 0.05, 42).unwrap(), (lo, hi));
    }

    #[test]
    fn errors() {
        assert!(matches!(bootstrap_ci(&[], 10, 0.05, 0), Err(AnalysisError::EmptyOutcomes)));
        assert!(bootstrap_ci(&[true], 0, 0.05, 0).is_err());
        assert!(bootstrap_ci(&[true], 10, 1.0, 0).is_err());
        assert!(cluster_bootstrap_ci(&[vec![]], 10, 0.05, 0).is_err());
    }

    #[test]
    fn cluster_bootstrap_brackets() {
        let clusters = vec![vec![true, true, false], vec![false, false], vec![true; 4]];
        let (lo, hi) = cluster_bootstrap_ci(&clusters, 500, 0.05, 3).unwrap();
        let point = 6.0 / 9.0;
        assert!(lo <= point && point <= hi);
    }

    #[test]
    fn percentile_indices() {
        let stats: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(percentiles(stats, 0.05), (25.0, 974.0));
    }
}
