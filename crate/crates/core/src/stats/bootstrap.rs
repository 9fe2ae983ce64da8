use rand::Rng;

use super::{ScoredSet, StatsError};
use crate::rng::rng_from_seed;

pub const DEFAULT_RESAMPLES: usize = 2000;
const MAX_REDRAWS: usize = 100;

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile 95% interval of `metric` over simple bootstrap resamples.
///
/// A single-class resample is redrawn up to 100 times before being
/// skipped; skipped draws and draws where `metric` returns `None` count as
/// undefined, and more than 10% undefined is an error.
pub fn bootstrap_ci(metric: impl Fn(&ScoredSet) -> Option<f64>, set: &ScoredSet, resamples: usize, seed: u64) -> Result<(f64, f64), StatsError> {
    if resamples < 100 {
        return Err(StatsError::Resamples(resamples));
    }
    if set.is_empty() {
        return Err(StatsError::SingleClass { positives: 0, negatives: 0 });
    }
    let mut rng = rng_from_seed(seed);
    let n = set.len();
    let mut idx = vec![0usize; n];
    let mut values = Vec::with_capacity(resamples);
    let mut undefined = 0;
    for _ in 0..resamples {
        let mut drawn = false;
        for _ in 0..=MAX_REDRAWS {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            let pos = idx.iter().filter(|&&i| set.labels()[i] == 1).count();
            if pos > 0 && pos < n {
                drawn = true;
                break;
            }
        }
        match drawn.then(|| metric(&set.resample(&idx))).flatten() {
            Some(v) if v.is_finite() => values.push(v),
            _ => undefined += 1,
        }
    }
    if undefined * 10 > resamples {
        return Err(StatsError::Undefined { undefined, resamples });
    }
    values.sort_by(f64::total_cmp);
    Ok((percentile(&values, 0.025), percentile(&values, 0.975)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::auc;
    use rand_distr::{Distribution, Normal};

    fn gaussian_set(seed: u64, n: usize) -> ScoredSet {
        let mut rng = rng_from_seed(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let scores = labels.iter().map(|&l| l as f64 + noise.sample(&mut rng)).collect();
        ScoredSet::new(scores, labels).unwrap()
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 0.1), 1.4);
        assert_eq!(percentile(&v, 1.0), 5.0);
    }

    #[test]
    fn separated_set_has_degenerate_interval() {
        let set = ScoredSet::new(vec![0.9, 0.8, 0.2, 0.1], vec![1, 1, 0, 0]).unwrap();
        assert_eq!(bootstrap_ci(|s| auc(s).ok(), &set, 500, 1).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let set = gaussian_set(3, 80);
        let a = bootstrap_ci(|s| auc(s).ok(), &set, 300, 9).unwrap();
        assert_eq!(a, bootstrap_ci(|s| auc(s).ok(), &set, 300, 9).unwrap());
        assert!(a.0 < a.1);
    }

    #[test]
    fn width_roughly_halves_when_n_quadruples() {
        let w = |n| {
            let (lo, hi) = bootstrap_ci(|s| auc(s).ok(), &gaussian_set(21, n), 1000, 5).unwrap();
            hi - lo
        };
        let ratio = w(2000) / w(500);
        assert!((0.35..0.65).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn undefined_metric_is_an_error() {
        let set = gaussian_set(1, 20);
        assert!(matches!(bootstrap_ci(|_| None, &set, 100, 1), Err(StatsError::Undefined { .. })));
        assert!(matches!(bootstrap_ci(|_| Some(0.0), &set, 99, 1), Err(StatsError::Resamples(99))));
        let single = ScoredSet::new(vec![0.1, 0.2], vec![1, 1]).unwrap();
        assert!(matches!(bootstrap_ci(|_| Some(0.0), &single, 100, 1), Err(StatsError::Undefined { .. })));
    }

    #[test]
    fn interval_contains_estimate_for_nearly_all_sets() {
        let mut inside = 0;
        for seed in 0..100 {
            let set = gaussian_set(100 + seed, 60);
            let a = auc(&set).unwrap();
            let (lo, hi) = bootstrap_ci(|s| auc(s).ok(), &set, 200, seed).unwrap();
            if lo <= a && a <= hi {
                inside += 1;
            }
        }
        assert!(inside >= 99, "{inside} of 100");
    }
}
