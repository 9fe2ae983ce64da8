use serde::{Deserialize, Serialize};

use super::{auc, ScoredSet, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub z: f64,
    pub p: f64,
}

/// Variances below this are treated as zero.
const DEGENERATE_VAR: f64 = 1e-12;

fn psi(x: f64, y: f64) -> f64 {
    if x > y {
        1.0
    } else if x == y {
        0.5
    } else {
        0.0
    }
}

/// Structural components: `V10` over positives and `V01` over negatives.
fn components(set: &ScoredSet) -> (Vec<f64>, Vec<f64>) {
    let pos: Vec<f64> = set.scores().iter().zip(set.labels()).filter(|(_, &l)| l == 1).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = set.scores().iter().zip(set.labels()).filter(|(_, &l)| l == 0).map(|(&s, _)| s).collect();
    let v10 = pos.iter().map(|&x| neg.iter().map(|&y| psi(x, y)).sum::<f64>() / neg.len() as f64).collect();
    let v01 = neg.iter().map(|&y| pos.iter().map(|&x| psi(x, y)).sum::<f64>() / pos.len() as f64).collect();
    (v10, v01)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1) as f64
}

fn check_pair(a: &ScoredSet, b: &ScoredSet) -> Result<(usize, usize), StatsError> {
    if a.labels() != b.labels() {
        return Err(StatsError::LabelMismatch);
    }
    a.require_both_classes()
}

/// DeLong estimate of `var(auc_a - auc_b)` for paired sets.
pub fn delong_variance(a: &ScoredSet, b: &ScoredSet) -> Result<f64, StatsError> {
    let (m, n) = check_pair(a, b)?;
    let (a10, a01) = components(a);
    let (b10, b01) = components(b);
    let s10 = covariance(&a10, &a10) + covariance(&b10, &b10) - 2.0 * covariance(&a10, &b10);
    let s01 = covariance(&a01, &a01) + covariance(&b01, &b01) - 2.0 * covariance(&a01, &b01);
    Ok(s10 / m as f64 + s01 / n as f64)
}

/// Two-sided paired test of equal AUCs.
pub fn delong_test(a: &ScoredSet, b: &ScoredSet) -> Result<DelongResult, StatsError> {
    let var = delong_variance(a, b)?;
    let (auc_a, auc_b) = (auc(a)?, auc(b)?);
    if !(var >= DEGENERATE_VAR) {
        return Ok(DelongResult { auc_a, auc_b, z: 0.0, p: 1.0 });
    }
    let z = (auc_a - auc_b) / var.sqrt();
    // Two-sided normal tail; clamped so a reported p stays positive.
    let p = libm::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(DelongResult { auc_a, auc_b, z, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn pair(seed: u64, n: usize) -> (ScoredSet, ScoredSet) {
        let mut rng = rng_from_seed(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let a = labels.iter().map(|&l| l as f64 + noise.sample(&mut rng)).collect();
        let b = labels.iter().map(|&l| 0.6 * l as f64 + noise.sample(&mut rng)).collect();
        (ScoredSet::new(a, labels.clone()).unwrap(), ScoredSet::new(b, labels).unwrap())
    }

    #[test]
    fn identical_inputs_give_unit_p() {
        let (a, _) = pair(1, 60);
        let r = delong_test(&a, &a).unwrap();
        assert_eq!((r.z, r.p), (0.0, 1.0));
        assert_eq!(r.auc_a, auc(&a).unwrap());
    }

    #[test]
    fn known_small_case() {
        // Hand-computed: A = {pos .8 .6, neg .4 .2} is perfect, B swaps .6/.4.
        let labels = vec![1, 1, 0, 0];
        let a = ScoredSet::new(vec![0.8, 0.6, 0.4, 0.2], labels.clone()).unwrap();
        let b = ScoredSet::new(vec![0.8, 0.4, 0.6, 0.2], labels).unwrap();
        // V10: A = (1, 1), B = (1, .5); V01: A = (1, 1), B = (.5, 1).
        // s10 = var(A10 - B10) = var(0, .5) = .125, likewise s01.
        let var = delong_variance(&a, &b).unwrap();
        assert!((var - (0.125 / 2.0 + 0.125 / 2.0)).abs() < 1e-15);
        let r = delong_test(&a, &b).unwrap();
        assert!((r.z - 0.25 / 0.125f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_labels() {
        let a = ScoredSet::new(vec![0.1, 0.9], vec![0, 1]).unwrap();
        let b = ScoredSet::new(vec![0.1, 0.9], vec![1, 0]).unwrap();
        assert_eq!(delong_test(&a, &b), Err(StatsError::LabelMismatch));
    }

    proptest! {
        #[test]
        fn antisymmetric_and_self_consistent(seed in 0u64..5000, n in 4usize..80) {
            let (a, b) = pair(seed, n);
            let ab = delong_test(&a, &b).unwrap();
            let ba = delong_test(&b, &a).unwrap();
            prop_assert!((ab.z + ba.z).abs() <= 1e-12);
            prop_assert!(ab.p > 0.0 && ab.p <= 1.0);
            prop_assert_eq!(delong_test(&a, &a).unwrap().p, 1.0);
        }
    }
}
