//! ROC analysis, DeLong's paired test and bootstrap intervals.

mod bootstrap;
mod delong;
mod roc;

pub use bootstrap::{bootstrap_ci, percentile, DEFAULT_RESAMPLES};
pub use delong::{delong_test, delong_variance, DelongResult};
pub use roc::{auc, auc_ratio, operating_point, roc_points, trapezoid_area, OperatingPoint, RocPoint};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    Length { scores: usize, labels: usize },
    #[error("both classes are required ({positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("label {0} is not 0 or 1")]
    Label(u8),
    #[error("score at index {0} is not finite")]
    Score(usize),
    #[error("paired sets have different labels")]
    LabelMismatch,
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    Resamples(usize),
    #[error("metric undefined on {undefined} of {resamples} resamples")]
    Undefined { undefined: usize, resamples: usize },
}

/// Scores aligned with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, StatsError> {
        if scores.len() != labels.len() {
            return Err(StatsError::Length {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(StatsError::Label(l));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(StatsError::Score(i));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub fn require_both_classes(&self) -> Result<(usize, usize), StatsError> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(StatsError::SingleClass { positives: p, negatives: n });
        }
        Ok((p, n))
    }

    /// Rows selected by index (repeats allowed).
    pub fn resample(&self, idx: &[usize]) -> ScoredSet {
        ScoredSet {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Sensitivity and specificity when `score >= threshold` is called positive.
    pub fn rates_at(&self, threshold: f64) -> (f64, f64) {
        let (mut tp, mut tn) = (0usize, 0usize);
        for (&s, &l) in self.scores.iter().zip(&self.labels) {
            match (s >= threshold, l) {
                (true, 1) => tp += 1,
                (false, 0) => tn += 1,
                _ => {}
            }
        }
        (tp as f64 / self.positives() as f64, tn as f64 / self.negatives() as f64)
    }
}

/// Point estimate with a percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub other: String,
    pub auc_self: f64,
    pub auc_other: f64,
    pub z: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: Estimate,
    pub sensitivity: Estimate,
    pub specificity: Estimate,
    pub threshold: f64,
    /// `validation` when the threshold came with the model, else `youden_on_test`.
    pub threshold_source: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub resamples: usize,
    pub comparisons: Vec<Comparison>,
}

/// AUC, and sensitivity/specificity at `threshold` (Youden on this set
/// when absent), each with a bootstrap interval.
pub fn evaluate(set: &ScoredSet, threshold: Option<f64>, resamples: usize, seed: u64) -> Result<EvalReport, StatsError> {
    let (n_pos, n_neg) = set.require_both_classes()?;
    let (threshold, source) = match threshold {
        Some(t) => (t, "validation"),
        None => (operating_point(set)?.threshold, "youden_on_test"),
    };
    let (sens, spec) = set.rates_at(threshold);
    let auc_ci = bootstrap_ci(|s| auc(s).ok(), set, resamples, seed)?;
    let sens_ci = bootstrap_ci(|s| Some(s.rates_at(threshold).0), set, resamples, seed)?;
    let spec_ci = bootstrap_ci(|s| Some(s.rates_at(threshold).1), set, resamples, seed)?;
    let est = |value, (ci_low, ci_high)| Estimate { value, ci_low, ci_high };
    Ok(EvalReport {
        auc: est(auc(set)?, auc_ci),
        sensitivity: est(sens, sens_ci),
        specificity: est(spec, spec_ci),
        threshold,
        threshold_source: source.to_string(),
        n_pos,
        n_neg,
        resamples,
        comparisons: Vec::new(),
    })
}
