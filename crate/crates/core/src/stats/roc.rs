use serde::{Deserialize, Serialize};

use super::{ScoredSet, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores at or above the threshold are called positive. The first
    /// point uses `+inf` (nothing called positive).
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

struct Counted {
    threshold: f64,
    tp: usize,
    fp: usize,
}

fn counted_points(set: &ScoredSet) -> Result<(Vec<Counted>, usize, usize), StatsError> {
    let (pos, neg) = set.require_both_classes()?;
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&a, &b| set.scores()[b].total_cmp(&set.scores()[a]));
    let mut out = vec![Counted {
        threshold: f64::INFINITY,
        tp: 0,
        fp: 0,
    }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < idx.len() {
        let t = set.scores()[idx[i]];
        while i < idx.len() && set.scores()[idx[i]] == t {
            if set.labels()[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(Counted { threshold: t, tp, fp });
    }
    Ok((out, pos, neg))
}

/// One point per distinct score, in descending threshold order, preceded by
/// the `(0, 0)` sentinel. The last point is always `(1, 1)`.
pub fn roc_points(set: &ScoredSet) -> Result<Vec<RocPoint>, StatsError> {
    let (pts, pos, neg) = counted_points(set)?;
    Ok(pts
        .into_iter()
        .map(|c| RocPoint {
            threshold: c.threshold,
            fpr: c.fp as f64 / neg as f64,
            tpr: c.tp as f64 / pos as f64,
        })
        .collect())
}

/// Mann-Whitney AUC as an exact ratio `(2U, 2 * n_pos * n_neg)`, using
/// doubled mid-ranks so ties count one half.
pub fn auc_ratio(set: &ScoredSet) -> Result<(u128, u128), StatsError> {
    let (pos, neg) = set.require_both_classes()?;
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&a, &b| set.scores()[a].total_cmp(&set.scores()[b]));
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && set.scores()[idx[j + 1]] == set.scores()[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the doubled mid-rank (i+1) + (j+1).
        let doubled = (i + j + 2) as u128;
        let tied_pos = idx[i..=j].iter().filter(|&&k| set.labels()[k] == 1).count() as u128;
        rank_sum2 += doubled * tied_pos;
        i = j + 1;
    }
    let p = pos as u128;
    Ok((rank_sum2 - p * (p + 1), 2 * p * neg as u128))
}

pub fn auc(set: &ScoredSet) -> Result<f64, StatsError> {
    let (num, den) = auc_ratio(set)?;
    Ok(num as f64 / den as f64)
}

/// Trapezoidal area under a curve given in [`roc_points`] order.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub youden: f64,
}

/// Maximises Youden's J over the ROC points; ties go to the lower threshold.
pub fn operating_point(set: &ScoredSet) -> Result<OperatingPoint, StatsError> {
    let (pts, pos, neg) = counted_points(set)?;
    // J * pos * neg = tp * neg - fp * pos, compared exactly.
    let scaled = |c: &Counted| c.tp as i128 * neg as i128 - c.fp as i128 * pos as i128;
    let mut best = &pts[0];
    for c in &pts[1..] {
        if scaled(c) >= scaled(best) {
            best = c;
        }
    }
    let sensitivity = best.tp as f64 / pos as f64;
    let specificity = 1.0 - best.fp as f64 / neg as f64;
    Ok(OperatingPoint {
        threshold: best.threshold,
        sensitivity,
        specificity,
        youden: scaled(best) as f64 / (pos * neg) as f64,
    })
}
