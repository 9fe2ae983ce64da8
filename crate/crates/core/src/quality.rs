//! Heuristic image-quality scoring and manifest exclusion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetManifest;
use crate::image::{load_image, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub mean_luminance: f64,
    /// Variance of the 3x3 Laplacian response over interior pixels.
    pub sharpness: f64,
    /// Share of pixels whose channels are all 0 or all 1.
    pub clipped_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityThresholds {
    pub min_luminance: f64,
    pub min_sharpness: f64,
    pub max_clipped: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self {
            min_luminance: 0.05,
            min_sharpness: 1e-4,
            max_clipped: 0.6,
        }
    }
}

impl QualityThresholds {
    pub fn permissive() -> Self {
        Self {
            min_luminance: 0.0,
            min_sharpness: 0.0,
            max_clipped: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExclusionReason {
    Luminance,
    Sharpness,
    Clipped,
    Io,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::Luminance => "luminance",
            ExclusionReason::Sharpness => "sharpness",
            ExclusionReason::Clipped => "clipped",
            ExclusionReason::Io => "io",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("quality thresholds must be finite")]
pub struct ThresholdError;

pub fn quality_metrics(img: &ImageTensor) -> QualityMetrics {
    let (h, w) = (img.height(), img.width());
    let lum = img.luminance();
    let mean_luminance = lum.iter().sum::<f64>() / lum.len() as f64;

    let mut responses = Vec::with_capacity(h.saturating_sub(2) * w.saturating_sub(2));
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let c = y * w + x;
            responses.push(lum[c - w] + lum[c + w] + lum[c - 1] + lum[c + 1] - 4.0 * lum[c]);
        }
    }
    let sharpness = if responses.is_empty() {
        0.0
    } else {
        let n = responses.len() as f64;
        let mean = responses.iter().sum::<f64>() / n;
        responses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n
    };

    let clipped = img
        .data()
        .chunks_exact(3)
        .filter(|p| p.iter().all(|&v| v <= 0.0) || p.iter().all(|&v| v >= 1.0))
        .count();
    QualityMetrics {
        mean_luminance,
        sharpness,
        clipped_fraction: clipped as f64 / (h * w) as f64,
    }
}

/// First violated threshold, checked in luminance, sharpness, clipping order.
pub fn violation(m: &QualityMetrics, t: &QualityThresholds) -> Option<ExclusionReason> {
    if m.mean_luminance < t.min_luminance {
        Some(ExclusionReason::Luminance)
    } else if m.sharpness < t.min_sharpness {
        Some(ExclusionReason::Sharpness)
    } else if m.clipped_fraction > t.max_clipped {
        Some(ExclusionReason::Clipped)
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct QualityOutcome {
    pub kept: DatasetManifest,
    pub excluded: DatasetManifest,
    /// `(image_id, reason)` in input order.
    pub reasons: Vec<(String, ExclusionReason)>,
}

pub fn filter_quality(manifest: &DatasetManifest, thresholds: &QualityThresholds) -> Result<QualityOutcome, ThresholdError> {
    filter_quality_with(manifest, thresholds, |p| load_image(p).map_err(|e| e.to_string()))
}

/// As [`filter_quality`] with a caller-supplied loader; loading may run on
/// the rayon pool, output order always follows the input.
pub fn filter_quality_with<F>(
    manifest: &DatasetManifest,
    thresholds: &QualityThresholds,
    loader: F,
) -> Result<QualityOutcome, ThresholdError>
where
    F: Fn(&Path) -> Result<ImageTensor, String> + Sync,
{
    let t = thresholds;
    if ![t.min_luminance, t.min_sharpness, t.max_clipped].iter().all(|v| v.is_finite()) {
        return Err(ThresholdError);
    }
    use rayon::prelude::*;
    let verdicts: Vec<Option<ExclusionReason>> = manifest
        .records
        .par_iter()
        .map(|r| match loader(&manifest.resolve(r)) {
            Ok(img) => violation(&quality_metrics(&img), t),
            Err(e) => {
                log::debug!("{}: {e}", r.image_id);
                Some(ExclusionReason::Io)
            }
        })
        .collect();
    let mut reasons = Vec::new();
    let mut excluded_ids = std::collections::HashSet::new();
    for (r, v) in manifest.records.iter().zip(&verdicts) {
        if let Some(reason) = v {
            reasons.push((r.image_id.clone(), *reason));
            excluded_ids.insert(r.image_id.as_str());
        }
    }
    Ok(QualityOutcome {
        kept: manifest.subset(|r| !excluded_ids.contains(r.image_id.as_str())),
        excluded: manifest.subset(|r| excluded_ids.contains(r.image_id.as_str())),
        reasons,
    })
}
