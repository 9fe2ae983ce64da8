//! Contrastive pretraining loop.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{make_view_pair, AugmentError, AugmentationPolicy, FeatureCodec, StyleBank};
use crate::checkpoint::{collect_tensors, config_digest, Checkpoint, CheckpointKind, CheckpointMeta};
use crate::contrastive::{nt_xent_loss, ContrastiveError};
use crate::image::ImageTensor;
use crate::nn::{Encoder, EncoderConfig, Matrix, NnError, Optimizer, OptimizerKind, ProjectionHead, ProjectionHeadConfig, Tensor};
use crate::rng::SeedTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub batch_size: usize,
    pub temperature: f64,
    pub max_epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub saturation_patience: usize,
    /// Minimum relative improvement of the best loss that resets patience.
    pub saturation_delta: f64,
    pub encoder: EncoderConfig,
    pub projection: ProjectionHeadConfig,
    /// Set from the run's root seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            temperature: 0.5,
            max_epochs: 100,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            saturation_patience: 10,
            saturation_delta: 1e-3,
            encoder: EncoderConfig::default(),
            projection: ProjectionHeadConfig::default(),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        if self.batch_size < 2 {
            return Err(PretrainError::Config(format!("batch_size {} < 2 leaves no negatives", self.batch_size)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(PretrainError::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(PretrainError::Config(format!("learning_rate {} must be non-negative", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(PretrainError::Config("max_epochs must be positive".into()));
        }
        if !(self.saturation_delta >= 0.0) {
            return Err(PretrainError::Config("saturation_delta must be non-negative".into()));
        }
        self.encoder.validate()?;
        self.projection.validate()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error("invalid pretraining config: {0}")]
    Config(String),
    #[error("{images} usable images cannot fill one batch of {batch}")]
    TooFewImages { images: usize, batch: usize },
    #[error("loss diverged at epoch {epoch}, batch {batch} (value {value})")]
    Diverged { epoch: usize, batch: usize, value: f64 },
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] ContrastiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Saturated,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Weights from the epoch with the lowest loss.
    pub checkpoint: Checkpoint,
    /// Mean batch loss per epoch, epoch 1 first.
    pub history: Vec<f64>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// Digest of everything that determines a pretraining run besides the data.
pub fn pretrain_digest(cfg: &PretrainConfig, policy: &AugmentationPolicy) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        cfg: &'a PretrainConfig,
        seed: u64,
        policy: &'a AugmentationPolicy,
    }
    config_digest(&Key { cfg, seed: cfg.seed, policy })
}

/// Trains encoder and projection head with NT-Xent on two views per image.
///
/// Each epoch shuffles the images, drops the incomplete final batch and
/// takes one optimizer step per batch. Training stops after `max_epochs`
/// or once the best loss has not improved by `saturation_delta`
/// (relative) for `saturation_patience` consecutive epochs.
pub fn pretrain(
    images: &[ImageTensor],
    policy: &AugmentationPolicy,
    bank: &StyleBank,
    codec: &dyn FeatureCodec,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome, PretrainError> {
    cfg.validate()?;
    policy.validate()?;
    if policy.output_size != cfg.encoder.input_size {
        return Err(PretrainError::Config(format!(
            "augmentation output_size {} differs from encoder input_size {}",
            policy.output_size, cfg.encoder.input_size
        )));
    }
    if policy.p_nst > 0.0 && bank.is_empty() {
        return Err(AugmentError::EmptyStyleBank(policy.p_nst).into());
    }
    let n = cfg.batch_size;
    if images.len() < n {
        return Err(PretrainError::TooFewImages { images: images.len(), batch: n });
    }
    let tree = SeedTree::new(cfg.seed).child("pretrain");
    let mut encoder = Encoder::new(cfg.encoder.clone(), &mut tree.rng("init/encoder"))?;
    let mut head = ProjectionHead::new(encoder.embedding_dim(), cfg.projection, &mut tree.rng("init/projection"));
    let mut enc_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, encoder.params.tensors());
    let mut head_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, head.params.tensors());

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<(String, Tensor)>)> = None;
    let mut reference = f64::INFINITY;
    let mut stale = 0;
    let mut stop = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..images.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut tree.rng(&format!("epoch/{epoch}/shuffle")));
        let mut total = 0.0;
        let batches = images.len() / n;
        for (bi, batch) in order.chunks_exact(n).enumerate() {
            let pairs = batch
                .par_iter()
                .map(|&idx| make_view_pair(&images[idx], policy, bank, codec, &mut tree.rng(&format!("epoch/{epoch}/img/{idx}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let views: Vec<&ImageTensor> = pairs.iter().flat_map(|p| p.views.iter()).collect();
            let (h, enc_cache) = encoder.forward_train(&views)?;
            let (z, head_cache) = head.forward_train(&h)?;
            if !z.data.iter().all(|v| v.is_finite()) {
                return Err(PretrainError::Diverged { epoch, batch: bi, value: f64::NAN });
            }
            let out = nt_xent_loss(&z.to_f64(), z.cols, cfg.temperature)?;
            if !out.loss.is_finite() {
                return Err(PretrainError::Diverged { epoch, batch: bi, value: out.loss });
            }
            total += out.loss;
            let dz = Matrix::from_vec(z.rows, z.cols, out.grad.iter().map(|&g| g as f32).collect());
            let (head_grads, dh) = head.backward(&h, &head_cache, &dz);
            let enc_grads = encoder.backward(&enc_cache, &dh);
            enc_opt.step(encoder.params.tensors_mut(), &enc_grads, None);
            head_opt.step(head.params.tensors_mut(), &head_grads, None);
            if !encoder.params.is_finite() || !head.params.is_finite() {
                return Err(PretrainError::Diverged { epoch, batch: bi, value: f64::NAN });
            }
        }
        let loss = total / batches as f64;
        log::info!("pretrain epoch {epoch}: loss {loss:.6}");
        history.push(loss);
        if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
            best = Some((loss, epoch, collect_tensors([&encoder.params, &head.params])));
        }
        if loss < reference - cfg.saturation_delta * reference.abs() || !reference.is_finite() {
            reference = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.saturation_patience {
                stop = StopReason::Saturated;
                break;
            }
        }
    }
    let (best_loss, best_epoch, tensors) = best.expect("at least one epoch ran");
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            kind: CheckpointKind::Contrastive,
            encoder: cfg.encoder.clone(),
            projection: Some(cfg.projection),
            config_digest: pretrain_digest(cfg, policy),
            epoch: best_epoch,
            final_loss: Some(best_loss),
            seed: cfg.seed,
            threshold: None,
        },
        tensors,
    };
    Ok(PretrainOutcome {
        checkpoint,
        history,
        best_epoch,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::IdentityCodec;
    use crate::nn::{EncoderFamily, StageConfig};

    fn images(count: usize, size: usize) -> Vec<ImageTensor> {
        (0..count)
            .map(|i| {
                ImageTensor::from_fn(size, size, |y, x| {
                    let stripe = ((x + i) / (1 + i % 3)) % 2 == 0;
                    let v = if stripe { 0.8 } else { 0.2 };
                    [v, (y as f32 / size as f32), (i % 5) as f32 / 5.0]
                })
            })
            .collect()
    }

    fn config(batch: usize, epochs: usize) -> PretrainConfig {
        PretrainConfig {
            batch_size: batch,
            max_epochs: epochs,
            encoder: EncoderConfig {
                family: EncoderFamily::SmallResnet,
                stages: vec![StageConfig { blocks: 1, channels: 4 }, StageConfig { blocks: 1, channels: 8 }],
                embedding_dim: 16,
                input_size: 12,
                stem_stride: 1,
            },
            projection: ProjectionHeadConfig { hidden_dim: 16, output_dim: 8 },
            seed: 11,
            ..PretrainConfig::default()
        }
    }

    fn policy() -> AugmentationPolicy {
        AugmentationPolicy {
            output_size: 12,
            p_nst: 0.0,
            ..AugmentationPolicy::default()
        }
    }

    #[test]
    fn history_is_deterministic() {
        let imgs = images(24, 16);
        let a = pretrain(&imgs, &policy(), &StyleBank::default(), &IdentityCodec, &config(8, 3)).unwrap();
        let b = pretrain(&imgs, &policy(), &StyleBank::default(), &IdentityCodec, &config(8, 3)).unwrap();
        assert_eq!(a.history.len(), 3);
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert!(a.history.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let imgs = images(8, 12);
        let mut cfg = config(8, 4);
        cfg.learning_rate = 0.0;
        cfg.saturation_patience = 100;
        let out = pretrain(&imgs, &AugmentationPolicy::disabled(12), &StyleBank::default(), &IdentityCodec, &cfg).unwrap();
        assert_eq!(out.history.len(), 4);
        assert!(out.history.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-9));
    }

    #[test]
    fn saturation_stops_early() {
        let imgs = images(8, 12);
        let mut cfg = config(8, 50);
        cfg.learning_rate = 0.0;
        cfg.saturation_patience = 3;
        let out = pretrain(&imgs, &AugmentationPolicy::disabled(12), &StyleBank::default(), &IdentityCodec, &cfg).unwrap();
        assert_eq!(out.stop, StopReason::Saturated);
        assert_eq!(out.history.len(), 4);
    }

    #[test]
    fn rejects_small_datasets_and_bad_configs() {
        let imgs = images(5, 12);
        assert!(matches!(
            pretrain(&imgs, &policy(), &StyleBank::default(), &IdentityCodec, &config(8, 1)),
            Err(PretrainError::TooFewImages { .. })
        ));
        assert!(matches!(
            pretrain(&imgs, &policy(), &StyleBank::default(), &IdentityCodec, &config(1, 1)),
            Err(PretrainError::Config(_))
        ));
        let nst = AugmentationPolicy { p_nst: 0.5, ..policy() };
        assert!(matches!(
            pretrain(&images(8, 12), &nst, &StyleBank::default(), &IdentityCodec, &config(4, 1)),
            Err(PretrainError::Augment(AugmentError::EmptyStyleBank(_)))
        ));
    }
}
