//! Contrastive pretraining toolkit for binary fundus-image classifiers:
//! manifests and splits, quality filtering, augmentation with AdaIN style
//! transfer, a small CPU network stack with NT-Xent pretraining, fine-tuning,
//! and ROC statistics with sweep harnesses.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod finetune;
pub mod image;
pub mod nn;
pub mod pretrain;
pub mod quality;
pub mod rng;
pub mod stats;
pub mod svg;
pub mod sweep;
pub mod synth;
