//! Supervised fine-tuning of an encoder plus a two-way softmax head.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_regular, AugmentationPolicy};
use crate::checkpoint::{collect_tensors, Checkpoint, CheckpointError, CheckpointKind, CheckpointMeta};
use crate::data::{kfold_split, DataError, DatasetManifest, FundusRecord, LabelFraction};
use crate::image::{load_image, resize, ImageTensor};
use crate::nn::{Encoder, EncoderConfig, Linear, Matrix, NnError, Optimizer, OptimizerKind, ParamStore, Tensor};
use crate::rng::SeedTree;
use crate::stats::{auc, operating_point, ScoredSet};

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("contrastive initialisation needs a checkpoint")]
    MissingCheckpoint,
    #[error("random initialisation must not be given a checkpoint")]
    UnexpectedCheckpoint,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("malformed probability vector {0:?}")]
    Probabilities([f64; 2]),
    #[error("label {0} is not 0 or 1")]
    Label(u8),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("{0} split contains a single class")]
    SingleClass(&'static str),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid fine-tuning config: {0}")]
    Config(String),
    #[error("every grid point failed")]
    AllFailed,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InitKind {
    #[serde(rename = "cl", alias = "contrastive_checkpoint")]
    Contrastive,
    #[serde(rename = "random", alias = "random_baseline")]
    Random,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Contrastive => "cl",
            Self::Random => "random",
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cl" | "contrastive_checkpoint" => Ok(Self::Contrastive),
            "random" | "random_baseline" => Ok(Self::Random),
            other => Err(format!("unknown init {other:?} (expected cl or random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub init: InitKind,
    pub lr_grid: Vec<f64>,
    pub optimizer_grid: Vec<OptimizerKind>,
    pub batch_grid: Vec<usize>,
    pub epochs: usize,
    pub folds: usize,
    pub label_fraction: LabelFraction,
    pub freeze_encoder: bool,
    /// Set from the run's root seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            init: InitKind::Contrastive,
            lr_grid: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2],
            optimizer_grid: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
            batch_grid: vec![32, 64, 128, 256],
            epochs: 30,
            folds: 5,
            label_fraction: LabelFraction::new(1.0).expect("valid"),
            freeze_encoder: false,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        if self.lr_grid.is_empty() || self.optimizer_grid.is_empty() || self.batch_grid.is_empty() {
            return Err(FinetuneError::Config("grids must be non-empty".into()));
        }
        if self.lr_grid.iter().any(|lr| !(lr.is_finite() && *lr >= 0.0)) {
            return Err(FinetuneError::Config("learning rates must be finite and non-negative".into()));
        }
        if self.batch_grid.contains(&0) {
            return Err(FinetuneError::Config("batch sizes must be positive".into()));
        }
        if self.folds < 2 {
            return Err(FinetuneError::Config(format!("folds = {} (need at least 2)", self.folds)));
        }
        if self.epochs == 0 {
            return Err(FinetuneError::Config("epochs must be positive".into()));
        }
        Ok(())
    }

    /// Grid points in lr-major order.
    pub fn grid(&self) -> Vec<Hyperparams> {
        let mut out = Vec::new();
        for &lr in &self.lr_grid {
            for &optimizer in &self.optimizer_grid {
                for &batch in &self.batch_grid {
                    out.push(Hyperparams { lr, optimizer, batch });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch: usize,
}

impl Hyperparams {
    fn key(&self) -> String {
        format!("{:e}/{}/{}", self.lr, self.optimizer, self.batch)
    }
}

/// Images held in memory with their records.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub records: Vec<FundusRecord>,
    pub images: Vec<ImageTensor>,
}

impl LabeledSet {
    /// Loads every record; failures are returned as `(image_id, message)`.
    pub fn load(manifest: &DatasetManifest) -> (Self, Vec<(String, String)>) {
        let loaded: Vec<_> = manifest.records.par_iter().map(|r| load_image(&manifest.resolve(r))).collect();
        let mut set = LabeledSet::default();
        let mut failures = Vec::new();
        for (r, img) in manifest.records.iter().zip(loaded) {
            match img {
                Ok(img) => {
                    set.records.push(r.clone());
                    set.images.push(img);
                }
                Err(e) => failures.push((r.image_id.clone(), e.to_string())),
            }
        }
        (set, failures)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(FundusRecord::label).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
        }
    }

    /// Records whose ids appear in `manifest`, in manifest order.
    pub fn restrict(&self, manifest: &DatasetManifest) -> Self {
        let pos: HashMap<&str, usize> = self.records.iter().enumerate().map(|(i, r)| (r.image_id.as_str(), i)).collect();
        let idx: Vec<usize> = manifest.records.iter().filter_map(|r| pos.get(r.image_id.as_str()).copied()).collect();
        self.subset(&idx)
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest::new(self.records.clone()).expect("ids are unique")
    }

    fn has_both_classes(&self) -> bool {
        let pos = self.records.iter().filter(|r| r.referable()).count();
        pos > 0 && pos < self.len()
    }
}

/// Encoder plus an affine `embedding_dim -> 2` head with softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub encoder: Encoder,
    pub head_params: ParamStore,
    head: Linear,
    /// Decision threshold on the referable probability, if chosen.
    pub threshold: Option<f64>,
}

impl ClassifierModel {
    fn with_head(encoder: Encoder, tree: &SeedTree) -> Self {
        let mut head_params = ParamStore::default();
        let e = encoder.embedding_dim();
        let head = Linear::register(&mut head_params, "head", e, 2, (1.0 / e as f32).sqrt(), &mut tree.rng("init/head"));
        Self {
            encoder,
            head_params,
            head,
            threshold: None,
        }
    }

    pub fn input_size(&self) -> usize {
        self.encoder.config.input_size
    }

    /// Class probabilities `[p(non-referable), p(referable)]` per image.
    pub fn probabilities(&self, images: &[&ImageTensor]) -> Result<Vec<[f64; 2]>, NnError> {
        let h = self.encoder.forward(images)?;
        let logits = self.head.forward(&self.head_params, &h);
        Ok(logits.data.chunks_exact(2).map(softmax2).collect())
    }

    pub fn to_checkpoint(&self, config_digest: String, epoch: usize, seed: u64) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                kind: CheckpointKind::Classifier,
                encoder: self.encoder.config.clone(),
                projection: None,
                config_digest,
                epoch,
                final_loss: None,
                seed,
                threshold: self.threshold,
            },
            tensors: collect_tensors([&self.encoder.params, &self.head_params]),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, FinetuneError> {
        if ckpt.meta.kind != CheckpointKind::Classifier {
            return Err(CheckpointError::Malformed("expected a classifier checkpoint".into()).into());
        }
        let encoder = ckpt.encoder()?;
        let mut head_params = ParamStore::default();
        let weight = head_params.push("head.weight", ckpt.tensor("head.weight").expect("audited").clone());
        let bias = head_params.push("head.bias", ckpt.tensor("head.bias").expect("audited").clone());
        Ok(Self {
            head: Linear {
                weight,
                bias,
                inputs: encoder.embedding_dim(),
                outputs: 2,
            },
            encoder,
            head_params,
            threshold: ckpt.meta.threshold,
        })
    }

    /// Cross-entropy on `h` and its gradients: head grads and `dL/dh`.
    fn head_loss(&self, h: &Matrix, labels: &[u8], need_dh: bool) -> (f64, Vec<Tensor>, Option<Matrix>) {
        let logits = self.head.forward(&self.head_params, h);
        let b = labels.len();
        let mut dlogits = Matrix::zeros(b, 2);
        let mut loss = 0.0;
        for (i, (row, &y)) in logits.data.chunks_exact(2).zip(labels).enumerate() {
            let p = softmax2(row);
            // Non-finite logits surface as a NaN loss, reported as divergence.
            loss += cross_entropy(p, y).unwrap_or(f64::NAN);
            for c in 0..2 {
                let target = if usize::from(y) == c { 1.0 } else { 0.0 };
                dlogits.data[i * 2 + c] = ((p[c] - target) / b as f64) as f32;
            }
        }
        let mut grads = self.head_params.zeros_like();
        let dh = self.head.backward(&self.head_params, h, &dlogits, &mut grads, need_dh);
        (loss / b as f64, grads, dh)
    }
}

fn softmax2(logits: &[f32]) -> [f64; 2] {
    let (a, b) = (f64::from(logits[0]), f64::from(logits[1]));
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    [ea / (ea + eb), eb / (ea + eb)]
}

/// Builds a classifier. Contrastive init copies the checkpoint's encoder
/// tensors (the projection head is dropped); random init draws a seeded
/// He-style encoder. The head is always fresh.
pub fn build_classifier(init: InitKind, config: &EncoderConfig, checkpoint: Option<&Checkpoint>, seed: u64) -> Result<ClassifierModel, FinetuneError> {
    let tree = SeedTree::new(seed).child("finetune");
    let encoder = match (init, checkpoint) {
        (InitKind::Contrastive, Some(ck)) => ck.encoder_for(config)?,
        (InitKind::Contrastive, None) => return Err(FinetuneError::MissingCheckpoint),
        (InitKind::Random, None) => Encoder::new(config.clone(), &mut tree.rng("init/encoder"))?,
        (InitKind::Random, Some(_)) => return Err(FinetuneError::UnexpectedCheckpoint),
    };
    Ok(ClassifierModel::with_head(encoder, &tree))
}

/// `-ln p[label]` with `p` clamped below at 1e-12.
pub fn cross_entropy(p: [f64; 2], label: u8) -> Result<f64, FinetuneError> {
    if label > 1 {
        return Err(FinetuneError::Label(label));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (p[0] + p[1] - 1.0).abs() > 1e-6 {
        return Err(FinetuneError::Probabilities(p));
    }
    Ok(-p[usize::from(label)].max(1e-12).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl FinetuneHistory {
    pub fn best_val_auc(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_auc
    }
}

/// Options of a single fine-tuning run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub hyperparams: Hyperparams,
    pub epochs: usize,
    pub freeze_encoder: bool,
    pub seed: u64,
}

fn resized(set: &LabeledSet, size: usize) -> Vec<ImageTensor> {
    set.images.par_iter().map(|img| resize(img, size, size).expect("size is positive")).collect()
}

/// Referable probabilities for in-memory images, resized without augmentation.
pub fn predict_images(model: &ClassifierModel, images: &[ImageTensor]) -> Result<Vec<f64>, NnError> {
    let size = model.input_size();
    let prepared: Vec<ImageTensor> = images.par_iter().map(|img| resize(img, size, size).expect("size is positive")).collect();
    let refs: Vec<&ImageTensor> = prepared.iter().collect();
    Ok(model.probabilities(&refs)?.into_iter().map(|p| p[1]).collect())
}

/// Minimises mean cross-entropy on augmented training images (regular
/// transforms only) and keeps the epoch with the best validation AUC.
pub fn finetune(
    model: ClassifierModel,
    train: &LabeledSet,
    val: &LabeledSet,
    policy: &AugmentationPolicy,
    opts: &TrainOptions,
) -> Result<(ClassifierModel, FinetuneHistory), FinetuneError> {
    if train.is_empty() {
        return Err(FinetuneError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(FinetuneError::EmptySplit("validation"));
    }
    if !train.has_both_classes() {
        return Err(FinetuneError::SingleClass("training"));
    }
    if !val.has_both_classes() {
        return Err(FinetuneError::SingleClass("validation"));
    }
    let policy = AugmentationPolicy {
        output_size: model.input_size(),
        p_nst: 0.0,
        ..*policy
    };
    let tree = SeedTree::new(opts.seed).child("finetune");
    let hp = opts.hyperparams;
    let val_images = resized(val, model.input_size());
    let val_refs: Vec<&ImageTensor> = val_images.iter().collect();
    let val_labels = val.labels();
    let train_labels = train.labels();

    let mut model = model;
    let mut enc_opt = Optimizer::new(hp.optimizer, hp.lr, model.encoder.params.tensors());
    let mut head_opt = Optimizer::new(hp.optimizer, hp.lr, model.head_params.tensors());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(opts.epochs);
    let mut best: Option<(f64, usize, ClassifierModel)> = None;
    let batch = hp.batch.min(train.len());

    for epoch in 1..=opts.epochs {
        order.sort_unstable();
        order.shuffle(&mut tree.rng(&format!("epoch/{epoch}/shuffle")));
        let mut total = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(batch) {
            let views: Vec<ImageTensor> = chunk
                .par_iter()
                .map(|&i| apply_regular(&train.images[i], &policy, &mut tree.rng(&format!("epoch/{epoch}/img/{i}"))))
                .collect();
            let refs: Vec<&ImageTensor> = views.iter().collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| train_labels[i]).collect();
            let loss = if opts.freeze_encoder {
                let h = model.encoder.forward(&refs)?;
                let (loss, head_grads, _) = model.head_loss(&h, &labels, false);
                head_opt.step(model.head_params.tensors_mut(), &head_grads, None);
                loss
            } else {
                let (h, cache) = model.encoder.forward_train(&refs)?;
                let (loss, head_grads, dh) = model.head_loss(&h, &labels, true);
                let enc_grads = model.encoder.backward(&cache, &dh.expect("requested"));
                head_opt.step(model.head_params.tensors_mut(), &head_grads, None);
                enc_opt.step(model.encoder.params.tensors_mut(), &enc_grads, None);
                loss
            };
            if !loss.is_finite() || !model.head_params.is_finite() || !model.encoder.params.is_finite() {
                return Err(FinetuneError::Diverged { epoch });
            }
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let probs = model.probabilities(&val_refs)?;
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(FinetuneError::Diverged { epoch });
        }
        let val_auc = auc(&ScoredSet::new(scores, val_labels.clone()).expect("finite scores")).expect("both classes checked");
        let train_loss = total / seen as f64;
        log::debug!("finetune epoch {epoch}: loss {train_loss:.5}, val auc {val_auc:.4}");
        epochs.push(EpochRecord { epoch, train_loss, val_auc });
        if best.as_ref().is_none_or(|(b, _, _)| val_auc > *b) {
            best = Some((val_auc, epoch, model.clone()));
        }
    }
    let (_, best_epoch, best_model) = best.expect("epochs >= 1");
    Ok((best_model, FinetuneHistory { epochs, best_epoch }))
}

/// [`finetune`] followed by choosing the decision threshold with Youden's J
/// on the validation scores of the selected model.
pub fn finetune_with_threshold(
    model: ClassifierModel,
    train: &LabeledSet,
    val: &LabeledSet,
    policy: &AugmentationPolicy,
    opts: &TrainOptions,
) -> Result<(ClassifierModel, FinetuneHistory), FinetuneError> {
    let (mut model, history) = finetune(model, train, val, policy, opts)?;
    let scores = predict_images(&model, &val.images)?;
    let set = ScoredSet::new(scores, val.labels()).map_err(|_| FinetuneError::Diverged { epoch: history.best_epoch })?;
    model.threshold = Some(operating_point(&set).expect("both classes checked").threshold);
    Ok((model, history))
}

/// Trains only the head on fixed embeddings with full-batch steps; returns
/// the loss before each step.
pub fn train_head(model: &mut ClassifierModel, h: &Matrix, labels: &[u8], optimizer: OptimizerKind, lr: f64, steps: usize) -> Vec<f64> {
    let mut opt = Optimizer::new(optimizer, lr, model.head_params.tensors());
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (loss, grads, _) = model.head_loss(h, labels, false);
        losses.push(loss);
        opt.step(model.head_params.tensors_mut(), &grads, None);
    }
    losses
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch: usize,
    pub fold: usize,
    pub val_auc: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hyperparams: Hyperparams,
    /// Mean best validation AUC over folds; `None` when any fold failed.
    pub mean_val_auc: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Hyperparams,
    pub best_mean_auc: f64,
    /// One row per grid point and fold.
    pub table: Vec<CvRow>,
    /// One row per grid point.
    pub points: Vec<GridPoint>,
}

/// Strict preference used by the grid search: higher AUC, then lower lr,
/// then adam before sgd, then smaller batch.
fn better(a: (&Hyperparams, f64), b: (&Hyperparams, f64)) -> bool {
    let (ha, va) = a;
    let (hb, vb) = b;
    if va != vb {
        return va > vb;
    }
    (ha.lr, ha.optimizer, ha.batch) < (hb.lr, hb.optimizer, hb.batch)
}

/// Mean validation AUC of every grid point over patient-level folds.
/// Seeds depend on the grid point's values, so reordering the grid does
/// not change any result.
pub fn hyperparameter_search(
    base: &ClassifierModel,
    train: &LabeledSet,
    cfg: &FinetuneConfig,
    policy: &AugmentationPolicy,
) -> Result<SearchOutcome, FinetuneError> {
    cfg.validate()?;
    let folds = kfold_split(&train.manifest(), cfg.folds, SeedTree::new(cfg.seed).seed("search/folds"))?;
    let fold_sets: Vec<(LabeledSet, LabeledSet)> = folds.iter().map(|f| (train.restrict(&f.train), train.restrict(&f.val))).collect();
    let grid = cfg.grid();
    let tree = SeedTree::new(cfg.seed).child("search");
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|p| (0..fold_sets.len()).map(move |f| (p, f))).collect();
    let results: Vec<Result<f64, String>> = jobs
        .par_iter()
        .map(|&(p, f)| {
            let hp = grid[p];
            let opts = TrainOptions {
                hyperparams: hp,
                epochs: cfg.epochs,
                freeze_encoder: cfg.freeze_encoder,
                seed: tree.seed(&format!("{}/fold{f}", hp.key())),
            };
            let (tr, va) = &fold_sets[f];
            finetune(base.clone(), tr, va, policy, &opts).map(|(_, h)| h.best_val_auc()).map_err(|e| e.to_string())
        })
        .collect();

    let mut table = Vec::with_capacity(jobs.len());
    let mut points = Vec::with_capacity(grid.len());
    for (p, hp) in grid.iter().enumerate() {
        let mut sum = 0.0;
        let mut failure = None;
        for f in 0..fold_sets.len() {
            let r = &results[p * fold_sets.len() + f];
            let (val_auc, status) = match r {
                Ok(v) => {
                    sum += v;
                    (Some(*v), "ok".to_string())
                }
                Err(e) => {
                    failure.get_or_insert_with(|| e.clone());
                    (None, format!("failed: {e}"))
                }
            };
            table.push(CvRow {
                lr: hp.lr,
                optimizer: hp.optimizer,
                batch: hp.batch,
                fold: f,
                val_auc,
                status,
            });
        }
        points.push(match failure {
            None => GridPoint {
                hyperparams: *hp,
                mean_val_auc: Some(sum / fold_sets.len() as f64),
                status: "ok".into(),
            },
            Some(e) => GridPoint {
                hyperparams: *hp,
                mean_val_auc: None,
                status: format!("failed: {e}"),
            },
        });
    }
    let mut best: Option<(&Hyperparams, f64)> = None;
    for pt in &points {
        if let Some(v) = pt.mean_val_auc {
            if best.is_none_or(|b| better((&pt.hyperparams, v), b)) {
                best = Some((&pt.hyperparams, v));
            }
        }
    }
    let (best, best_mean_auc) = best.map(|(h, v)| (*h, v)).ok_or(FinetuneError::AllFailed)?;
    Ok(SearchOutcome {
        best,
        best_mean_auc,
        table,
        points,
    })
}

/// One referable probability per record, in manifest order. Records whose
/// image cannot be loaded yield an error message instead.
pub fn predict_proba(model: &ClassifierModel, manifest: &DatasetManifest) -> Vec<Result<f64, String>> {
    let size = model.input_size();
    let prepared: Vec<Result<ImageTensor, String>> = manifest
        .records
        .par_iter()
        .map(|r| {
            let img = load_image(&manifest.resolve(r)).map_err(|e| e.to_string())?;
            resize(&img, size, size).map_err(|e| e.to_string())
        })
        .collect();
    let ok: Vec<&ImageTensor> = prepared.iter().filter_map(|r| r.as_ref().ok()).collect();
    let probs = if ok.is_empty() {
        Ok(Vec::new())
    } else {
        model.probabilities(&ok).map(|p| p.into_iter().map(|p| p[1]).collect::<Vec<_>>())
    };
    let mut probs = match probs {
        Ok(p) => p.into_iter(),
        Err(e) => return prepared.iter().map(|_| Err(e.to_string())).collect(),
    };
    prepared
        .into_iter()
        .map(|r| r.map(|_| probs.next().expect("one probability per loaded image")))
        .collect()
}
