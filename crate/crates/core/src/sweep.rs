//! Label-efficiency, batch-size and NST ablation harnesses.
//!
//! Every cell is an independent job: subsample the labelled pool, build a
//! classifier, fine-tune, choose the threshold on validation data and score
//! the fixed test set. Cells run in parallel and are sorted afterwards, so
//! tables do not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentationPolicy, FeatureCodec, StyleBank};
use crate::checkpoint::Checkpoint;
use crate::data::{subsample_labeled, LabelFraction};
use crate::finetune::{
    build_classifier, finetune_with_threshold, hyperparameter_search, predict_images, FinetuneConfig, FinetuneError, Hyperparams, InitKind,
    LabeledSet, TrainOptions,
};
use crate::image::ImageTensor;
use crate::nn::EncoderConfig;
use crate::pretrain::{pretrain, PretrainConfig};
use crate::stats::{auc, delong_test, ScoredSet};

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid sweep config: {0}")]
    Config(String),
    #[error("contrastive init requested but no checkpoint was supplied")]
    MissingCheckpoint,
    #[error("test set: {0}")]
    TestSet(String),
    #[error("hyperparameter selection for {arm}: {source}")]
    Selection { arm: String, source: FinetuneError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub inits: Vec<InitKind>,
    /// Seed replicates per cell; replicate `i` uses seed `root + i`.
    pub replicates: usize,
    pub batch_sizes: Vec<usize>,
    /// Label fraction used by the batch-size sweep and the NST ablation.
    pub fraction: f64,
    pub nst_probability: f64,
    pub research_per_fraction: bool,
    /// Minimum share of successful cells for the sweep to count as a success.
    pub min_success: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fractions: LabelFraction::default_grid().into_iter().map(LabelFraction::value).collect(),
            inits: vec![InitKind::Contrastive, InitKind::Random],
            replicates: 5,
            batch_sizes: (5..=12).map(|k| 1usize << k).collect(),
            fraction: 1.0,
            nst_probability: 0.7,
            research_per_fraction: false,
            min_success: 0.8,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: String| Err(SweepError::Config(m));
        for &f in self.fractions.iter().chain([&self.fraction]) {
            if LabelFraction::new(f).is_err() {
                return bad(format!("label fraction {f} outside (0, 1]"));
            }
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.inits.is_empty() || self.fractions.is_empty() {
            return bad("fractions and inits must be non-empty".into());
        }
        if let Some(&b) = self.batch_sizes.iter().find(|&&b| b < 2) {
            return bad(format!("batch size {b} < 2"));
        }
        if !(0.0..=1.0).contains(&self.nst_probability) || !(0.0..=1.0).contains(&self.min_success) {
            return bad("nst_probability and min_success must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn seeds(&self, root: u64) -> Vec<u64> {
        (0..self.replicates as u64).map(|i| root.wrapping_add(i)).collect()
    }
}

/// Everything a fine-tuning cell needs besides its own settings.
#[derive(Clone, Copy)]
pub struct CellContext<'a> {
    /// Labelled training pool that fractions are drawn from.
    pub train: &'a LabeledSet,
    /// Validation data for epoch and threshold selection; the cell's own
    /// training subset when absent.
    pub val: Option<&'a LabeledSet>,
    pub test: &'a LabeledSet,
    pub encoder: &'a EncoderConfig,
    pub policy: &'a AugmentationPolicy,
    pub finetune: &'a FinetuneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub threshold: f64,
    /// Test-set referable probabilities in test order.
    pub scores: Vec<f64>,
}

/// One labelled cell: subsample, fine-tune with `hp`, score the test set.
pub fn run_cell(
    ctx: &CellContext,
    init: InitKind,
    checkpoint: Option<&Checkpoint>,
    fraction: f64,
    seed: u64,
    hp: Hyperparams,
) -> Result<CellOutcome, String> {
    let fraction = LabelFraction::new(fraction).map_err(|e| e.to_string())?;
    let sub = subsample_labeled(&ctx.train.manifest(), fraction, seed).map_err(|e| e.to_string())?;
    let train = ctx.train.restrict(&sub);
    let model = build_classifier(init, ctx.encoder, checkpoint, seed).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        hyperparams: hp,
        epochs: ctx.finetune.epochs,
        freeze_encoder: ctx.finetune.freeze_encoder,
        seed,
    };
    let (model, _) = finetune_with_threshold(model, &train, ctx.val.unwrap_or(&train), ctx.policy, &opts).map_err(|e| e.to_string())?;
    let scores = predict_images(&model, &ctx.test.images).map_err(|e| e.to_string())?;
    let set = ScoredSet::new(scores, ctx.test.labels()).map_err(|e| e.to_string())?;
    let threshold = model.threshold.expect("set by finetune_with_threshold");
    let (sensitivity, specificity) = set.rates_at(threshold);
    Ok(CellOutcome {
        auc: auc(&set).map_err(|e| e.to_string())?,
        sensitivity,
        specificity,
        threshold,
        scores: set.scores().to_vec(),
    })
}

/// The single grid point if there is one, otherwise the cross-validated best.
pub fn choose_hyperparams(
    ctx: &CellContext,
    init: InitKind,
    checkpoint: Option<&Checkpoint>,
    pool: &LabeledSet,
    seed: u64,
) -> Result<Hyperparams, FinetuneError> {
    let grid = ctx.finetune.grid();
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let base = build_classifier(init, ctx.encoder, checkpoint, seed)?;
    let cfg = FinetuneConfig { seed, ..ctx.finetune.clone() };
    Ok(hyperparameter_search(&base, pool, &cfg, ctx.policy)?.best)
}

fn check_test(test: &LabeledSet) -> Result<(), SweepError> {
    let pos = test.records.iter().filter(|r| r.referable()).count();
    if pos == 0 || pos == test.len() {
        return Err(SweepError::TestSet(format!("needs both classes, has {pos} referable of {}", test.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub sens: f64,
    pub spec: f64,
}

impl From<&CellOutcome> for Metrics {
    fn from(c: &CellOutcome) -> Self {
        Self {
            auc: c.auc,
            sens: c.sensitivity,
            spec: c.specificity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub fraction: f64,
    pub init: InitKind,
    pub seed: u64,
    pub result: Result<Metrics, String>,
}

/// Mean and sample standard deviation of the successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub key: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_auc: Option<f64>,
    pub sd_auc: Option<f64>,
}

pub fn summarize(key: String, aucs: &[Option<f64>]) -> Summary {
    let ok: Vec<f64> = aucs.iter().flatten().copied().collect();
    let n = ok.len();
    let mean = (n > 0).then(|| ok.iter().sum::<f64>() / n as f64);
    let sd = mean.filter(|_| n > 1).map(|m| (ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Summary {
        key,
        n_ok: n,
        n_failed: aucs.len() - n,
        mean_auc: mean,
        sd_auc: sd,
    }
}

fn success_rate<T, E>(results: impl Iterator<Item = Result<T, E>>) -> f64 {
    let (mut ok, mut total) = (0usize, 0usize);
    for r in results {
        total += 1;
        ok += usize::from(r.is_ok());
    }
    if total == 0 {
        0.0
    } else {
        ok as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSweep {
    /// Sorted by (fraction, init, seed).
    pub rows: Vec<LabelRow>,
    /// One entry per (fraction, init), keyed `"{fraction}/{init}"`.
    pub summary: Vec<Summary>,
    /// Hyperparameters used, keyed by init (and fraction when re-searched).
    pub hyperparams: Vec<(String, Hyperparams)>,
}

impl LabelSweep {
    pub fn success_rate(&self) -> f64 {
        success_rate(self.rows.iter().map(|r| r.result.as_ref()))
    }

    pub fn summary_for(&self, fraction: f64, init: InitKind) -> Option<&Summary> {
        let key = format!("{fraction}/{init}");
        self.summary.iter().find(|s| s.key == key)
    }
}

/// Fine-tunes every fraction x init x seed cell and scores the fixed test set.
pub fn label_efficiency_sweep(ctx: &CellContext, checkpoint: Option<&Checkpoint>, cfg: &SweepConfig, root_seed: u64) -> Result<LabelSweep, SweepError> {
    cfg.validate()?;
    check_test(ctx.test)?;
    if cfg.inits.contains(&InitKind::Contrastive) && checkpoint.is_none() {
        return Err(SweepError::MissingCheckpoint);
    }
    let ckpt_for = |init| (init == InitKind::Contrastive).then_some(checkpoint).flatten();
    let seeds = cfg.seeds(root_seed);

    let mut chosen: Vec<((f64, InitKind), Hyperparams)> = Vec::new();
    let mut hyperparams = Vec::new();
    for &init in &cfg.inits {
        if cfg.research_per_fraction {
            for &f in &cfg.fractions {
                let sub = subsample_labeled(&ctx.train.manifest(), LabelFraction::new(f).expect("validated"), root_seed)
                    .map_err(|e| SweepError::Config(e.to_string()))?;
                let pool = ctx.train.restrict(&sub);
                let arm = format!("{f}/{init}");
                let hp = choose_hyperparams(ctx, init, ckpt_for(init), &pool, root_seed).map_err(|source| SweepError::Selection { arm: arm.clone(), source })?;
                chosen.push(((f, init), hp));
                hyperparams.push((arm, hp));
            }
        } else {
            let hp = choose_hyperparams(ctx, init, ckpt_for(init), ctx.train, root_seed).map_err(|source| SweepError::Selection {
                arm: init.to_string(),
                source,
            })?;
            chosen.extend(cfg.fractions.iter().map(|&f| ((f, init), hp)));
            hyperparams.push((init.to_string(), hp));
        }
    }

    let jobs: Vec<(f64, InitKind, u64, Hyperparams)> = chosen
        .iter()
        .flat_map(|&((f, init), hp)| seeds.iter().map(move |&s| (f, init, s, hp)))
        .collect();
    let mut rows: Vec<LabelRow> = jobs
        .par_iter()
        .map(|&(fraction, init, seed, hp)| {
            let result = run_cell(ctx, init, ckpt_for(init), fraction, seed, hp).map(|c| Metrics::from(&c));
            if let Err(e) = &result {
                log::warn!("label sweep cell {fraction}/{init}/{seed} failed: {e}");
            }
            LabelRow { fraction, init, seed, result }
        })
        .collect();
    rows.sort_by(|a, b| a.fraction.total_cmp(&b.fraction).then(a.init.cmp(&b.init)).then(a.seed.cmp(&b.seed)));

    let mut summary = Vec::new();
    for chunk in rows.chunk_by(|a, b| a.fraction == b.fraction && a.init == b.init) {
        let aucs: Vec<Option<f64>> = chunk.iter().map(|r| r.result.as_ref().ok().map(|m| m.auc)).collect();
        summary.push(summarize(format!("{}/{}", chunk[0].fraction, chunk[0].init), &aucs));
    }
    Ok(LabelSweep { rows, summary, hyperparams })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub batch_size: usize,
    pub seed: u64,
    pub result: Result<Metrics, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    Constant,
    NonMonotonic,
    /// Fewer than two sizes with a successful replicate.
    Undetermined,
}

impl Monotonicity {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Increasing => "increasing",
            Self::Decreasing => "decreasing",
            Self::Constant => "constant",
            Self::NonMonotonic => "non_monotonic",
            Self::Undetermined => "undetermined",
        }
    }

    /// Direction of a sequence (non-strict), in the given order.
    pub fn of(values: &[f64]) -> Self {
        if values.len() < 2 {
            return Self::Undetermined;
        }
        let up = values.windows(2).all(|w| w[1] >= w[0]);
        let down = values.windows(2).all(|w| w[1] <= w[0]);
        match (up, down) {
            (true, true) => Self::Constant,
            (true, false) => Self::Increasing,
            (false, true) => Self::Decreasing,
            (false, false) => Self::NonMonotonic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSweep {
    /// Sorted by (batch_size, seed).
    pub rows: Vec<BatchRow>,
    pub summary: Vec<Summary>,
    /// Direction of mean AUC over increasing batch size.
    pub monotonicity: Monotonicity,
}

impl BatchSweep {
    pub fn success_rate(&self) -> f64 {
        success_rate(self.rows.iter().map(|r| r.result.as_ref()))
    }
}

/// Pretraining inputs shared by the batch-size sweep.
#[derive(Clone, Copy)]
pub struct PretrainInputs<'a> {
    pub images: &'a [ImageTensor],
    pub policy: &'a AugmentationPolicy,
    pub bank: &'a StyleBank,
    pub codec: &'a dyn FeatureCodec,
    pub config: &'a PretrainConfig,
}

/// Pretrains once per (batch size, seed), then fine-tunes identically at
/// `cfg.fraction` from the contrastive checkpoint.
pub fn batch_size_sweep(ctx: &CellContext, pre: &PretrainInputs, cfg: &SweepConfig, root_seed: u64) -> Result<BatchSweep, SweepError> {
    cfg.validate()?;
    check_test(ctx.test)?;
    if cfg.batch_sizes.is_empty() {
        return Err(SweepError::Config("batch_sizes must be non-empty".into()));
    }
    let mut sizes = cfg.batch_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let jobs: Vec<(usize, u64)> = sizes.iter().flat_map(|&b| cfg.seeds(root_seed).into_iter().map(move |s| (b, s))).collect();
    let mut rows: Vec<BatchRow> = jobs
        .par_iter()
        .map(|&(batch_size, seed)| {
            let result = (|| {
                if batch_size > pre.images.len() {
                    return Err(format!("batch size {batch_size} exceeds the {} unlabeled images", pre.images.len()));
                }
                let pcfg = PretrainConfig {
                    batch_size,
                    seed,
                    ..pre.config.clone()
                };
                let out = pretrain(pre.images, pre.policy, pre.bank, pre.codec, &pcfg).map_err(|e| e.to_string())?;
                let hp = choose_hyperparams(ctx, InitKind::Contrastive, Some(&out.checkpoint), ctx.train, seed).map_err(|e| e.to_string())?;
                run_cell(ctx, InitKind::Contrastive, Some(&out.checkpoint), cfg.fraction, seed, hp).map(|c| Metrics::from(&c))
            })();
            if let Err(e) = &result {
                log::warn!("batch sweep cell {batch_size}/{seed} failed: {e}");
            }
            BatchRow { batch_size, seed, result }
        })
        .collect();
    rows.sort_by_key(|r| (r.batch_size, r.seed));
    let mut summary = Vec::new();
    for chunk in rows.chunk_by(|a, b| a.batch_size == b.batch_size) {
        let aucs: Vec<Option<f64>> = chunk.iter().map(|r| r.result.as_ref().ok().map(|m| m.auc)).collect();
        summary.push(summarize(chunk[0].batch_size.to_string(), &aucs));
    }
    let means: Vec<f64> = summary.iter().filter_map(|s| s.mean_auc).collect();
    Ok(BatchSweep {
        rows,
        monotonicity: Monotonicity::of(&means),
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NstRow {
    pub p_nst: f64,
    pub seed: u64,
    pub result: Result<Metrics, String>,
}

/// Paired DeLong comparison of the two arms for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NstComparison {
    pub seed: u64,
    pub auc_nst: f64,
    pub auc_no_nst: f64,
    pub z: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NstAblation {
    pub p_nst: f64,
    /// Sorted by (p_nst descending, seed).
    pub rows: Vec<NstRow>,
    pub comparisons: Vec<NstComparison>,
    pub mean_nst: Option<f64>,
    pub mean_no_nst: Option<f64>,
}

impl NstAblation {
    pub fn success_rate(&self) -> f64 {
        success_rate(self.rows.iter().map(|r| r.result.as_ref()))
    }
}

/// Fine-tunes from the two checkpoints (pretrained with and without NST)
/// with identical seeds and compares test AUCs per seed with DeLong's test.
pub fn nst_ablation(
    ctx: &CellContext,
    with_nst: &Checkpoint,
    without_nst: &Checkpoint,
    p_nst: f64,
    cfg: &SweepConfig,
    root_seed: u64,
) -> Result<NstAblation, SweepError> {
    cfg.validate()?;
    check_test(ctx.test)?;
    let arms = [(p_nst, with_nst), (0.0, without_nst)];
    let mut hps = Vec::new();
    for (p, ckpt) in arms {
        let hp = choose_hyperparams(ctx, InitKind::Contrastive, Some(ckpt), ctx.train, root_seed).map_err(|source| SweepError::Selection {
            arm: format!("p_nst={p}"),
            source,
        })?;
        hps.push(hp);
    }
    let seeds = cfg.seeds(root_seed);
    let jobs: Vec<(usize, u64)> = (0..2).flat_map(|a| seeds.iter().map(move |&s| (a, s))).collect();
    let cells: Vec<Result<CellOutcome, String>> = jobs
        .par_iter()
        .map(|&(a, seed)| run_cell(ctx, InitKind::Contrastive, Some(arms[a].1), cfg.fraction, seed, hps[a]))
        .collect();
    let n = seeds.len();
    let mut rows = Vec::with_capacity(2 * n);
    let mut comparisons = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        for a in 0..2 {
            if let Err(e) = &cells[a * n + i] {
                log::warn!("nst ablation cell p_nst={}/{seed} failed: {e}", arms[a].0);
            }
        }
        if let (Ok(x), Ok(y)) = (&cells[i], &cells[n + i]) {
            let labels = ctx.test.labels();
            let a = ScoredSet::new(x.scores.clone(), labels.clone()).expect("validated scores");
            let b = ScoredSet::new(y.scores.clone(), labels).expect("validated scores");
            let d = delong_test(&a, &b).expect("same labels, both classes");
            comparisons.push(NstComparison {
                seed,
                auc_nst: d.auc_a,
                auc_no_nst: d.auc_b,
                z: d.z,
                p: d.p,
            });
        }
    }
    for (a, (p, _)) in arms.iter().enumerate() {
        for (i, &seed) in seeds.iter().enumerate() {
            rows.push(NstRow {
                p_nst: *p,
                seed,
                result: cells[a * n + i].as_ref().map(Metrics::from).map_err(Clone::clone),
            });
        }
    }
    let mean = |a: usize| summarize(String::new(), &cells[a * n..(a + 1) * n].iter().map(|c| c.as_ref().ok().map(|c| c.auc)).collect::<Vec<_>>()).mean_auc;
    Ok(NstAblation {
        p_nst,
        rows,
        comparisons,
        mean_nst: mean(0),
        mean_no_nst: mean(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DrGrade, Eye, FundusRecord};
    use crate::nn::{EncoderFamily, OptimizerKind, StageConfig};
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            family: EncoderFamily::SmallResnet,
            stages: vec![StageConfig { blocks: 1, channels: 4 }],
            embedding_dim: 8,
            input_size: 12,
            stem_stride: 1,
        }
    }

    /// Bright images are referable.
    fn set(prefix: &str, n: usize, seed: u64) -> LabeledSet {
        let mut rng = rng_from_seed(seed);
        let mut out = LabeledSet::default();
        for i in 0..n {
            let referable = i % 2 == 0;
            let base = if referable { 0.7 } else { 0.3 };
            let img = ImageTensor::from_fn(12, 12, |_, _| [base + rng.random_range(-0.2..0.2f32); 3]);
            out.records.push(FundusRecord {
                image_id: format!("{prefix}{i}"),
                image_uri: String::new(),
                grade: DrGrade::new(if referable { 3 } else { 0 }).unwrap(),
                patient_id: format!("{prefix}p{}", i / 2 * 2 + usize::from(referable)),
                eye: Eye::Unknown,
            });
            out.images.push(img);
        }
        out
    }

    fn finetune_cfg() -> FinetuneConfig {
        FinetuneConfig {
            lr_grid: vec![1e-2],
            optimizer_grid: vec![OptimizerKind::Adam],
            batch_grid: vec![8],
            epochs: 3,
            ..FinetuneConfig::default()
        }
    }

    struct Fixture {
        train: LabeledSet,
        test: LabeledSet,
        encoder: EncoderConfig,
        policy: AugmentationPolicy,
        finetune: FinetuneConfig,
    }

    impl Fixture {
        fn new() -> Self {
            Self {
                train: set("tr", 24, 1),
                test: set("te", 16, 2),
                encoder: tiny_encoder(),
                policy: AugmentationPolicy::disabled(12),
                finetune: finetune_cfg(),
            }
        }

        fn ctx(&self) -> CellContext<'_> {
            CellContext {
                train: &self.train,
                val: None,
                test: &self.test,
                encoder: &self.encoder,
                policy: &self.policy,
                finetune: &self.finetune,
            }
        }
    }

    fn random_only(fractions: Vec<f64>, replicates: usize) -> SweepConfig {
        SweepConfig {
            fractions,
            inits: vec![InitKind::Random],
            replicates,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn table_shape_and_order() {
        let fx = Fixture::new();
        let ckpt = checkpoint(&fx);
        let cfg = SweepConfig {
            fractions: vec![1.0, 0.5],
            inits: vec![InitKind::Random, InitKind::Contrastive],
            replicates: 2,
            ..SweepConfig::default()
        };
        let out = label_efficiency_sweep(&fx.ctx(), Some(&ckpt), &cfg, 10).unwrap();
        assert_eq!(out.rows.len(), 8);
        let keys: Vec<(f64, InitKind, u64)> = out.rows.iter().map(|r| (r.fraction, r.init, r.seed)).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        assert_eq!(keys, sorted);
        assert_eq!(keys[0], (0.5, InitKind::Contrastive, 10));
        assert_eq!(out.summary.len(), 4);
        assert_eq!(out.success_rate(), 1.0);
    }

    #[test]
    fn full_fraction_row_matches_direct_run() {
        let fx = Fixture::new();
        let ctx = fx.ctx();
        let out = label_efficiency_sweep(&ctx, None, &random_only(vec![1.0], 2), 3).unwrap();
        let hp = fx.finetune.grid()[0];
        for row in &out.rows {
            let direct = run_cell(&ctx, InitKind::Random, None, 1.0, row.seed, hp).unwrap();
            assert_eq!(row.result.as_ref().unwrap(), &Metrics::from(&direct));
        }
    }

    #[test]
    fn contrastive_without_checkpoint_is_rejected() {
        let fx = Fixture::new();
        let cfg = SweepConfig { fractions: vec![1.0], ..SweepConfig::default() };
        assert!(matches!(label_efficiency_sweep(&fx.ctx(), None, &cfg, 0), Err(SweepError::MissingCheckpoint)));
    }

    #[test]
    fn failing_cells_are_flagged_not_fatal() {
        let mut fx = Fixture::new();
        fx.finetune.lr_grid = vec![1e30];
        let out = label_efficiency_sweep(&fx.ctx(), None, &random_only(vec![1.0], 2), 0).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert!(out.rows.iter().all(|r| r.result.is_err()));
        assert_eq!(out.success_rate(), 0.0);
        assert_eq!(out.summary[0].n_failed, 2);
        assert_eq!(out.summary[0].mean_auc, None);
    }

    #[test]
    fn summary_statistics() {
        let s = summarize("k".into(), &[Some(0.6), None, Some(0.8), Some(0.7)]);
        assert_eq!((s.n_ok, s.n_failed), (3, 1));
        assert!((s.mean_auc.unwrap() - 0.7).abs() < 1e-12);
        assert!((s.sd_auc.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(summarize("k".into(), &[Some(0.5)]).sd_auc, None);
    }

    #[test]
    fn monotonicity_flags() {
        assert_eq!(Monotonicity::of(&[0.5, 0.6, 0.6]), Monotonicity::Increasing);
        assert_eq!(Monotonicity::of(&[0.7, 0.6]), Monotonicity::Decreasing);
        assert_eq!(Monotonicity::of(&[0.7, 0.7]), Monotonicity::Constant);
        assert_eq!(Monotonicity::of(&[0.5, 0.7, 0.6]), Monotonicity::NonMonotonic);
        assert_eq!(Monotonicity::of(&[0.5]), Monotonicity::Undetermined);
    }

    fn pretrain_fixture(fx: &Fixture) -> (Vec<ImageTensor>, PretrainConfig) {
        let images: Vec<ImageTensor> = fx.train.images.iter().chain(&fx.test.images).cloned().collect();
        let cfg = PretrainConfig {
            batch_size: 8,
            max_epochs: 1,
            encoder: fx.encoder.clone(),
            projection: crate::nn::ProjectionHeadConfig { hidden_dim: 8, output_dim: 4 },
            ..PretrainConfig::default()
        };
        (images, cfg)
    }

    fn checkpoint(fx: &Fixture) -> Checkpoint {
        let (images, cfg) = pretrain_fixture(fx);
        pretrain(&images, &fx.policy, &StyleBank::default(), &crate::augment::IdentityCodec, &cfg).unwrap().checkpoint
    }

    #[test]
    fn batch_sweep_single_size_and_oversized() {
        let fx = Fixture::new();
        let (images, pcfg) = pretrain_fixture(&fx);
        let pre = PretrainInputs {
            images: &images,
            policy: &fx.policy,
            bank: &StyleBank::default(),
            codec: &crate::augment::IdentityCodec,
            config: &pcfg,
        };
        let cfg = SweepConfig {
            batch_sizes: vec![8],
            replicates: 1,
            ..SweepConfig::default()
        };
        let a = batch_size_sweep(&fx.ctx(), &pre, &cfg, 4).unwrap();
        assert_eq!(a.rows.len(), 1);
        assert_eq!(a.monotonicity, Monotonicity::Undetermined);
        let b = batch_size_sweep(&fx.ctx(), &pre, &cfg, 4).unwrap();
        assert_eq!(a, b);
        let big = SweepConfig { batch_sizes: vec![8, 1000], ..cfg };
        let c = batch_size_sweep(&fx.ctx(), &pre, &big, 4).unwrap();
        assert!(c.rows[1].result.as_ref().unwrap_err().contains("exceeds"));
        assert_eq!(c.success_rate(), 0.5);
    }

    #[test]
    fn nst_ablation_identical_checkpoints_give_unit_p() {
        let fx = Fixture::new();
        let ckpt = checkpoint(&fx);
        let cfg = SweepConfig { replicates: 2, fraction: 1.0, ..SweepConfig::default() };
        let out = nst_ablation(&fx.ctx(), &ckpt, &ckpt, 0.7, &cfg, 1).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert_eq!(out.comparisons.len(), 2);
        for c in &out.comparisons {
            assert_eq!((c.z, c.p), (0.0, 1.0));
            assert_eq!(c.auc_nst, c.auc_no_nst);
        }
        assert_eq!(out.mean_nst, out.mean_no_nst);
    }
}
