use std::path::{Path, PathBuf};

use fundus_cl_core::checkpoint::{load_checkpoint, Checkpoint};
use fundus_cl_core::config::RunConfig;
use fundus_cl_core::data::{subsample_labeled, LabelFraction, Split};
use fundus_cl_core::finetune::{
    build_classifier, finetune_with_threshold, hyperparameter_search, FinetuneConfig, FinetuneError, Hyperparams, InitKind, TrainOptions,
};
use serde::Serialize;

use crate::run::{internal, labeled_manifest, load_set, num, training_manifest, usage, write_csv, write_json, CmdResult, Failure, OrFail, Run};

pub fn failure(e: FinetuneError) -> Failure {
    match e {
        FinetuneError::Diverged { .. } | FinetuneError::Network(_) | FinetuneError::AllFailed | FinetuneError::Probabilities(_) => internal(e),
        other => usage(other),
    }
}

/// Loads `--checkpoint` and checks it against `--init`.
pub fn checkpoint_for(init: InitKind, path: Option<&Path>) -> CmdResult<Option<Checkpoint>> {
    match (init, path) {
        (InitKind::Contrastive, None) => Err(usage("--init cl needs --checkpoint")),
        (InitKind::Random, Some(_)) => Err(usage("--init random takes no --checkpoint")),
        (InitKind::Random, None) => Ok(None),
        (InitKind::Contrastive, Some(p)) => load_checkpoint(p).map(Some).or_usage(&format!("checkpoint {}", p.display())),
    }
}

#[derive(Serialize)]
struct Chosen {
    lr: f64,
    optimizer: String,
    batch: usize,
    /// `grid_search` or `single_point`.
    source: &'static str,
    mean_val_auc: Option<f64>,
}

pub fn run(
    mut cfg: RunConfig,
    out: PathBuf,
    init: Option<InitKind>,
    fraction: Option<f64>,
    checkpoint: Option<PathBuf>,
    freeze_encoder: bool,
) -> CmdResult<()> {
    if let Some(init) = init {
        cfg.finetune.init = init;
    }
    if let Some(f) = fraction {
        cfg.finetune.label_fraction = LabelFraction::new(f).or_usage("--fraction")?;
    }
    cfg.finetune.freeze_encoder |= freeze_encoder;
    let mut run = Run::new(cfg, out, "finetune")?;
    let ft: FinetuneConfig = run.cfg.finetune.clone();
    run.argument("checkpoint", checkpoint.as_ref().map(|p| p.display().to_string()));
    let ckpt = checkpoint_for(ft.init, checkpoint.as_deref())?;

    let manifest = labeled_manifest(&run.cfg)?;
    let train_all = training_manifest(&manifest);
    let sub = subsample_labeled(&train_all, ft.label_fraction, run.seeds().seed("finetune/subsample")).or_usage("training split")?;
    let train = load_set(&sub, "training images");
    let val_manifest = manifest.with_split(Split::Val);
    let val = (!val_manifest.is_empty()).then(|| load_set(&val_manifest, "validation images"));
    let policy = run.cfg.augment;
    let encoder = run.cfg.pretrain.encoder.clone();
    let base = build_classifier(ft.init, &encoder, ckpt.as_ref(), ft.seed).map_err(failure)?;

    let grid = ft.grid();
    let cv_header = ["lr", "optimizer", "batch", "fold", "val_auc", "status"];
    let summary_header = ["lr", "optimizer", "batch", "mean_val_auc", "status"];
    let chosen = if grid.len() == 1 {
        write_csv(&run.artifact("cv_table.csv"), &cv_header, Vec::new())?;
        let hp = grid[0];
        write_csv(
            &run.artifact("cv_summary.csv"),
            &summary_header,
            [vec![num(hp.lr), hp.optimizer.to_string(), hp.batch.to_string(), String::new(), "single grid point".into()]],
        )?;
        (hp, "single_point", None)
    } else {
        let search = hyperparameter_search(&base, &train, &ft, &policy).map_err(failure)?;
        let rows = search.table.iter().map(|r| {
            vec![num(r.lr), r.optimizer.to_string(), r.batch.to_string(), r.fold.to_string(), num(r.val_auc), r.status.clone()]
        });
        write_csv(&run.artifact("cv_table.csv"), &cv_header, rows)?;
        let points = search.points.iter().map(|p| {
            let h = p.hyperparams;
            vec![num(h.lr), h.optimizer.to_string(), h.batch.to_string(), num(p.mean_val_auc), p.status.clone()]
        });
        write_csv(&run.artifact("cv_summary.csv"), &summary_header, points)?;
        (search.best, "grid_search", Some(search.best_mean_auc))
    };
    let (hp, source, mean_val_auc): (Hyperparams, _, _) = chosen;
    write_json(
        &run.artifact("hparams.json"),
        &Chosen {
            lr: hp.lr,
            optimizer: hp.optimizer.to_string(),
            batch: hp.batch,
            source,
            mean_val_auc,
        },
    )?;

    let opts = TrainOptions {
        hyperparams: hp,
        epochs: ft.epochs,
        freeze_encoder: ft.freeze_encoder,
        seed: ft.seed,
    };
    if val.is_none() {
        log::info!("no validation split; selecting epoch and threshold on the training subset");
    }
    let (model, history) = finetune_with_threshold(base, &train, val.as_ref().unwrap_or(&train), &policy, &opts).map_err(failure)?;
    let rows = history.epochs.iter().map(|e| vec![e.epoch.to_string(), num(e.train_loss), num(e.val_auc)]);
    write_csv(&run.artifact("history.csv"), &["epoch", "train_loss", "val_auc"], rows)?;
    let ckpt_out = model.to_checkpoint(run.run_id.clone(), history.best_epoch, ft.seed);
    fundus_cl_core::checkpoint::save_checkpoint(&ckpt_out, &run.artifact("model.bin")).or_internal("model.bin")?;

    let threshold = model.threshold.expect("set with the model");
    run.metric("init", ft.init);
    run.metric("train_images", train.len());
    run.metric("best_epoch", history.best_epoch);
    run.metric("best_val_auc", history.best_val_auc());
    run.metric("threshold", threshold);
    run.metric("validation", if val.is_some() { "val_split" } else { "training_subset" });
    println!(
        "finetune: init {}, {} training images, lr {} {} batch {}, best val AUC {:.4} at epoch {}, threshold {threshold:.4}",
        ft.init,
        train.len(),
        hp.lr,
        hp.optimizer,
        hp.batch,
        history.best_val_auc(),
        history.best_epoch
    );
    run.finish()
}
