use std::path::PathBuf;

use fundus_cl_core::augment::{AugmentError, AugmentationPolicy, IdentityCodec, StyleBank};
use fundus_cl_core::checkpoint::save_checkpoint;
use fundus_cl_core::config::RunConfig;
use fundus_cl_core::image::ImageTensor;
use fundus_cl_core::pretrain::{pretrain, PretrainError, PretrainOutcome};

use crate::run::{internal, num, pretrain_images, style_bank, usage, write_csv, CmdResult, Failure, OrFail, Run};

fn failure(e: PretrainError) -> Failure {
    match e {
        PretrainError::Config(_) | PretrainError::TooFewImages { .. } | PretrainError::Augment(AugmentError::EmptyStyleBank(_) | AugmentError::Policy(_)) => {
            usage(e)
        }
        other => internal(other),
    }
}

/// Pretrains with `policy` and writes `{prefix}checkpoint.bin` and
/// `{prefix}loss.csv` into the run directory.
pub fn pretrain_into(run: &mut Run, images: &[ImageTensor], policy: &AugmentationPolicy, bank: &StyleBank, prefix: &str) -> CmdResult<PretrainOutcome> {
    let outcome = pretrain(images, policy, bank, &IdentityCodec, &run.cfg.pretrain).map_err(failure)?;
    let ckpt = format!("{prefix}checkpoint.bin");
    save_checkpoint(&outcome.checkpoint, &run.artifact(&ckpt)).or_internal(&ckpt)?;
    let rows = outcome.history.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), num(*l)]);
    write_csv(&run.artifact(&format!("{prefix}loss.csv")), &["epoch", "loss"], rows)?;
    Ok(outcome)
}

pub fn run(cfg: RunConfig, out: PathBuf) -> CmdResult<()> {
    let mut run = Run::new(cfg, out, "pretrain")?;
    let images = pretrain_images(&run.cfg)?;
    let policy = run.cfg.augment;
    let bank = style_bank(&run.cfg, policy.p_nst)?;
    log::info!("pretraining on {} images with {} styles", images.len(), bank.len());
    let outcome = pretrain_into(&mut run, &images, &policy, &bank, "")?;
    let best = outcome.history[outcome.best_epoch - 1];
    run.metric("images", images.len());
    run.metric("epochs", outcome.history.len());
    run.metric("best_epoch", outcome.best_epoch);
    run.metric("best_loss", best);
    run.metric("stop", outcome.stop);
    println!(
        "pretrain: {} epochs on {} images, best loss {best:.5} at epoch {} ({:?})",
        outcome.history.len(),
        images.len(),
        outcome.best_epoch,
        outcome.stop
    );
    run.finish()
}
