use std::path::PathBuf;

use fundus_cl_core::augment::IdentityCodec;
use fundus_cl_core::checkpoint::{load_checkpoint, Checkpoint};
use fundus_cl_core::config::RunConfig;
use fundus_cl_core::data::Split;
use fundus_cl_core::finetune::{InitKind, LabeledSet};
use fundus_cl_core::sweep::{batch_size_sweep, label_efficiency_sweep, nst_ablation, CellContext, Metrics, PretrainInputs, Summary, SweepError};
use fundus_cl_core::svg::{line_plot_svg, Series};

use super::pretrain::pretrain_into;
use crate::run::{
    internal, labeled_manifest, load_set, num, pretrain_images, style_bank, test_manifest, training_manifest, usage, write_csv, write_text, CmdResult, Failure,
    OrFail, Run,
};
use crate::SweepKind;

fn failure(e: SweepError) -> Failure {
    match e {
        SweepError::Selection { .. } => internal(e),
        other => usage(other),
    }
}

fn metric_cells(r: &Result<Metrics, String>) -> [String; 3] {
    match r {
        Ok(m) => [num(m.auc), num(m.sens), num(m.spec)],
        Err(_) => Default::default(),
    }
}

fn summary_cells(s: &Summary) -> [String; 4] {
    [s.n_ok.to_string(), s.n_failed.to_string(), num(s.mean_auc), num(s.sd_auc)]
}

const SUMMARY_TAIL: [&str; 4] = ["n_ok", "n_failed", "mean_auc", "sd_auc"];

fn load_ckpt(path: &std::path::Path) -> CmdResult<Checkpoint> {
    load_checkpoint(path).or_usage(&format!("checkpoint {}", path.display()))
}

/// Existing checkpoint, or a fresh pretraining run at the given NST probability.
fn checkpoint_or_pretrain(run: &mut Run, path: Option<PathBuf>, p_nst: f64, prefix: &str) -> CmdResult<Checkpoint> {
    if let Some(p) = path {
        return load_ckpt(&p);
    }
    let images = pretrain_images(&run.cfg)?;
    let policy = fundus_cl_core::augment::AugmentationPolicy { p_nst, ..run.cfg.augment };
    let bank = style_bank(&run.cfg, p_nst)?;
    log::info!("sweep: pretraining {prefix}checkpoint.bin (p_nst {p_nst}) on {} images", images.len());
    let out = pretrain_into(run, &images, &policy, &bank, prefix)?;
    run.metric(&format!("{prefix}pretrain_epochs"), out.history.len());
    Ok(out.checkpoint)
}

struct Sets {
    train: LabeledSet,
    val: Option<LabeledSet>,
    test: LabeledSet,
}

fn load_sets(cfg: &RunConfig) -> CmdResult<Sets> {
    let manifest = labeled_manifest(cfg)?;
    let val = manifest.with_split(Split::Val);
    Ok(Sets {
        train: load_set(&training_manifest(&manifest), "training images"),
        val: (!val.is_empty()).then(|| load_set(&val, "validation images")),
        test: load_set(&test_manifest(&manifest), "test images"),
    })
}

pub fn run(
    mut cfg: RunConfig,
    out: PathBuf,
    kind: SweepKind,
    checkpoint: Option<PathBuf>,
    baseline: Option<PathBuf>,
    research_per_fraction: bool,
) -> CmdResult<()> {
    cfg.sweep.research_per_fraction |= research_per_fraction;
    let mut run = Run::new(cfg, out, "sweep")?;
    let kind_name = match kind {
        SweepKind::Labels => "labels",
        SweepKind::Batch => "batch",
        SweepKind::Nst => "nst",
    };
    run.argument("kind", kind_name);
    run.argument("checkpoint", checkpoint.as_ref().map(|p| p.display().to_string()));
    run.argument("baseline_checkpoint", baseline.as_ref().map(|p| p.display().to_string()));
    let sets = load_sets(&run.cfg)?;
    let cfg = run.cfg.clone();
    let ctx = CellContext {
        train: &sets.train,
        val: sets.val.as_ref(),
        test: &sets.test,
        encoder: &cfg.pretrain.encoder,
        policy: &cfg.augment,
        finetune: &cfg.finetune,
    };
    let sweep = &cfg.sweep;
    let seed = cfg.seed;

    let success = match kind {
        SweepKind::Labels => {
            let ckpt = if sweep.inits.contains(&InitKind::Contrastive) {
                Some(checkpoint_or_pretrain(&mut run, checkpoint, cfg.augment.p_nst, "")?)
            } else {
                None
            };
            let result = label_efficiency_sweep(&ctx, ckpt.as_ref(), sweep, seed).map_err(failure)?;
            let rows = result.rows.iter().map(|r| {
                let [a, s, p] = metric_cells(&r.result);
                vec![num(r.fraction), r.init.to_string(), r.seed.to_string(), a, s, p]
            });
            write_csv(&run.artifact("sweep.csv"), &["fraction", "init", "seed", "auc", "sens", "spec"], rows)?;
            let mut header = vec!["fraction", "init"];
            header.extend(SUMMARY_TAIL);
            let rows = result.summary.iter().map(|s| {
                let (f, i) = s.key.split_once('/').expect("fraction/init key");
                let mut row = vec![f.to_string(), i.to_string()];
                row.extend(summary_cells(s));
                row
            });
            write_csv(&run.artifact("summary.csv"), &header, rows)?;
            let hp: Vec<_> = result.hyperparams.iter().map(|(arm, h)| serde_json::json!({"arm": arm, "lr": h.lr, "optimizer": h.optimizer, "batch": h.batch})).collect();
            crate::run::write_json(&run.artifact("hparams.json"), &hp)?;
            let series: Vec<(String, Vec<(f64, f64, Option<f64>)>)> = sweep
                .inits
                .iter()
                .map(|&init| {
                    let pts = sweep
                        .fractions
                        .iter()
                        .filter_map(|&f| result.summary_for(f, init).and_then(|s| s.mean_auc.map(|m| (f, m, s.sd_auc))))
                        .collect();
                    (init.to_string(), pts)
                })
                .collect();
            let series: Vec<Series> = series.iter().map(|(n, p)| Series { name: n, points: p.clone() }).collect();
            let svg = line_plot_svg("Test AUC by label fraction", "Fraction of labelled training data", "Test AUC (mean +- sd)", &series, false);
            write_text(&run.artifact("sweep.svg"), &svg)?;
            for s in &result.summary {
                println!("sweep labels {}: mean AUC {} sd {} ({} ok, {} failed)", s.key, fmt(s.mean_auc), fmt(s.sd_auc), s.n_ok, s.n_failed);
            }
            result.success_rate()
        }
        SweepKind::Batch => {
            let images = pretrain_images(&cfg)?;
            let bank = style_bank(&cfg, cfg.augment.p_nst)?;
            let pre = PretrainInputs {
                images: &images,
                policy: &cfg.augment,
                bank: &bank,
                codec: &IdentityCodec,
                config: &cfg.pretrain,
            };
            let result = batch_size_sweep(&ctx, &pre, sweep, seed).map_err(failure)?;
            let rows = result.rows.iter().map(|r| {
                let [a, s, p] = metric_cells(&r.result);
                vec![r.batch_size.to_string(), r.seed.to_string(), a, s, p]
            });
            write_csv(&run.artifact("sweep.csv"), &["batch_size", "seed", "auc", "sens", "spec"], rows)?;
            let mut header = vec!["batch_size"];
            header.extend(SUMMARY_TAIL);
            let rows = result.summary.iter().map(|s| {
                let mut row = vec![s.key.clone()];
                row.extend(summary_cells(s));
                row
            });
            write_csv(&run.artifact("summary.csv"), &header, rows)?;
            let pts = result
                .summary
                .iter()
                .filter_map(|s| s.mean_auc.map(|m| (s.key.parse::<f64>().expect("batch size key"), m, s.sd_auc)))
                .collect();
            let series = [Series { name: "cl", points: pts }];
            let svg = line_plot_svg("Test AUC by pretraining batch size", "Batch size", "Test AUC (mean +- sd)", &series, true);
            write_text(&run.artifact("sweep.svg"), &svg)?;
            run.metric("monotonicity", result.monotonicity.as_str());
            for s in &result.summary {
                println!("sweep batch {}: mean AUC {} sd {} ({} ok, {} failed)", s.key, fmt(s.mean_auc), fmt(s.sd_auc), s.n_ok, s.n_failed);
            }
            println!("sweep batch: mean AUC is {} in batch size", result.monotonicity.as_str());
            result.success_rate()
        }
        SweepKind::Nst => {
            let p_nst = sweep.nst_probability;
            let with_nst = checkpoint_or_pretrain(&mut run, checkpoint, p_nst, "nst_")?;
            let without = checkpoint_or_pretrain(&mut run, baseline, 0.0, "no_nst_")?;
            let result = nst_ablation(&ctx, &with_nst, &without, p_nst, sweep, seed).map_err(failure)?;
            let rows = result.rows.iter().map(|r| {
                let [a, s, p] = metric_cells(&r.result);
                vec![num(r.p_nst), r.seed.to_string(), a, s, p]
            });
            write_csv(&run.artifact("sweep.csv"), &["p_nst", "seed", "auc", "sens", "spec"], rows)?;
            let rows = result
                .comparisons
                .iter()
                .map(|c| vec![c.seed.to_string(), num(c.auc_nst), num(c.auc_no_nst), num(c.z), num(c.p)]);
            write_csv(&run.artifact("comparisons.csv"), &["seed", "auc_nst", "auc_no_nst", "z", "p"], rows)?;
            let mut header = vec!["p_nst"];
            header.extend(SUMMARY_TAIL);
            let mut summary_rows = Vec::new();
            let mut series = Vec::new();
            for p in [p_nst, 0.0] {
                let aucs: Vec<Option<f64>> = result.rows.iter().filter(|r| r.p_nst == p).map(|r| r.result.as_ref().ok().map(|m| m.auc)).collect();
                let s = fundus_cl_core::sweep::summarize(num(p), &aucs);
                let mut row = vec![num(p)];
                row.extend(summary_cells(&s));
                summary_rows.push(row);
                let pts: Vec<(f64, f64, Option<f64>)> =
                    result.rows.iter().filter(|r| r.p_nst == p).filter_map(|r| r.result.as_ref().ok().map(|m| (r.seed as f64, m.auc, None))).collect();
                series.push((format!("p_nst = {p}"), pts));
            }
            write_csv(&run.artifact("summary.csv"), &header, summary_rows)?;
            let series: Vec<Series> = series.iter().map(|(n, p)| Series { name: n, points: p.clone() }).collect();
            let svg = line_plot_svg("Test AUC with and without NST pretraining", "Seed", "Test AUC", &series, false);
            write_text(&run.artifact("sweep.svg"), &svg)?;
            run.metric("mean_auc_nst", result.mean_nst);
            run.metric("mean_auc_no_nst", result.mean_no_nst);
            for c in &result.comparisons {
                println!("sweep nst seed {}: AUC {:.4} vs {:.4}, z {:.3}, p {:.4}", c.seed, c.auc_nst, c.auc_no_nst, c.z, c.p);
            }
            println!("sweep nst: mean AUC {} (p_nst {p_nst}) vs {} (p_nst 0)", fmt(result.mean_nst), fmt(result.mean_no_nst));
            result.success_rate()
        }
    };
    run.metric("success_rate", success);
    let min = sweep.min_success;
    run.finish()?;
    if success < min {
        return Err(internal(format!("only {:.0}% of sweep cells succeeded (need {:.0}%)", success * 100.0, min * 100.0)));
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}
