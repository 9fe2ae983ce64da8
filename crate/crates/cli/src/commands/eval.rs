use std::collections::HashMap;
use std::path::{Path, PathBuf};

use fundus_cl_core::checkpoint::load_checkpoint;
use fundus_cl_core::config::RunConfig;
use fundus_cl_core::finetune::{predict_proba, ClassifierModel};
use fundus_cl_core::stats::{delong_test, evaluate, roc_points, Comparison, ScoredSet, StatsError};
use fundus_cl_core::svg::roc_svg;

use crate::run::{internal, labeled_manifest, num, test_manifest, usage, write_csv, write_json, write_text, CmdResult, OrFail, Run};

/// Reads `image_id,label,score` rows.
pub fn read_scores(path: &Path) -> CmdResult<Vec<(String, u8, f64)>> {
    let what = format!("scores {}", path.display());
    let mut rdr = csv::Reader::from_path(path).or_usage(&what)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.or_usage(&what)?;
        let bad = || usage(format!("{what}: line {} is not `image_id,label,score`", i + 2));
        if row.len() != 3 {
            return Err(bad());
        }
        let label: u8 = row[1].parse().map_err(|_| bad())?;
        let score: f64 = row[2].parse().map_err(|_| bad())?;
        out.push((row[0].to_string(), label, score));
    }
    Ok(out)
}

fn stats_failure(e: StatsError) -> crate::run::Failure {
    match e {
        StatsError::SingleClass { .. } => usage(format!("test set: {e}")),
        other => internal(other),
    }
}

pub fn run(cfg: RunConfig, out: PathBuf, model_path: &Path, compare: Option<&Path>) -> CmdResult<()> {
    let mut run = Run::new(cfg, out, "eval")?;
    run.argument("model", model_path.display().to_string());
    run.argument("compare", compare.map(|p| p.display().to_string()));
    let ckpt = load_checkpoint(model_path).or_usage(&format!("model {}", model_path.display()))?;
    let model = ClassifierModel::from_checkpoint(&ckpt).or_usage(&format!("model {}", model_path.display()))?;
    let test = test_manifest(&labeled_manifest(&run.cfg)?);

    let mut ids = Vec::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut failed = 0usize;
    for (r, p) in test.records.iter().zip(predict_proba(&model, &test)) {
        match p {
            Ok(p) => {
                ids.push(r.image_id.clone());
                scores.push(p);
                labels.push(r.label());
            }
            Err(e) => {
                log::warn!("eval: skipping {}: {e}", r.image_id);
                failed += 1;
            }
        }
    }
    let rows = ids.iter().zip(&labels).zip(&scores).map(|((id, l), s)| vec![id.clone(), l.to_string(), num(*s)]);
    write_csv(&run.artifact("scores.csv"), &["image_id", "label", "score"], rows)?;
    let set = ScoredSet::new(scores, labels).map_err(stats_failure)?;
    let mut report = evaluate(&set, model.threshold, run.cfg.eval.resamples, run.seeds().seed("eval/bootstrap")).map_err(stats_failure)?;

    let points = roc_points(&set).map_err(stats_failure)?;
    let mut curves = vec![("model".to_string(), points.clone())];
    if let Some(other_path) = compare {
        let other: HashMap<String, (u8, f64)> = read_scores(other_path)?.into_iter().map(|(id, l, s)| (id, (l, s))).collect();
        let mut aligned = Vec::with_capacity(ids.len());
        for (id, &label) in ids.iter().zip(set.labels()) {
            match other.get(id) {
                Some(&(l, s)) if l == label => aligned.push(s),
                Some(_) => return Err(usage(format!("{}: label of {id} differs", other_path.display()))),
                None => return Err(usage(format!("{}: no score for {id}", other_path.display()))),
            }
        }
        let other_set = ScoredSet::new(aligned, set.labels().to_vec()).or_usage(&format!("scores {}", other_path.display()))?;
        let d = delong_test(&set, &other_set).map_err(stats_failure)?;
        report.comparisons.push(Comparison {
            other: other_path.display().to_string(),
            auc_self: d.auc_a,
            auc_other: d.auc_b,
            z: d.z,
            p: d.p,
        });
        curves.push(("compared".to_string(), roc_points(&other_set).map_err(stats_failure)?));
        println!("eval: DeLong vs {}: AUC {:.4} vs {:.4}, z {:.3}, p {:.4}", other_path.display(), d.auc_a, d.auc_b, d.z, d.p);
    }

    let rows = points.iter().map(|p| vec![num(p.threshold), num(p.fpr), num(p.tpr)]);
    write_csv(&run.artifact("roc.csv"), &["threshold", "fpr", "tpr"], rows)?;
    if run.cfg.eval.roc_svg {
        let refs: Vec<(&str, &[_])> = curves.iter().map(|(n, p)| (n.as_str(), p.as_slice())).collect();
        let title = format!("ROC (AUC {:.3})", report.auc.value);
        write_text(&run.artifact("roc.svg"), &roc_svg(&title, &refs))?;
    }
    write_json(&run.artifact("report.json"), &report)?;

    run.metric("auc", report.auc.value);
    run.metric("sensitivity", report.sensitivity.value);
    run.metric("specificity", report.specificity.value);
    run.metric("images", set.len());
    run.metric("failed_images", failed);
    println!(
        "eval: AUC {:.4} [{:.4}, {:.4}], sensitivity {:.4}, specificity {:.4} at threshold {:.4} ({}), n = {} (+{}, -{})",
        report.auc.value,
        report.auc.ci_low,
        report.auc.ci_high,
        report.sensitivity.value,
        report.specificity.value,
        report.threshold,
        report.threshold_source,
        set.len(),
        report.n_pos,
        report.n_neg
    );
    run.finish()
}
