use std::path::PathBuf;

use fundus_cl_core::config::RunConfig;
use fundus_cl_core::data::{make_patient_splits, DatasetManifest, Split, SplitFractions};
use fundus_cl_core::quality::{filter_quality, QualityOutcome};

use crate::run::{labeled_manifest, read_manifest, write_csv, CmdResult, OrFail, Run};

/// Copy of `m` whose image URIs are absolute, so the written manifest works
/// from any directory.
fn resolved(m: &DatasetManifest) -> DatasetManifest {
    let mut out = m.clone();
    for r in &mut out.records {
        let p = m.resolve(r);
        r.image_uri = std::path::absolute(&p).unwrap_or(p).to_string_lossy().into_owned();
    }
    out
}

fn exclusion_rows(source: &str, outcome: &QualityOutcome) -> Vec<Vec<String>> {
    outcome
        .reasons
        .iter()
        .map(|(id, reason)| vec![id.clone(), source.to_string(), reason.as_str().to_string()])
        .collect()
}

pub fn run(cfg: RunConfig, out: PathBuf) -> CmdResult<()> {
    let mut run = Run::new(cfg, out, "ingest")?;
    let manifest = labeled_manifest(&run.cfg)?;
    let outcome = filter_quality(&manifest, &run.cfg.quality).or_usage("quality thresholds")?;

    let any_tags = outcome.kept.split_tags.values().any(|s| *s != Split::Excluded);
    let kept = if any_tags || outcome.kept.is_empty() {
        outcome.kept.clone()
    } else {
        let d = &run.cfg.data;
        let fractions = SplitFractions {
            train: d.train_fraction,
            val: d.val_fraction,
            test: d.test_fraction,
        };
        make_patient_splits(&outcome.kept, fractions, run.seeds().seed("splits")).or_usage("splits")?
    };
    let kept = resolved(&kept);
    kept.write_csv(&run.artifact("kept.csv")).or_internal("kept.csv")?;
    kept.write_splits_csv(&run.artifact("splits.csv")).or_internal("splits.csv")?;
    resolved(&outcome.excluded).write_csv(&run.artifact("excluded.csv")).or_internal("excluded.csv")?;

    let mut rows = exclusion_rows("labeled", &outcome);
    let mut unlabeled_counts = None;
    if let Some(path) = run.cfg.data.unlabeled.clone() {
        let unlabeled = read_manifest(&path)?;
        let u = filter_quality(&unlabeled, &run.cfg.quality).or_usage("quality thresholds")?;
        resolved(&u.kept).write_csv(&run.artifact("unlabeled_kept.csv")).or_internal("unlabeled_kept.csv")?;
        rows.extend(exclusion_rows("unlabeled", &u));
        unlabeled_counts = Some((u.kept.len(), u.excluded.len()));
    }
    write_csv(&run.artifact("exclusions.csv"), &["image_id", "source", "reason"], rows)?;

    let mut by_reason = std::collections::BTreeMap::new();
    for (_, reason) in &outcome.reasons {
        *by_reason.entry(reason.as_str()).or_insert(0usize) += 1;
    }
    run.metric("kept", kept.len());
    run.metric("excluded", outcome.excluded.len());
    run.metric("excluded_by_reason", &by_reason);
    let reasons: Vec<String> = by_reason.iter().map(|(r, n)| format!("{r} {n}")).collect();
    println!("ingest: kept {}, excluded {} ({})", kept.len(), outcome.excluded.len(), reasons.join(", "));
    if let Some((k, e)) = unlabeled_counts {
        run.metric("unlabeled_kept", k);
        run.metric("unlabeled_excluded", e);
        println!("ingest: unlabeled kept {k}, excluded {e}");
    }
    run.finish()
}
