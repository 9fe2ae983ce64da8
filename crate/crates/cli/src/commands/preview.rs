use std::path::PathBuf;

use fundus_cl_core::augment::{nst_augment, IdentityCodec};
use fundus_cl_core::config::RunConfig;

use crate::run::{labeled_manifest, load_set, style_bank, training_manifest, usage, write_csv, CmdResult, OrFail, Run};

pub fn run(cfg: RunConfig, out: PathBuf, count: usize) -> CmdResult<()> {
    let mut run = Run::new(cfg, out, "style-preview")?;
    run.argument("count", count);
    let bank = style_bank(&run.cfg, 1.0)?;
    if bank.is_empty() {
        return Err(usage("style directory holds no PNG/JPEG images"));
    }
    let manifest = training_manifest(&labeled_manifest(&run.cfg)?);
    let first = manifest.subset({
        let mut left = count;
        move |_| {
            let take = left > 0;
            left = left.saturating_sub(1);
            take
        }
    });
    let set = load_set(&first, "style preview");
    std::fs::create_dir_all(run.out.join("preview")).or_internal("preview directory")?;
    let p = run.cfg.augment;
    let mut rows = Vec::new();
    for (i, (rec, img)) in set.records.iter().zip(&set.images).enumerate() {
        let style = i % bank.len();
        let after = nst_augment(img, &bank.styles[style], p.nst_alpha, p.nst_epsilon, &IdentityCodec).or_internal("style transfer")?;
        let before_name = format!("preview/{}_before.png", rec.image_id);
        let after_name = format!("preview/{}_after.png", rec.image_id);
        img.save_png(&run.artifact(&before_name)).or_internal(&before_name)?;
        after.save_png(&run.artifact(&after_name)).or_internal(&after_name)?;
        rows.push(vec![rec.image_id.clone(), style.to_string(), before_name, after_name]);
    }
    println!("style-preview: {} pairs in {}", rows.len(), run.out.join("preview").display());
    run.metric("pairs", rows.len());
    write_csv(&run.artifact("preview.csv"), &["image_id", "style_index", "before", "after"], rows)?;
    run.finish()
}
