use std::path::PathBuf;

use fundus_cl_core::config::RunConfig;
use fundus_cl_core::synth::{generate, SynthError};

use crate::run::{internal, usage, CmdResult, Run};

pub fn run(mut cfg: RunConfig, out: PathBuf, n: Option<usize>, n_unlabeled: Option<usize>, image_size: Option<usize>) -> CmdResult<()> {
    let s = &mut cfg.synth;
    s.n = n.unwrap_or(s.n);
    s.n_unlabeled = n_unlabeled.unwrap_or(s.n_unlabeled);
    s.image_size = image_size.unwrap_or(s.image_size);
    let mut run = Run::new(cfg, out, "synth")?;
    run.argument("kind", "shape_vs_texture");
    let generated = generate(&run.out, &run.cfg.synth).map_err(|e| match e {
        SynthError::TooFew(_) | SynthError::Config(_) | SynthError::Io { .. } => usage(e),
        other => internal(other),
    })?;
    for name in ["manifest.csv", "splits.csv", "images", "styles"] {
        run.artifact(name);
    }
    let referable = generated.manifest.records.iter().filter(|r| r.referable()).count();
    run.metric("labeled", generated.manifest.len());
    run.metric("referable", referable);
    if let Some(u) = &generated.unlabeled {
        run.artifact("unlabeled.csv");
        run.metric("unlabeled", u.len());
    }
    println!(
        "synth: {} labeled ({referable} referable), {} unlabeled, {} styles in {}",
        generated.manifest.len(),
        generated.unlabeled.as_ref().map_or(0, |u| u.len()),
        run.cfg.synth.n_styles,
        run.out.display()
    );
    run.finish()
}
