//! Shared plumbing: exit codes, the run directory and its record, data loading.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use fundus_cl_core::augment::StyleBank;
use fundus_cl_core::config::RunConfig;
use fundus_cl_core::data::{DatasetManifest, Split};
use fundus_cl_core::finetune::LabeledSet;
use fundus_cl_core::image::ImageTensor;
use fundus_cl_core::rng::SeedTree;
use serde::Serialize;
use serde_json::{Map, Value};

/// Exit code for usage and precondition failures.
pub const EXIT_USAGE: u8 = 2;
/// Exit code for internal errors.
pub const EXIT_INTERNAL: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub type CmdResult<T> = Result<T, Failure>;

pub fn usage(message: impl Display) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.to_string(),
    }
}

pub fn internal(message: impl Display) -> Failure {
    Failure {
        code: EXIT_INTERNAL,
        message: message.to_string(),
    }
}

pub trait OrFail<T> {
    /// Maps an error to a usage/precondition failure.
    fn or_usage(self, what: &str) -> CmdResult<T>;
    /// Maps an error to an internal failure.
    fn or_internal(self, what: &str) -> CmdResult<T>;
}

impl<T, E: Display> OrFail<T> for Result<T, E> {
    fn or_usage(self, what: &str) -> CmdResult<T> {
        self.map_err(|e| usage(format!("{what}: {e}")))
    }

    fn or_internal(self, what: &str) -> CmdResult<T> {
        self.map_err(|e| internal(format!("{what}: {e}")))
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    run_id: &'a str,
    command: &'a str,
    seed: u64,
    config: &'a str,
    arguments: &'a Map<String, Value>,
    artifacts: &'a [String],
    metrics: &'a Map<String, Value>,
}

/// One command invocation writing into its output directory.
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub run_id: String,
    command: &'static str,
    arguments: Map<String, Value>,
    artifacts: Vec<String>,
    metrics: Map<String, Value>,
}

impl Run {
    pub fn new(cfg: RunConfig, out: PathBuf, command: &'static str) -> CmdResult<Self> {
        cfg.validate().or_usage("config")?;
        let run_id = cfg.digest().or_internal("config digest")?;
        std::fs::create_dir_all(&out).or_usage(&format!("cannot create {}", out.display()))?;
        Ok(Self {
            cfg,
            out,
            run_id,
            command,
            arguments: Map::new(),
            artifacts: Vec::new(),
            metrics: Map::new(),
        })
    }

    pub fn seeds(&self) -> SeedTree {
        SeedTree::new(self.cfg.seed)
    }

    /// Path of an output file, recorded as an artifact of this run.
    pub fn artifact(&mut self, name: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.out.join(name)
    }

    pub fn argument(&mut self, key: &str, value: impl Serialize) {
        self.arguments.insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        self.metrics.insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }

    /// Writes `config.toml` (the resolved config) and `run_record.json`.
    pub fn finish(mut self) -> CmdResult<()> {
        let toml = self.cfg.to_canonical_toml().or_internal("config")?;
        let config = self.artifact("config.toml");
        write_text(&config, &toml)?;
        let record = RunRecord {
            run_id: &self.run_id,
            command: self.command,
            seed: self.cfg.seed,
            config: "config.toml",
            arguments: &self.arguments,
            artifacts: &self.artifacts,
            metrics: &self.metrics,
        };
        write_json(&self.out.join("run_record.json"), &record)
    }
}

pub fn write_text(path: &Path, text: &str) -> CmdResult<()> {
    std::fs::write(path, text).or_internal(&format!("cannot write {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let mut text = serde_json::to_string_pretty(value).or_internal("json")?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CmdResult<()> {
    let what = format!("cannot write {}", path.display());
    let mut w = csv::Writer::from_path(path).or_internal(&what)?;
    w.write_record(header).or_internal(&what)?;
    for row in rows {
        w.write_record(&row).or_internal(&what)?;
    }
    w.flush().or_internal(&what)
}

/// Number formatting shared by every CSV: shortest round-trip form, blank for
/// missing values.
pub fn num(v: impl Into<Option<f64>>) -> String {
    v.into().map(|v| v.to_string()).unwrap_or_default()
}

pub fn read_manifest(path: &Path) -> CmdResult<DatasetManifest> {
    DatasetManifest::read_csv(path).or_usage(&format!("manifest {}", path.display()))
}

/// The labelled manifest from `[data]` with split tags applied.
pub fn labeled_manifest(cfg: &RunConfig) -> CmdResult<DatasetManifest> {
    let path = cfg.data.manifest.as_deref().ok_or_else(|| usage("no manifest: set [data].manifest or pass --manifest"))?;
    let mut manifest = read_manifest(path)?;
    if let Some(splits) = &cfg.data.splits {
        manifest.read_splits_csv(splits).or_usage(&format!("splits {}", splits.display()))?;
    }
    manifest.validate().or_usage("manifest")?;
    Ok(manifest)
}

/// Records that take part in training, keeping their split tags.
pub fn training_manifest(manifest: &DatasetManifest) -> DatasetManifest {
    let ids: HashSet<String> = manifest.training_records().iter().map(|r| r.image_id.clone()).collect();
    manifest.subset(|r| ids.contains(&r.image_id))
}

/// Records of the evaluation split: `test` when tagged, else everything.
pub fn test_manifest(manifest: &DatasetManifest) -> DatasetManifest {
    let test = manifest.with_split(Split::Test);
    if test.is_empty() {
        manifest.clone()
    } else {
        test
    }
}

/// Loads images; unreadable ones are skipped with a warning.
pub fn load_set(manifest: &DatasetManifest, what: &str) -> LabeledSet {
    let (set, failures) = LabeledSet::load(manifest);
    for (id, e) in &failures {
        log::warn!("{what}: skipping {id}: {e}");
    }
    set
}

/// Pretraining images: the `[data].unlabeled` manifest when set, otherwise
/// the training records of the labelled manifest.
pub fn pretrain_images(cfg: &RunConfig) -> CmdResult<Vec<ImageTensor>> {
    let manifest = match &cfg.data.unlabeled {
        Some(path) => read_manifest(path)?,
        None => training_manifest(&labeled_manifest(cfg)?),
    };
    Ok(load_set(&manifest, "pretraining images").images)
}

/// The style bank, required only when NST is switched on.
pub fn style_bank(cfg: &RunConfig, p_nst: f64) -> CmdResult<StyleBank> {
    match &cfg.data.styles {
        Some(dir) => StyleBank::load_dir(dir, cfg.data.style_max_side).or_usage(&format!("styles {}", dir.display())),
        None if p_nst > 0.0 => Err(usage(format!("p_nst = {p_nst} needs a style directory ([data].styles or --styles)"))),
        None => Ok(StyleBank::new(Vec::new())),
    }
}
