use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fundus_cl_core::config::RunConfig;
use fundus_cl_core::finetune::InitKind;

mod commands;
mod run;

use run::{CmdResult, OrFail, EXIT_USAGE};

/// Contrastive pretraining, fine-tuning and evaluation of referable-DR classifiers.
#[derive(Parser)]
#[command(name = "fundus-cl", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; module defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for independent jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "fundus-cl-out")]
    out: PathBuf,
    /// Labelled manifest (overrides [data].manifest).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Split tags `image_id,split` (overrides [data].splits).
    #[arg(long, global = true)]
    splits: Option<PathBuf>,
    /// Pretraining manifest (overrides [data].unlabeled).
    #[arg(long, global = true)]
    unlabeled: Option<PathBuf>,
    /// Style image directory (overrides [data].styles).
    #[arg(long, global = true)]
    styles: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SynthKind {
    ShapeVsTexture,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Labels,
    Batch,
    Nst,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum InitArg {
    Cl,
    Random,
}

impl From<InitArg> for InitKind {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Cl => InitKind::Contrastive,
            InitArg::Random => InitKind::Random,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-class fixture with style images.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        n_unlabeled: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long, value_enum, default_value = "shape-vs-texture")]
        kind: SynthKind,
    },
    /// Quality-filter the manifest and assign patient-level splits.
    Ingest,
    /// Contrastive pretraining; writes checkpoint.bin and loss.csv.
    Pretrain,
    /// Fine-tune a classifier with grid search over hyperparameters.
    Finetune {
        #[arg(long, value_enum)]
        init: Option<InitArg>,
        /// Share of the labelled training records used.
        #[arg(long)]
        fraction: Option<f64>,
        /// Contrastive checkpoint, required for `--init cl`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Train only the classification head.
        #[arg(long)]
        freeze_encoder: bool,
    },
    /// Evaluate a classifier on the test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// scores.csv of another model on the same images, compared with DeLong's test.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Label-efficiency, batch-size or NST ablation sweep.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Contrastive checkpoint (NST arm for `--kind nst`); pretrained when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Checkpoint pretrained without NST for `--kind nst`; pretrained when omitted.
        #[arg(long)]
        baseline_checkpoint: Option<PathBuf>,
        /// Re-run the hyperparameter search for every label fraction.
        #[arg(long)]
        research_per_fraction: bool,
    },
    /// Write before/after PNG pairs of style-transfer augmentation.
    StylePreview {
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest => "ingest",
            Command::Pretrain => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
            Command::StylePreview { .. } => "style-preview",
        }
    }
}

fn resolve_config(g: &Global) -> CmdResult<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path).or_usage("config")?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    let data = &mut cfg.data;
    for (slot, flag) in [
        (&mut data.manifest, &g.manifest),
        (&mut data.splits, &g.splits),
        (&mut data.unlabeled, &g.unlabeled),
        (&mut data.styles, &g.styles),
    ] {
        if let Some(p) = flag {
            *slot = Some(std::path::absolute(p).unwrap_or_else(|_| p.clone()));
        }
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CmdResult<()> {
    if cli.global.jobs == 0 {
        return Err(run::usage("--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs)
        .build_global()
        .or_internal("thread pool")?;
    let cfg = resolve_config(&cli.global)?;
    let out = cli.global.out.clone();
    let name = cli.command.name();
    log::info!("{name}: writing to {}", out.display());
    match cli.command {
        Command::Synth { n, n_unlabeled, image_size, kind: SynthKind::ShapeVsTexture } => commands::synth::run(cfg, out, n, n_unlabeled, image_size),
        Command::Ingest => commands::ingest::run(cfg, out),
        Command::Pretrain => commands::pretrain::run(cfg, out),
        Command::Finetune {
            init,
            fraction,
            checkpoint,
            freeze_encoder,
        } => commands::finetune::run(cfg, out, init.map(Into::into), fraction, checkpoint, freeze_encoder),
        Command::Eval { model, compare } => commands::eval::run(cfg, out, &model, compare.as_deref()),
        Command::Sweep {
            kind,
            checkpoint,
            baseline_checkpoint,
            research_per_fraction,
        } => commands::sweep::run(cfg, out, kind, checkpoint, baseline_checkpoint, research_per_fraction),
        Command::StylePreview { count } => commands::preview::run(cfg, out, count),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FUNDUS_CL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
