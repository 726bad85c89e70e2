mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{BackendChoice, RunConfig};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "cortex-align", version, about = "EEG-to-token-embedding alignment pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory for checkpoints, CSVs and predictions.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Dataset directory (manifest, samples, vocabulary, embedding table).
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,

    /// `surrogate` or `bridge:URL`.
    #[arg(long, global = true, value_name = "BACKEND")]
    backend: Option<BackendChoice>,

    /// Embedding table used by the surrogate decoder.
    #[arg(long, global = true, value_name = "PATH")]
    embedding_table: Option<PathBuf>,

    /// Number of held-out subjects (seeded draw).
    #[arg(long, global = true, value_name = "K")]
    mask: Option<usize>,

    /// Explicit held-out subjects, comma separated.
    #[arg(long, global = true, value_name = "IDS", value_delimiter = ',')]
    subjects: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train the autoencoder on the training subjects.
    TrainAe(EpochArgs),
    /// Train the alignment network on frozen latents.
    TrainAlign(EpochArgs),
    /// Encode every sample with the frozen encoder.
    ExtractLatents,
    /// Decode and score the held-out subjects.
    Eval,
    /// Run ablations under the repeated subject protocol.
    Ablate(AblateArgs),
    /// Check that a bridge is reachable and consistent with the local table.
    BridgeCheck,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    samples_per_subject: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    confound: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Debug, Args)]
struct EpochArgs {
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    Pca,
    Knn,
    Tree,
    Mlp,
    Linear,
    Finetune,
    All,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(value_enum)]
    which: Ablation,
}

fn resolve(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = out.clone();
    }
    if let Some(data) = &global.data {
        cfg.data_dir = data.clone();
    }
    if let Some(backend) = &global.backend {
        cfg.backend = backend.clone();
    }
    if let Some(table) = &global.embedding_table {
        cfg.embedding_table = Some(table.clone());
    }
    if let Some(k) = global.mask {
        cfg.split.mask = k;
        cfg.split.subjects.clear();
    }
    if let Some(ids) = &global.subjects {
        cfg.split.subjects = ids.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.global)?;
    match cli.command {
        Command::GenData(a) => {
            let s = &mut cfg.synth;
            s.subjects = a.subjects.unwrap_or(s.subjects);
            s.samples_per_subject = a.samples_per_subject.unwrap_or(s.samples_per_subject);
            s.vocab_size = a.vocab_size.unwrap_or(s.vocab_size);
            s.channels = a.channels.unwrap_or(s.channels);
            s.confound = a.confound.unwrap_or(s.confound);
            s.noise = a.noise.unwrap_or(s.noise);
            commands::gen_data(&cfg)
        }
        Command::TrainAe(a) => {
            if let Some(e) = a.epochs {
                cfg.pipeline.autoencoder.epochs = e;
            }
            commands::train_ae(&cfg)
        }
        Command::TrainAlign(a) => {
            if let Some(e) = a.epochs {
                cfg.pipeline.alignment.epochs = e;
            }
            commands::train_align(&cfg)
        }
        Command::ExtractLatents => commands::extract_latents(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Ablate(a) => commands::ablate(&cfg, a.which),
        Command::BridgeCheck => commands::bridge_check(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CORTEX_ALIGN_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
