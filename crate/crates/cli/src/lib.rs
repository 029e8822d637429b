//! Command-line driver: data generation, the three training stages,
//! evaluation, ablation and modality comparison.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors and 3 on
//! an invalid configuration.

mod artifacts;
mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use mgr_core::config::RunConfig;
use mgr_core::Error;

pub use artifacts::{CONFUSION, LOSS_TRACE, METRICS, PREDICTIONS, RESOLVED_CONFIG};
pub use commands::{stage_dir, Command, ALIGN_CHECKPOINT, EMOTION_CHECKPOINT, MGR_CHECKPOINT};

#[derive(Debug, Parser)]
#[command(
    name = "mgr",
    about = "Micro-gesture recognition with visual-text alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; for gen-synth, the corpus directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus.
    GenSynth(Common),
    /// Train the projection heads and prompting module.
    AlignTrain(Common),
    /// Zero-shot retrieval on held-out clips with the aligned model.
    ZeroShotEval(Common),
    /// Train the clip classifier on frozen aligned features.
    FinetuneCls(Common),
    /// Evaluate the clip classifier.
    EvalMgr(Common),
    /// Train the video-level emotion classifier.
    TrainEmotion(Common),
    /// Evaluate the emotion classifier.
    EvalEmotion(Common),
    /// Run the five-row ablation.
    Ablate(Common),
    /// Compare emotion accuracy across input modalities.
    ModalityCompare(Common),
}

impl Cmd {
    fn split(self) -> (commands::Command, Common) {
        use commands::Command as C;
        match self {
            Cmd::GenSynth(c) => (C::GenSynth, c),
            Cmd::AlignTrain(c) => (C::AlignTrain, c),
            Cmd::ZeroShotEval(c) => (C::ZeroShotEval, c),
            Cmd::FinetuneCls(c) => (C::FinetuneCls, c),
            Cmd::EvalMgr(c) => (C::EvalMgr, c),
            Cmd::TrainEmotion(c) => (C::TrainEmotion, c),
            Cmd::EvalEmotion(c) => (C::EvalEmotion, c),
            Cmd::Ablate(c) => (C::Ablate, c),
            Cmd::ModalityCompare(c) => (C::ModalityCompare, c),
        }
    }
}

fn resolve(command: commands::Command, common: &Common) -> mgr_core::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        if command == commands::Command::GenSynth {
            cfg.paths.corpus = out.clone();
        } else {
            cfg.paths.out = out.clone();
        }
    }
    Ok(cfg)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 3,
        _ => 1,
    }
}

/// Runs one invocation; `args` includes the program name.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("MGR_LOG", "error"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (command, common) = cli.command.split();
    let result = resolve(command, &common).and_then(|cfg| commands::execute(command, cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            exit_code(&e)
        }
    }
}
