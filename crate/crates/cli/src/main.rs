mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use avqa_core::manifest::Split;
use avqa_core::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(
    name = "avqa",
    version,
    about = "Omnidirectional audio-visual quality assessment pipelines"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a config field, e.g. `--set model.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// SSQ exclusion, subject screening and MOS.
    ProcessScores,
    /// Spatial and temporal information per sequence.
    Siti,
    /// Head-movement summaries for every trace under the hm root.
    HmStats,
    /// Seeded train/test assignment.
    Split,
    /// Log-mel feature dumps for every sequence.
    ExtractFeatures,
    /// Train the model on the train split.
    Train,
    /// Metrics of a checkpoint on one split.
    Evaluate {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score one sequence from the manifest.
    Predict {
        #[arg(long)]
        sequence: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the synthetic desk-scale corpus and its config.
    SynthFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ProcessScores => "process-scores",
            Command::Siti => "siti",
            Command::HmStats => "hm-stats",
            Command::Split => "split",
            Command::ExtractFeatures => "extract-features",
            Command::Train => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Predict { .. } => "predict",
            Command::SynthFixture { .. } => "synth-fixture",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::SynthFixture { out, seed } = &cli.command {
        return commands::synth_fixture_cmd(out, *seed);
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| ConfigError(format!("{} needs --config", cli.command.name())))?;
    let cfg = RunConfig::load(path, &cli.overrides)?;
    let mut log = commands::RunLog::new(&cfg, cli.command.name(), &cli.overrides);
    match &cli.command {
        Command::ProcessScores => commands::process_scores_cmd(&cfg, &mut log)?,
        Command::Siti => commands::siti_cmd(&cfg, &mut log)?,
        Command::HmStats => commands::hm_stats_cmd(&cfg, &mut log)?,
        Command::Split => commands::split_cmd(&cfg, &mut log)?,
        Command::ExtractFeatures => commands::extract_features_cmd(&cfg, &mut log)?,
        Command::Train => commands::train_cmd(&cfg, &mut log)?,
        Command::Evaluate { split, checkpoint } => {
            commands::evaluate_cmd(&cfg, (*split).into(), checkpoint.as_deref(), &mut log)?
        }
        Command::Predict { sequence, checkpoint } => {
            commands::predict_cmd(&cfg, sequence, checkpoint.as_deref(), &mut log)?
        }
        Command::SynthFixture { .. } => unreachable!("handled above"),
    }
    log.finish()
}

/// 2 validation, 3 data, 4 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<avqa_core::Error>() {
            return match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
