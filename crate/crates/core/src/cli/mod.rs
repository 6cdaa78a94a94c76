//! Command-line surface: configuration, file formats, edit scripts and the
//! `condflow` subcommands.

mod binfmt;
mod commands;
mod config;
mod files;
mod script;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    checkpoint_world, cmd_edit, cmd_eval, cmd_gen_data, cmd_init, cmd_inspect, cmd_sample, cmd_train, eval_report, eval_starts,
    parse_targets, EditArgs, EvalArgs, SampleArgs, SUITES,
};
pub use config::{DataConfig, EditConfig, EvalConfig, ModelConfig, OutputConfig, ReadoutKind, RunConfig, WorldConfig, OUT_DIR_ENV};
pub use files::{
    decode_dataset, decode_latents, encode_dataset, encode_latents, load_dataset, load_latents, save_dataset, save_latents,
    Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, DATASET_MAGIC, DATASET_VERSION, LATENT_MAGIC, LATENT_VERSION,
};
pub use script::{parse_script, ScriptStep};

use crate::editpipe::{EditMode, Variant};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "condflow", version, about = "Attribute-conditioned continuous normalizing flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a configuration file with every default spelled out.
    Init {
        #[arg(long, default_value = "condflow.toml")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a flow on a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override `[model] blocks`.
        #[arg(long)]
        blocks: Option<usize>,
        /// Override `[train] epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Draw latents conditioned on attribute targets.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `NAME=VALUE`; unset channels use their training mean.
        #[arg(long = "set", value_name = "NAME=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        truncation: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply an edit script to latents.
    Edit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EditMode>,
    },
    /// Compute an evaluation suite and write a report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Summarize a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<EditMode, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

fn load_or_default(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Executes one parsed command.
pub fn execute(cmd: &Command, stdout: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Init { out, force } => cmd_init(out, *force, stdout),
        Command::GenData { config, out } => cmd_gen_data(&RunConfig::load(config)?, out.as_deref(), stdout).map(|_| ()),
        Command::Train { config, data, out, blocks, epochs } => {
            let mut cfg = RunConfig::load(config)?;
            if let Some(b) = blocks {
                cfg.model.blocks = *b;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            cfg.validate()?;
            cmd_train(&cfg, data.as_deref(), out.as_deref(), stdout).map(|_| ())
        }
        Command::Sample { checkpoint, set, n, seed, truncation, out } => {
            let args = SampleArgs { checkpoint, sets: set, n: *n, seed: *seed, truncation: *truncation, out: out.as_deref() };
            cmd_sample(&args, stdout).map(|_| ())
        }
        Command::Edit { checkpoint, config, input, script, out, variant, mode } => {
            let cfg = load_or_default(config.as_ref())?;
            cmd_edit(&cfg, &EditArgs { checkpoint, input, script, out, variant: *variant, mode: *mode }, stdout).map(|_| ())
        }
        Command::Eval { checkpoint, config, suite, out, json } => {
            let cfg = load_or_default(config.as_ref())?;
            cmd_eval(&cfg, &EvalArgs { checkpoint, suite, out: out.as_deref(), json: json.as_deref() }, stdout).map(|_| ())
        }
        Command::Inspect { checkpoint } => cmd_inspect(checkpoint, stdout),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 1 for usage and
/// configuration errors, 2 for numeric and integrity failures.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    match execute(&cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
