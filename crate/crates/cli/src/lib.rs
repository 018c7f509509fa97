//! The `planseq` command-line driver.
//!
//! Every command reads a [`RunConfig`] (JSON, optional), applies flag
//! overrides, and writes its artifacts into `--out`. Outputs depend only on
//! the inputs and the seed.

mod commands;
mod config;
mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use svg::render_svg;

use planseq_core::model::ContextKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "planseq", version, about = "Floor plans as token sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (JSON); defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContextArg {
    None,
    Resnet,
    Mixer,
}

impl From<ContextArg> for ContextKind {
    fn from(c: ContextArg) -> Self {
        match c {
            ContextArg::None => ContextKind::None,
            ContextArg::Resnet => ContextKind::Resnet,
            ContextArg::Mixer => ContextKind::Mixer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Uniform,
    Nn,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate plan documents and write a normalized archive.
    Ingest {
        /// Plan JSON files, or directories of `*.json` files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build train/test token records from a plan archive.
    Dataset {
        archive: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model on a record file.
    Train {
        records: PathBuf,
        #[arg(long, value_enum)]
        context: Option<ContextArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a record file with a checkpoint or a baseline.
    Eval {
        records: PathBuf,
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Training records for the nearest-neighbor baseline.
        #[arg(long, required_if_eq("baseline", "nn"))]
        train: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Draw samples, optionally completing record prefixes.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Records to take prefixes from; required when `--prefix-segments > 0`.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        prefix_segments: usize,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        top_p: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict shortest-path distances from sampled completions.
    Distmap {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Plan archive written by `ingest`.
        #[arg(long)]
        archive: PathBuf,
        /// Records whose viewpoints are evaluated.
        #[arg(long)]
        records: PathBuf,
        /// Number of scenes.
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        k_completions: Option<usize>,
        #[arg(long)]
        top_p: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Render token sequences (JSON lines with a `tokens` field) as SVG.
    Render {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    let diverged = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<planseq_core::Error>(), Some(planseq_core::Error::Divergence { .. })));
    if diverged {
        EXIT_DIVERGENCE
    } else {
        EXIT_DATA
    }
}
