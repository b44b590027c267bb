//! The `sbora` experiment driver.
//!
//! Every subcommand reads a flat `key = value` config (`--config`) and/or
//! per-key flags, with flags taking precedence. Reports are JSON on stdout
//! and embed `schema_version` plus the fully resolved config. Nothing
//! time-dependent is written, so reruns with the same config are
//! byte-identical.
//!
//! Exit codes: [`EXIT_OK`], [`EXIT_FAILURE`] (a check failed),
//! [`EXIT_USAGE`] (bad arguments or config).

mod commands;
mod settings;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::error::SboraError;

pub use settings::{parse_config, parse_grid, Settings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl From<SboraError> for CliError {
    fn from(e: SboraError) -> Self {
        match e {
            SboraError::Config(_) | SboraError::InvalidRank { .. } => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(e.to_string())
    }
}

macro_rules! keyed_args {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, clap::Args)]
        pub struct $name {
            /// Config file of `key = value` lines; flags override it.
            #[arg(long, value_name = "PATH")]
            config: Option<PathBuf>,
            $($(#[$fmeta])* #[arg(long, value_name = "VALUE")] $field: Option<String>,)*
        }

        impl $name {
            const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            fn settings(&self) -> Result<Settings, CliError> {
                let flags = [$((stringify!($field), self.$field.as_deref())),*];
                Settings::load(self.config.as_deref(), &flags, Self::KEYS)
            }
        }
    };
}

keyed_args!(
    /// Finite-difference check of adapter gradients on random instances.
    GradcheckArgs {
        /// Comma-separated adapter kinds [default: lora,sbora-fa,sbora-fb]
        methods,
        /// Instances per kind [default: 100]
        n,
        /// Output dimension [default: 8]
        d,
        /// Input dimension [default: 8]
        k,
        /// Adapter rank [default: 2]
        r,
        /// Rows per input batch [default: 4]
        batch,
        /// Central-difference step [default: 1e-5]
        eps,
        /// Maximum relative error [default: 1e-4]
        tol,
        /// [default: 0]
        seed,
    }
);

keyed_args!(
    /// Train one adapter on a synthetic regression task.
    TrainArgs {
        /// lora, sbora-fa or sbora-fb [default: sbora-fa]
        method,
        /// columns, rows or dense [default: columns]
        task,
        /// matched, mismatched or random [default: matched]
        basis,
        /// [default: 8]
        d,
        /// [default: 8]
        k,
        /// [default: 2]
        r,
        /// Seeds task, initialization, basis draw and minibatches [default: 0]
        seed,
        /// [default: 2000]
        steps,
        /// [default: 32]
        batch_size,
        /// [default: 0.01]
        lr,
        /// sgd or adam [default: adam]
        optimizer,
        /// [default: 0.9]
        beta1,
        /// [default: 0.999]
        beta2,
        /// [default: 1e-8]
        adam_eps,
        /// constant or linear [default: constant]
        schedule,
        /// Target noise standard deviation [default: 0]
        noise,
        /// 32 or 64 [default: 64]
        precision,
        /// LoRA scale numerator; scale = alpha / r
        alpha,
        /// Train over an NF4-quantized base with this block size
        quant_block,
        /// Fresh samples for the Monte-Carlo evaluation [default: 4096]
        eval_samples,
        /// Output directory (required)
        out,
    }
);

keyed_args!(
    /// Sweep analytic and instrumented costs over a (method, d, k, r) grid.
    BenchArgs {
        /// Comma-separated adapter kinds [default: lora,sbora-fa,sbora-fb]
        methods,
        /// Grid axis, e.g. `1..16` or `4,8` [default: 1..16]
        d,
        /// [default: 1..16]
        k,
        /// [default: 1..16]
        r,
        /// Write the CSV here and print a JSON summary instead
        out,
    }
);

keyed_args!(
    /// Merge adapter checkpoints into a base weight.
    MergeArgs {
        /// Base weight checkpoint (required)
        base,
        /// Comma-separated adapter checkpoints
        adapters,
        /// Comma-separated weights, one per adapter [default: all 1]
        lambdas,
        /// Merged weight output path (required)
        out,
    }
);

keyed_args!(
    /// NF4-quantize a base weight and report roundtrip error.
    QuantizeArgs {
        /// Base weight checkpoint; a seeded random matrix if absent
        input,
        /// Rows of the random matrix [default: 64]
        d,
        /// Columns of the random matrix [default: 64]
        k,
        /// [default: 0]
        seed,
        /// [default: 64]
        block_size,
        /// Quantized output path (required)
        out,
    }
);

#[derive(Debug, Parser)]
#[command(name = "sbora", version, about = "Standard-basis low-rank adapter experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    Gradcheck(GradcheckArgs),
    Train(TrainArgs),
    Bench(BenchArgs),
    Merge(MergeArgs),
    Quantize(QuantizeArgs),
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{text}");
                return EXIT_OK;
            }
            let _ = write!(err, "{text}");
            return EXIT_USAGE;
        }
    };
    let result = match &cli.command {
        Command::Gradcheck(a) => a.settings().and_then(|s| commands::gradcheck(s, out)),
        Command::Train(a) => a.settings().and_then(|s| commands::train(s, out)),
        Command::Bench(a) => a.settings().and_then(|s| commands::bench(s, out)),
        Command::Merge(a) => a.settings().and_then(|s| commands::merge(s, out)),
        Command::Quantize(a) => a.settings().and_then(|s| commands::quantize(s, out)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
