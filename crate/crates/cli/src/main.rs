//! `hopeval` — deterministic benchmark pipeline for knowledge editing on
//! multi-hop questions.
//!
//! Commands: `sample` fact chains from a graph, attach `edit`s to make
//! benchmark instances, `eval`uate editors over batch sizes, run one
//! `mello` question against an edit memory, print corpus `stats`, and
//! `diff` two graph snapshots into an edit list.
//!
//! Exit codes: 0 success, 1 evaluation-time error, 2 configuration or
//! input error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{FileConfig, Overrides, RunConfig};

/// A failure carrying its exit code.
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_error(message: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: message.into(),
    }
}

pub fn eval_error(message: impl Into<String>) -> CliError {
    CliError {
        code: 1,
        message: message.into(),
    }
}

#[derive(Parser)]
#[command(
    name = "hopeval",
    version,
    about = "Knowledge-editing benchmark pipeline: sample chains, attach edits, evaluate editors."
)]
struct Cli {
    /// JSON config file; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample constraint-checked, recallable fact chains from the graph.
    Sample,
    /// Attach edits to sampled chains, producing benchmark instances.
    Edit {
        /// Chain file written by `sample`.
        #[arg(long)]
        chains: PathBuf,
        /// Derive one edit per chain from a snapshot diff (needs --new-triples)
        /// instead of drawing counterfactuals.
        #[arg(long)]
        temporal: bool,
    },
    /// Evaluate the configured editor over the configured batch sizes.
    Eval {
        /// Instance file written by `edit`.
        #[arg(long)]
        instances: PathBuf,
    },
    /// Answer one question through the memory-of-edits loop, printing the
    /// step-by-step trace.
    Mello {
        /// The multi-hop question to answer.
        question: String,
        /// JSON list of edits forming the memory.
        #[arg(long)]
        memory: PathBuf,
    },
    /// Print the hop × edit-count composition of an instance file.
    Stats {
        /// Instance file written by `edit`.
        #[arg(long)]
        instances: PathBuf,
    },
    /// Diff two graph snapshots into an edit list.
    Diff {
        /// Restrict the diff to these relation ids (default: all).
        #[arg(long, value_delimiter = ',')]
        diff_relations: Vec<String>,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig::resolve(file, cli.overrides)?;
    match cli.command {
        Command::Sample => commands::cmd_sample(&cfg),
        Command::Edit { chains, temporal } => commands::cmd_edit(&cfg, &chains, temporal),
        Command::Eval { instances } => commands::cmd_eval(&cfg, &instances),
        Command::Mello { question, memory } => commands::cmd_mello(&cfg, &question, &memory),
        Command::Stats { instances } => commands::cmd_stats(&instances),
        Command::Diff { diff_relations } => commands::cmd_diff(&cfg, &diff_relations),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
