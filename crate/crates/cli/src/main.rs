//! `acr`: corpus generation, training, evaluation and workspace analytics.

mod commands;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use acr_core::data::Split;

#[derive(Parser)]
#[command(name = "acr", about = "Attention cube regression on two-view depth data", disable_version_flag = true)]
struct Cli {
    /// Print the program and file-format versions.
    #[arg(short = 'V', long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus from the [data] section of a config.
    GenData {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoints plus an epoch log.
    Train {
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split and analyse the workspace per round.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
        /// Use the labels as predictions (pipeline self-check).
        #[arg(long)]
        ground_truth: bool,
    },
    /// Workspace areas and Jaccard similarities from trajectory CSV files.
    Analyze {
        /// A trajectory CSV, or an eval output directory.
        input: PathBuf,
        /// Reference trajectory to compare against.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Analytics settings; defaults apply without one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

fn version_text() -> String {
    use acr_core::formats::*;
    format!(
        "acr {}\ncheckpoint format {CHECKPOINT_VERSION}\ntensor format {TENSOR_FORMAT_VERSION}\ncorpus manifest {MANIFEST_VERSION}",
        env!("CARGO_PKG_VERSION")
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.version {
        println!("{}", version_text());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; see `acr --help`");
        return ExitCode::from(2);
    };
    let result = match command {
        Command::GenData { config, seed, out } => commands::gen_data(&config, seed, &out),
        Command::Train { config, data, seed, resume, out } => commands::train(&config, &data, seed, resume.as_deref(), &out),
        Command::Eval { checkpoint, data, split, out, ground_truth } => {
            commands::eval(&checkpoint, &data, split.into(), &out, ground_truth)
        }
        Command::Analyze { input, truth, config, out } => commands::analyze(&input, truth.as_deref(), config.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
