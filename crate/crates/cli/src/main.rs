//! `prefixlab`: reproducible command-line runs of the conditioning pipeline.
//!
//! Every subcommand reads a TOML run configuration (`--config`, optional),
//! applies flag overrides, writes its outputs plus `manifest.json` under
//! `--out`, and prints one JSON summary line on stdout. Failures print one
//! JSON error line on stderr and exit with 2 (configuration), 3 (empty
//! result) or 4 (contract violation).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prefixlab::Error;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: 2, kind: "config", message: message.into() }
    }

    pub fn empty(message: impl Into<String>) -> Self {
        CliError { code: 3, kind: "empty_result", message: message.into() }
    }

    pub fn contract(message: impl Into<String>) -> Self {
        CliError { code: 4, kind: "contract_violation", message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::InvalidParameter(_) | Error::Io(_) => CliError::config(message),
            Error::EmptyResult(_) | Error::BandUnreachable { .. } => CliError::empty(message),
            Error::IllegalAction { .. }
            | Error::IllegalPrefix(_)
            | Error::GraphMismatch { .. }
            | Error::Degenerate(_)
            | Error::Malformed(_)
            | Error::Json(_) => CliError::contract(message),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "prefixlab", version, about = "Failure-prefix conditioning for GRPO on a graph-navigation world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; built-in defaults apply to anything it omits.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Rollout worker threads; results do not depend on this value [default: all cores].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Generic override `section.key=value` (TOML value), applied after the file. Repeatable.
    #[arg(long = "set", value_parser = config::split_assignment)]
    pub set: Vec<(String, String)>,
}

#[derive(Args, Debug, Clone)]
pub struct Seeded {
    /// Run seed; every sampled quantity derives from it.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a world and enumerate its questions.
    MakeWorld {
        #[command(flatten)]
        common: Common,
        /// Node count [default: 100].
        #[arg(long)]
        node_count: Option<usize>,
        /// Out-degree of every node [default: 6].
        #[arg(long)]
        out_degree: Option<usize>,
        /// Action budget H [default: 6].
        #[arg(long)]
        budget: Option<usize>,
        /// Graph seed [default: 7].
        #[arg(long)]
        world_seed: Option<u64>,
    },
    /// Split questions and pretrain a base policy into the saturation band.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        #[arg(long)]
        world: PathBuf,
    },
    /// Scan questions for saturation at the training temperature.
    Scan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        /// Saturation band, `c/n` or `low..high` [default: 31/32].
        #[arg(long)]
        band: Option<String>,
        /// Rollouts per question [default: 32].
        #[arg(long)]
        n: Option<usize>,
    },
    /// Build the prefix-conditioned dataset from saturation scans.
    BuildDataset {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// JSONL of saturation scans; only in-band scans are used.
        #[arg(long)]
        scans: PathBuf,
        /// Target prefix-conditioned accuracy [default: 0.5].
        #[arg(long)]
        tau: Option<f64>,
        /// Rollouts per candidate prefix [default: 32].
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Run GRPO on a conditioned dataset or on plain questions.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        #[arg(long)]
        world: PathBuf,
        /// Starting checkpoint.
        #[arg(long)]
        policy: PathBuf,
        /// Conditioned dataset (JSONL records with prefixes).
        #[arg(long, conflicts_with = "questions", required_unless_present = "questions")]
        dataset: Option<PathBuf>,
        /// Plain questions (JSONL), trained without prefixes.
        #[arg(long)]
        questions: Option<PathBuf>,
        /// Questions evaluated every `eval.every` steps into `curve.csv`.
        #[arg(long)]
        eval_questions: Option<PathBuf>,
        /// Gradient steps [default: 200].
        #[arg(long)]
        steps: Option<usize>,
        /// Learning rate [default: 30].
        #[arg(long)]
        lr: Option<f64>,
        /// Global step of the starting checkpoint, when resuming.
        #[arg(long, default_value_t = 0)]
        start_step: usize,
        /// Checkpoint cadence in steps [default: eval.every].
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// pass@k evaluation, optionally swept over smaller budgets.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        /// Samples per question [default: eval.n].
        #[arg(long)]
        n: Option<usize>,
        /// Sampling temperature [default: 0.6].
        #[arg(long)]
        temperature: Option<f64>,
        /// Comma-separated budgets for a budget sweep.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<usize>,
    },
    /// Recovery curves from failure or success prefixes.
    Recovery {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        #[arg(long)]
        world: PathBuf,
        /// One or more checkpoints; questions must qualify under all of them.
        #[arg(long, required = true)]
        policy: Vec<PathBuf>,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
    },
    /// Re-harvest failures from a policy and rebuild the conditioned dataset.
    Refresh {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        /// Harvest attempts per question [default: 128].
        #[arg(long)]
        max_attempts: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// End-to-end comparisons.
    Experiment {
        #[arg(value_enum)]
        which: ExperimentArg,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        seeded: Seeded,
        /// Number of replicate seeds [default: 3].
        #[arg(long)]
        seeds: Option<usize>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Failure,
    Success,
    Both,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentArg {
    Table1,
    Tau,
    Refresh,
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    use commands as c;
    match cli.command {
        Command::MakeWorld { common, node_count, out_degree, budget, world_seed } => {
            c::make_world(&common, node_count, out_degree, budget, world_seed)
        }
        Command::Pretrain { common, seeded, world } => c::pretrain(&common, seeded.seed, &world),
        Command::Scan { common, seeded, world, policy, questions, band, n } => {
            c::scan(&common, seeded.seed, &world, &policy, &questions, band.as_deref(), n)
        }
        Command::BuildDataset { common, seeded, world, policy, scans, tau, rollouts } => {
            c::build_dataset(&common, seeded.seed, &world, &policy, &scans, tau, rollouts)
        }
        Command::Train {
            common,
            seeded,
            world,
            policy,
            dataset,
            questions,
            eval_questions,
            steps,
            lr,
            start_step,
            checkpoint_every,
        } => c::train(
            &common,
            seeded.seed,
            c::TrainArgs {
                world,
                policy,
                dataset,
                questions,
                eval_questions,
                steps,
                lr,
                start_step,
                checkpoint_every,
            },
        ),
        Command::Evaluate { common, seeded, world, policy, questions, n, temperature, budgets } => {
            c::evaluate(&common, seeded.seed, &world, &policy, &questions, n, temperature, &budgets)
        }
        Command::Recovery { common, seeded, world, policy, questions, mode } => {
            c::recovery(&common, seeded.seed, &world, &policy, &questions, mode)
        }
        Command::Refresh { common, seeded, world, policy, questions, max_attempts, tau } => {
            c::refresh(&common, seeded.seed, &world, &policy, &questions, max_attempts, tau)
        }
        Command::Experiment { which, common, seeded, seeds } => c::experiment(&common, seeded.seed, which, seeds),
    }
}

fn fail(e: CliError) -> ExitCode {
    let record = serde_json::json!({ "error": e.kind, "exit_code": e.code, "message": e.message });
    eprintln!("{record}");
    ExitCode::from(e.code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let detail = e.to_string();
            let message: Vec<&str> = detail
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            return fail(CliError::config(message.join(" ").trim_start_matches("error: ").to_string()));
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}
