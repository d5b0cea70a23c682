mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taskforge::config::BackendKind;
use taskforge::MetricName;

/// Exit status for a run that completed but failed (including after repairs).
pub const EXIT_FAILURE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_BACKEND: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "taskforge",
    version,
    about = "Task description → instructions → program → score"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Model backend.
    #[arg(long, global = true, value_parser = parse_backend)]
    pub backend: Option<BackendKind>,
    /// Cassette directory for the replay and record backends.
    #[arg(long, global = true, value_name = "DIR")]
    pub cassettes: Option<PathBuf>,
    /// Fixture file for the mock backend.
    #[arg(long, global = true, value_name = "PATH")]
    pub mock_fixtures: Option<PathBuf>,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long, global = true, value_name = "DIR")]
    pub templates: Option<PathBuf>,
    /// Output root; runs land in `<out>/<task_id>/<timestamp>/`.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Worker threads for batch commands and multi-task pipelines.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Interpreter argv for executing programs, e.g. `--interpreter sh`.
    #[arg(long, global = true, num_args = 1.., value_name = "ARG")]
    pub interpreter: Option<Vec<String>>,
    /// Execution timeout in seconds.
    #[arg(long, global = true)]
    pub timeout: Option<f64>,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: taskforge::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a competition corpus and keep the top solutions per task.
    Ingest {
        corpus: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        /// Write the selected corpus here (JSONL).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Summarize every selected solution into a three-section instruction.
    Extract {
        corpus: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build the fine-tune dataset and hyperparameter file.
    ExportFinetune {
        corpus: PathBuf,
        /// Output of `extract`.
        instructions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        finetune_config: Option<PathBuf>,
    },
    /// Generate the three rank-conditioned candidates for a task.
    Infer {
        task: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the critic/decider dialogue over saved candidates.
    Refine {
        task: PathBuf,
        candidates: PathBuf,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pick one of the saved candidates by hand.
    Select {
        candidates: PathBuf,
        #[command(flatten)]
        selection: SelectionArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate stage code and integrate it into one program.
    Synth {
        task: PathBuf,
        /// Instruction as JSON or as sectioned text.
        instruction: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run a program in a fresh workspace.
    Exec {
        program: PathBuf,
        #[arg(long)]
        task: PathBuf,
        /// Directory holding the task's data files (default: the task file's directory).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a prediction file and, with a leaderboard, its percentile.
    Eval {
        #[arg(long, value_parser = parse_metric)]
        metric: MetricName,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        id_column: Option<String>,
        /// JSON array of public leaderboard scores.
        #[arg(long)]
        leaderboard: Option<PathBuf>,
    },
    /// List the cassettes in the cassette directory.
    ReplayList,
    /// Run one or more tasks end to end.
    Pipeline {
        #[arg(required = true)]
        tasks: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Ground truth for scoring (single task only).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        id_column: Option<String>,
        #[command(flatten)]
        selection: SelectionArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SelectionArgs {
    /// Choose the instruction by hand instead of refinement.
    #[arg(long)]
    pub interactive: bool,
    /// Scripted answer for `--interactive` (required when stdin is not a terminal).
    #[arg(long, value_name = "N", requires = "interactive")]
    pub choice: Option<usize>,
}

fn parse_metric(s: &str) -> Result<MetricName, String> {
    MetricName::from_label(s).ok_or_else(|| format!("unknown metric `{s}`"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match commands::run(&cli.global, cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code_for(&e))
        }
    }
}
