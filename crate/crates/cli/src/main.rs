//! `optreward`: file-mediated stages for generating, executing, voting on,
//! scoring and evaluating solver-code completions, plus the in-process toy loop.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optreward_core::exec::ExecMode;

#[derive(Debug, Parser)]
#[command(name = "optreward", version, about = "Reward, vote and evaluate generated optimization-solver code")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags accepted by every subcommand; they override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML config file; flags take precedence over its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Problems JSONL: {"id", "question", "ground_truth", "tags"} per line.
    #[arg(long, global = true, value_name = "PATH")]
    pub problems: Option<PathBuf>,
    /// Candidates JSONL: {"problem_id", "slot", "text"} per line.
    #[arg(long, global = true, value_name = "PATH")]
    pub candidates: Option<PathBuf>,
    /// Output artifact of the stage.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Absolute tolerance for comparing objective values.
    #[arg(long, global = true, value_name = "X")]
    pub tol_abs: Option<f64>,
    /// Relative tolerance for comparing objective values.
    #[arg(long, global = true, value_name = "X")]
    pub tol_rel: Option<f64>,
    /// Candidates per problem (G).
    #[arg(long, global = true, value_name = "G")]
    pub group_size: Option<usize>,
    /// Concurrent executions or requests.
    #[arg(long, global = true, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Execution mode: run the sandbox runner, or only check the code statically.
    #[arg(long, global = true, value_name = "dynamic|static")]
    pub mode: Option<ExecMode>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample G completions per problem from a chat-completions endpoint.
    Generate(GenerateArgs),
    /// Extract and run each candidate's code block; writes exec JSONL.
    Exec(ExecArgs),
    /// Majority-vote each group's objective values; writes vote JSONL.
    Vote(StageInputs),
    /// Score every candidate against its group's vote; writes score JSONL.
    Score(ScoreArgs),
    /// Vote, score and standardize advantages in one pass; writes annotated-group JSONL.
    Annotate(AnnotateArgs),
    /// Accuracy and Pass@k against ground truth; prints a table and writes report JSON.
    Eval(EvalArgs),
    /// Run the toy supervised warm-up and policy optimization loop; writes a metrics CSV.
    Toy(ToyArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Chat-completions URL.
    #[arg(long, value_name = "URL")]
    pub endpoint_url: Option<String>,
    /// Model name sent with each request.
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, value_name = "VAR")]
    pub api_key_env: Option<String>,
    /// Sampling temperature.
    #[arg(long, value_name = "T")]
    pub temperature: Option<f64>,
    /// Progress journal used to resume interrupted runs [default: <out>.progress.jsonl].
    #[arg(long, value_name = "PATH")]
    pub journal: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExecArgs {
    /// Sandbox runner executable (dynamic mode).
    #[arg(long, value_name = "PATH")]
    pub runner: Option<PathBuf>,
    /// Extra argument for the runner, placed before the limit flags; repeatable.
    #[arg(long = "runner-arg", value_name = "ARG", allow_hyphen_values = true)]
    pub runner_args: Vec<String>,
    /// Wall-clock limit per candidate in seconds.
    #[arg(long, value_name = "S")]
    pub time_limit_s: Option<f64>,
    /// Address-space limit per candidate in MiB.
    #[arg(long, value_name = "MB")]
    pub memory_limit_mb: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StageInputs {
    /// Exec JSONL produced by `exec`.
    #[arg(long, value_name = "PATH")]
    pub exec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub inputs: StageInputs,
    /// Vote JSONL produced by `vote`.
    #[arg(long, value_name = "PATH")]
    pub votes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[command(flatten)]
    pub inputs: StageInputs,
    /// Also write majority-vote pseudo-labels to this JSONL file.
    #[arg(long, value_name = "PATH")]
    pub pseudo_labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub inputs: StageInputs,
    /// Vote JSONL; consensus is recomputed from exec results when absent.
    #[arg(long, value_name = "PATH")]
    pub votes: Option<PathBuf>,
    /// Comma-separated Pass@k cut-offs [default: powers of two up to the smallest group].
    #[arg(long, value_name = "K,...", value_delimiter = ',')]
    pub k: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Optimization steps after the step-0 probe.
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    /// KL penalty weight.
    #[arg(long, value_name = "X")]
    pub beta: Option<f64>,
    /// Clipping range of the probability ratio.
    #[arg(long, value_name = "X")]
    pub epsilon: Option<f64>,
    /// Gradient-ascent step size.
    #[arg(long, value_name = "X")]
    pub lr: Option<f64>,
    /// Comma-separated training-subset sizes for a data-scale sweep.
    #[arg(long, value_name = "N,...", value_delimiter = ',')]
    pub sweep: Vec<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
