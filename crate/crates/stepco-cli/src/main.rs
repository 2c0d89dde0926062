use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stepco_cli::commands::{
    cmd_annotate, cmd_compare, cmd_evaluate, cmd_run, cmd_simulate,
    AnnotateOptions, CompareOptions, EvaluateOptions, SimulateOptions,
};
use stepco_cli::config::{ExperimentConfig, Method, Overrides};

/// Verify-then-revise reasoning experiments.
#[derive(Debug, Parser)]
#[command(name = "stepco", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute the configured method over a question set and write traces,
    /// a manifest, and a metric report.
    Run {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Expand a binary step tree per question and emit labeled prefixes for
    /// verifier training.
    Annotate {
        #[command(flatten)]
        overrides: Overrides,
        /// Also write the full trees as trees.jsonl.
        #[arg(long)]
        emit_trees: bool,
    },
    /// Benchmark methods against the synthetic environment across a
    /// threshold sweep.
    Simulate {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated thresholds to sweep (defaults to the configured θ).
        #[arg(long, value_delimiter = ',')]
        theta_sweep: Vec<f64>,
        /// Comma-separated methods to benchmark (defaults to
        /// stepco,best_of_n).
        #[arg(long, value_delimiter = ',', value_enum)]
        methods: Vec<Method>,
        /// Write a trace file per (method, θ) cell.
        #[arg(long)]
        emit_traces: bool,
    },
    /// Re-score a saved trace file against a dataset's gold answers.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
        /// Trace file produced by `run` or `simulate --emit-traces`.
        #[arg(long)]
        traces: PathBuf,
        /// Metadata key to break the report down by.
        #[arg(long)]
        slice_by: Option<String>,
        /// Write iteration- and token-vs-accuracy CSV series.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Join two trace sets into a transition matrix and token reduction.
    Compare {
        #[command(flatten)]
        overrides: Overrides,
        /// Baseline trace file.
        #[arg(long)]
        baseline: PathBuf,
        /// Candidate trace file.
        #[arg(long)]
        ours: PathBuf,
    },
}

fn dispatch(cli: Cli) -> stepco::Result<()> {
    match cli.command {
        Command::Run { overrides } => {
            let cfg = ExperimentConfig::resolve(&overrides)?;
            cmd_run(&cfg)
        }
        Command::Annotate { overrides, emit_trees } => {
            let cfg = ExperimentConfig::resolve(&overrides)?;
            cmd_annotate(&cfg, &AnnotateOptions { emit_trees })
        }
        Command::Simulate { overrides, theta_sweep, methods, emit_traces } => {
            let cfg = ExperimentConfig::resolve(&overrides)?;
            cmd_simulate(
                &cfg,
                &SimulateOptions { theta_sweep, methods, emit_traces },
            )
        }
        Command::Evaluate {
            overrides,
            traces,
            slice_by,
            emit_plot_data,
        } => {
            let cfg = ExperimentConfig::resolve(&overrides)?;
            let dataset = cfg.dataset.clone().ok_or_else(|| {
                stepco::Error::ConfigInvalid(
                    "evaluate needs --dataset for the gold answers".into(),
                )
            })?;
            cmd_evaluate(
                &cfg,
                &EvaluateOptions {
                    traces,
                    dataset,
                    slice_by,
                    emit_plot_data,
                },
            )
        }
        Command::Compare { overrides, baseline, ours } => {
            let cfg = ExperimentConfig::resolve(&overrides)?;
            cmd_compare(&cfg, &CompareOptions { baseline, ours })
        }
    }
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE by default, which turns `stepco ... | head`
    // into a panic on the first print after the pipe closes. Restore the
    // default disposition so a closed pipe ends the process quietly.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    // clap exits with code 2 on usage errors itself, which matches the
    // contract for invalid configuration.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ stepco::Error::ConfigInvalid(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
