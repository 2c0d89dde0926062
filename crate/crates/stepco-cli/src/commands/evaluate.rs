//! `evaluate`: re-score a saved trace file against a dataset's gold answers.
//! Produces the same report shape as `run`, plus optional CSV series for
//! plotting accuracy against iteration count and token spend.

use std::collections::BTreeMap;
use std::path::PathBuf;

use stepco::error::{Error, Result};
use stepco::path::AnswerKey;

use crate::config::ExperimentConfig;
use crate::trace::{
    answer_hits, read_jsonl, render_report_table, write_bytes,
    write_json_pretty, Manifest, TraceRecord,
};

use super::ensure_output_dir;

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub traces: PathBuf,
    pub dataset: PathBuf,
    /// Metadata key to break the report down by.
    pub slice_by: Option<String>,
    /// Write `iterations_vs_accuracy.csv` and `tokens_vs_accuracy.csv`.
    pub emit_plot_data: bool,
}

/// The answer a run would have returned had it stopped after round `t`
/// (t = 0 is the initial path).
fn answer_at(trace: &TraceRecord, t: usize) -> &Option<AnswerKey> {
    if t == 0 {
        &trace.initial_answer
    } else if trace.iterations.is_empty() {
        &trace.final_answer
    } else {
        let idx = t.min(trace.iterations.len()) - 1;
        &trace.iterations[idx].answer_after
    }
}

/// Cumulative token spend through round `t`: the initial generation plus
/// the first `t` rounds.
fn tokens_at(trace: &TraceRecord, t: usize) -> u64 {
    let per_round: u64 = trace
        .iterations
        .iter()
        .take(t)
        .map(|it| it.tokens.total_tokens())
        .sum();
    let all_rounds: u64 = trace
        .iterations
        .iter()
        .map(|it| it.tokens.total_tokens())
        .sum();
    let initial = trace.tokens.total_tokens().saturating_sub(all_rounds);
    initial + per_round
}

fn plot_series(
    traces: &[TraceRecord],
    golds: &BTreeMap<String, (AnswerKey, BTreeMap<String, String>)>,
) -> (String, String) {
    let max_t =
        traces.iter().map(|r| r.iterations.len()).max().unwrap_or(0);
    let mut by_iterations = String::from("iterations,accuracy\n");
    let mut by_tokens = String::from("mean_tokens,accuracy\n");
    for t in 0..=max_t {
        let mut correct = 0usize;
        let mut token_sum = 0u64;
        for trace in traces {
            let gold = &golds[&trace.question_id].0;
            correct += answer_hits(answer_at(trace, t), gold) as usize;
            token_sum += tokens_at(trace, t);
        }
        let accuracy = correct as f64 / traces.len() as f64;
        let mean_tokens = token_sum as f64 / traces.len() as f64;
        by_iterations.push_str(&format!("{t},{accuracy:.6}\n"));
        by_tokens.push_str(&format!("{mean_tokens:.2},{accuracy:.6}\n"));
    }
    (by_iterations, by_tokens)
}

pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    options: &EvaluateOptions,
) -> Result<()> {
    let traces: Vec<TraceRecord> = read_jsonl(&options.traces)?;
    if traces.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let questions = stepco::dataset::load_questions_jsonl(&options.dataset)?;
    let golds: BTreeMap<String, (AnswerKey, BTreeMap<String, String>)> =
        questions
            .iter()
            .map(|q| {
                (q.id.clone(), (q.gold_answer.clone(), q.metadata.clone()))
            })
            .collect();

    let rows = crate::trace::eval_rows(&traces, &golds)?;
    let metrics =
        stepco::evaluation::metric_report(&rows, options.slice_by.as_deref())?;
    let gold_keys: Vec<AnswerKey> = traces
        .iter()
        .map(|r| golds[&r.question_id].0.clone())
        .collect();
    let initial: Vec<Option<AnswerKey>> =
        traces.iter().map(|r| r.initial_answer.clone()).collect();
    let finals: Vec<Option<AnswerKey>> =
        traces.iter().map(|r| r.final_answer.clone()).collect();
    let transitions =
        stepco::evaluation::transition_matrix(&initial, &finals, &gold_keys)?;
    let ledgers: Vec<_> = traces.iter().map(|r| r.tokens).collect();
    let tokens = stepco::evaluation::TokenStats::from_ledgers(&ledgers, None)?;
    let report =
        crate::trace::RunReport { metrics, transitions, tokens };

    ensure_output_dir(cfg)?;
    write_json_pretty(&cfg.output_dir.join("report.json"), &report)?;
    let table = render_report_table(&report);
    write_bytes(&cfg.output_dir.join("report.txt"), table.as_bytes())?;

    if options.emit_plot_data {
        let (by_iterations, by_tokens) = plot_series(&traces, &golds);
        write_bytes(
            &cfg.output_dir.join("iterations_vs_accuracy.csv"),
            by_iterations.as_bytes(),
        )?;
        write_bytes(
            &cfg.output_dir.join("tokens_vs_accuracy.csv"),
            by_tokens.as_bytes(),
        )?;
    }

    let manifest = Manifest::new(
        "evaluate",
        cfg.seed,
        crate::sha256_hex(&std::fs::read(&options.traces).map_err(|e| {
            Error::DatasetUnreadable(format!(
                "{}: {e}",
                options.traces.display()
            ))
        })?),
        traces.len(),
        0,
    );
    write_json_pretty(&cfg.output_dir.join("manifest.json"), &manifest)?;

    print!("{table}");
    Ok(())
}
