//! `run`: execute the configured method over a question set and write
//! traces, a manifest, and a metric report.

use std::collections::BTreeMap;

use stepco::error::{Error, Result};
use stepco::evaluation::{metric_report, transition_matrix, TokenStats};
use stepco::path::AnswerKey;

use crate::backends::resolve;
use crate::config::ExperimentConfig;
use crate::trace::{
    eval_rows, render_report_table, write_json_pretty, write_jsonl, Manifest,
    RunReport, TraceRecord,
};

use super::{ensure_output_dir, execute_batch};

/// Build the report for a finished trace set (final answers against golds,
/// initial-vs-final transitions, token aggregates).
pub(crate) fn report_for(
    records: &[TraceRecord],
    golds: &BTreeMap<String, (AnswerKey, BTreeMap<String, String>)>,
) -> Result<RunReport> {
    let rows = eval_rows(records, golds)?;
    let metrics = metric_report(&rows, None)?;

    let gold_keys: Vec<AnswerKey> = records
        .iter()
        .map(|r| golds[&r.question_id].0.clone())
        .collect();
    let initial: Vec<Option<AnswerKey>> =
        records.iter().map(|r| r.initial_answer.clone()).collect();
    let finals: Vec<Option<AnswerKey>> =
        records.iter().map(|r| r.final_answer.clone()).collect();
    let transitions = transition_matrix(&initial, &finals, &gold_keys)?;

    let ledgers: Vec<_> = records.iter().map(|r| r.tokens).collect();
    let tokens = TokenStats::from_ledgers(&ledgers, None)?;

    Ok(RunReport { metrics, transitions, tokens })
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let resolved = resolve(cfg)?;
    if resolved.questions.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let (records, failures) = execute_batch(
        cfg,
        &resolved.generator,
        &resolved.scorer,
        &resolved.questions,
    )?;

    let golds: BTreeMap<String, (AnswerKey, BTreeMap<String, String>)> =
        resolved
            .questions
            .iter()
            .map(|q| {
                (q.id.clone(), (q.gold_answer.clone(), q.metadata.clone()))
            })
            .collect();
    let report = report_for(&records, &golds)?;

    ensure_output_dir(cfg)?;
    write_jsonl(&cfg.output_dir.join("traces.jsonl"), &records)?;
    write_json_pretty(&cfg.output_dir.join("report.json"), &report)?;
    let table = render_report_table(&report);
    crate::trace::write_bytes(
        &cfg.output_dir.join("report.txt"),
        table.as_bytes(),
    )?;
    let manifest = Manifest::new(
        "run",
        cfg.seed,
        cfg.sha256(),
        records.len(),
        failures,
    );
    write_json_pretty(&cfg.output_dir.join("manifest.json"), &manifest)?;

    print!("{table}");
    Ok(())
}
