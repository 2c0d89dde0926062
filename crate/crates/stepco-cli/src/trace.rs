//! On-disk artifacts: trace records (JSONL, one line per question, ordered
//! by question id), the run manifest, and the metric report. Everything is
//! line-oriented UTF-8 and free of timestamps so identical inputs produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stepco::correction::{
    IterationTrace, RunResult, Termination, TokenLedger,
};
use stepco::error::{Error, Result};
use stepco::evaluation::{MetricReport, TokenStats, TransitionMatrix};
use stepco::path::{extract_final_answer, AnswerKey, AnswerKind};

use crate::config::Method;

/// One verification/revision round, slimmed down for storage: the flagged
/// step, its score, and the answer the path held after the round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based round number.
    pub t: u32,
    /// First step scored this round (`k` of the previous round, or 1).
    pub scored_from: usize,
    /// Absolute index of the flagged step, if any.
    pub first_error: Option<usize>,
    /// Score of the flagged step.
    pub p_k: Option<f64>,
    /// Whether a revision was requested this round.
    pub revised: bool,
    /// Answer the path held once the round finished (what the run would
    /// return had it stopped here).
    pub answer_after: Option<AnswerKey>,
    pub tokens: TokenLedger,
}

/// One question's outcome, as stored in `traces.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub question_id: String,
    pub method: Method,
    pub initial_answer: Option<AnswerKey>,
    pub final_answer: Option<AnswerKey>,
    pub initial_correct: bool,
    pub final_correct: bool,
    /// Present for the iterative methods only.
    pub terminated_by: Option<Termination>,
    pub iterations: Vec<IterationRecord>,
    pub tokens: TokenLedger,
    /// Failure message when the question could not be completed; such rows
    /// count as incorrect but keep their token spend.
    pub error: Option<String>,
}

fn slim_iteration(trace: &IterationTrace, kind: AnswerKind) -> IterationRecord {
    let p_k = trace.report.first_error.map(|k| {
        trace.report.probabilities[k - trace.report.scored_from]
    });
    let after_path = trace.path_after.as_ref().unwrap_or(&trace.path_before);
    IterationRecord {
        t: trace.t,
        scored_from: trace.report.scored_from,
        first_error: trace.report.first_error,
        p_k,
        revised: trace.revision_prompt.is_some(),
        answer_after: extract_final_answer(after_path, kind).ok(),
        tokens: trace.tokens,
    }
}

impl TraceRecord {
    /// Flatten a completed iterative run against its gold answer.
    pub fn from_run(
        run: &RunResult,
        method: Method,
        gold: &AnswerKey,
    ) -> TraceRecord {
        let initial_answer =
            extract_final_answer(&run.initial_path, gold.kind).ok();
        let final_answer = run.final_answer.clone();
        TraceRecord {
            question_id: run.question_id.clone(),
            method,
            initial_correct: answer_hits(&initial_answer, gold),
            final_correct: answer_hits(&final_answer, gold),
            initial_answer,
            final_answer,
            terminated_by: Some(run.terminated_by),
            iterations: run
                .iterations
                .iter()
                .map(|it| slim_iteration(it, gold.kind))
                .collect(),
            tokens: run.total_tokens,
            error: None,
        }
    }

    /// Record for a single-shot method (one answer, no rounds).
    pub fn from_answer(
        question_id: &str,
        method: Method,
        answer: Option<AnswerKey>,
        tokens: TokenLedger,
        gold: &AnswerKey,
    ) -> TraceRecord {
        let correct = answer_hits(&answer, gold);
        TraceRecord {
            question_id: question_id.to_string(),
            method,
            initial_answer: answer.clone(),
            final_answer: answer,
            initial_correct: correct,
            final_correct: correct,
            terminated_by: None,
            iterations: Vec::new(),
            tokens,
            error: None,
        }
    }

    /// Record for a question that failed outright.
    pub fn from_error(
        question_id: &str,
        method: Method,
        message: String,
        partial: &[IterationTrace],
        tokens: TokenLedger,
        kind: AnswerKind,
    ) -> TraceRecord {
        TraceRecord {
            question_id: question_id.to_string(),
            method,
            initial_answer: None,
            final_answer: None,
            initial_correct: false,
            final_correct: false,
            terminated_by: None,
            iterations: partial
                .iter()
                .map(|it| slim_iteration(it, kind))
                .collect(),
            tokens,
            error: Some(message),
        }
    }
}

/// Correctness of an optional answer against one gold key; a missing or
/// differently-kinded answer is simply wrong.
pub fn answer_hits(answer: &Option<AnswerKey>, gold: &AnswerKey) -> bool {
    match answer {
        Some(a) => stepco::path::answers_equal(a, gold).unwrap_or(false),
        None => false,
    }
}

/// Identifies a finished run: what produced it and over how many questions.
/// Deliberately carries no timestamps or host details so that reruns of the
/// same config are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub questions: usize,
    pub failures: usize,
}

impl Manifest {
    pub fn new(
        command: &str,
        seed: u64,
        config_sha256: String,
        questions: usize,
        failures: usize,
    ) -> Manifest {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256,
            questions,
            failures,
        }
    }
}

/// Everything the `run` and `evaluate` commands report about a trace set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metrics: MetricReport,
    pub transitions: TransitionMatrix,
    pub tokens: TokenStats,
}

/// Render the report as an aligned two-column text table.
pub fn render_report_table(report: &RunReport) -> String {
    let mut rows: Vec<(String, String)> = vec![
        ("questions".into(), report.metrics.n.to_string()),
        ("accuracy".into(), format!("{:.4}", report.metrics.accuracy)),
    ];
    if let Some(em) = report.metrics.em {
        rows.push(("exact_match".into(), format!("{em:.4}")));
    }
    if let Some(f1) = report.metrics.f1 {
        rows.push(("f1".into(), format!("{f1:.4}")));
    }
    let t = &report.transitions;
    rows.push(("initial_accuracy".into(), format!("{:.4}", t.initial_accuracy())));
    rows.push(("final_accuracy".into(), format!("{:.4}", t.final_accuracy())));
    rows.push(("correct_to_correct".into(), format!("{:.4}", t.cc)));
    rows.push(("incorrect_to_correct".into(), format!("{:.4}", t.ic)));
    rows.push(("correct_to_incorrect".into(), format!("{:.4}", t.ci)));
    rows.push(("incorrect_to_incorrect".into(), format!("{:.4}", t.ii)));
    rows.push(("total_tokens".into(), report.tokens.total.to_string()));
    rows.push((
        "mean_tokens_per_question".into(),
        format!("{:.2}", report.tokens.mean_per_question),
    ));
    rows.push((
        "generator_calls".into(),
        report.tokens.generator_calls.to_string(),
    ));
    rows.push(("scorer_calls".into(), report.tokens.scorer_calls.to_string()));
    if let Some(r) = report.tokens.reduction_vs_baseline {
        rows.push(("token_reduction_vs_baseline".into(), format!("{r:.4}")));
    }
    for (slice, sub) in &report.metrics.slices {
        rows.push((
            format!("accuracy[{slice}]"),
            format!("{:.4} (n={})", sub.accuracy, sub.n),
        ));
    }

    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        out.push_str(&format!("{k:<width$}  {v}\n"));
    }
    out
}

/// Write one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)
            .map_err(|e| Error::DatasetUnreadable(e.to_string()))?;
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

/// Read a JSONL file produced by [`write_jsonl`].
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::DatasetUnreadable(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| {
            Error::DatasetUnreadable(format!(
                "{} line {}: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::DatasetUnreadable(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| {
        Error::DatasetUnreadable(format!("cannot write {}: {e}", path.display()))
    })?;
    file.write_all(bytes).map_err(|e| {
        Error::DatasetUnreadable(format!("cannot write {}: {e}", path.display()))
    })
}

/// Evaluation rows for a trace set joined against gold answers.
pub fn eval_rows(
    traces: &[TraceRecord],
    golds: &BTreeMap<String, (AnswerKey, BTreeMap<String, String>)>,
) -> Result<Vec<stepco::evaluation::EvalRow>> {
    traces
        .iter()
        .map(|trace| {
            let (gold, metadata) =
                golds.get(&trace.question_id).ok_or_else(|| {
                    Error::DatasetUnreadable(format!(
                        "trace question {} is not in the dataset",
                        trace.question_id
                    ))
                })?;
            Ok(stepco::evaluation::EvalRow {
                pred: trace.final_answer.clone(),
                golds: vec![gold.clone()],
                metadata: metadata.clone(),
            })
        })
        .collect()
}
