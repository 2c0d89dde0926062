//! `compare`: join two trace sets over the same questions into an
//! initial→final style transition matrix (baseline as "initial", ours as
//! "final") and report the token reduction 1 − ours/baseline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use stepco::error::{Error, Result};
use stepco::evaluation::{TokenStats, TransitionMatrix};

use crate::config::ExperimentConfig;
use crate::trace::{read_jsonl, write_json_pretty, Manifest, TraceRecord};

use super::ensure_output_dir;

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub baseline: PathBuf,
    pub ours: PathBuf,
}

/// What `compare` writes: where the methods agree and disagree, and what
/// ours costs relative to the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub questions: usize,
    pub baseline_accuracy: f64,
    pub ours_accuracy: f64,
    /// cc/ic/ci/ii with the baseline in the "initial" role.
    pub transitions: TransitionMatrix,
    pub baseline_tokens: TokenStats,
    /// Includes `reduction_vs_baseline` = 1 − ours/baseline.
    pub ours_tokens: TokenStats,
    /// Generation calls, ours over baseline.
    pub generator_call_ratio: f64,
}

pub fn cmd_compare(
    cfg: &ExperimentConfig,
    options: &CompareOptions,
) -> Result<()> {
    let baseline: Vec<TraceRecord> = read_jsonl(&options.baseline)?;
    let ours: Vec<TraceRecord> = read_jsonl(&options.ours)?;
    if baseline.is_empty() || ours.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if baseline.len() != ours.len() {
        return Err(Error::LengthMismatch {
            left: baseline.len(),
            right: ours.len(),
        });
    }

    let by_id: BTreeMap<&str, &TraceRecord> =
        baseline.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let mut cc = 0usize;
    let mut ic = 0usize;
    let mut ci = 0usize;
    let mut ii = 0usize;
    for record in &ours {
        let base =
            by_id.get(record.question_id.as_str()).ok_or_else(|| {
                Error::DatasetUnreadable(format!(
                    "question {} is missing from the baseline traces",
                    record.question_id
                ))
            })?;
        match (base.final_correct, record.final_correct) {
            (true, true) => cc += 1,
            (false, true) => ic += 1,
            (true, false) => ci += 1,
            (false, false) => ii += 1,
        }
    }
    let n = ours.len() as f64;
    let transitions = TransitionMatrix {
        cc: cc as f64 / n,
        ic: ic as f64 / n,
        ci: ci as f64 / n,
        ii: ii as f64 / n,
    };

    let baseline_ledgers: Vec<_> = baseline.iter().map(|r| r.tokens).collect();
    let baseline_tokens = TokenStats::from_ledgers(&baseline_ledgers, None)?;
    let ours_ledgers: Vec<_> = ours.iter().map(|r| r.tokens).collect();
    let ours_tokens =
        TokenStats::from_ledgers(&ours_ledgers, Some(&baseline_tokens))?;
    let generator_call_ratio = ours_tokens.generator_calls as f64
        / baseline_tokens.generator_calls as f64;

    let report = CompareReport {
        questions: ours.len(),
        baseline_accuracy: (cc + ci) as f64 / n,
        ours_accuracy: transitions.final_accuracy(),
        transitions,
        baseline_tokens,
        ours_tokens,
        generator_call_ratio,
    };

    ensure_output_dir(cfg)?;
    write_json_pretty(&cfg.output_dir.join("compare.json"), &report)?;
    let digest = {
        let mut bytes = std::fs::read(&options.baseline).map_err(|e| {
            Error::DatasetUnreadable(format!(
                "{}: {e}",
                options.baseline.display()
            ))
        })?;
        bytes.extend(std::fs::read(&options.ours).map_err(|e| {
            Error::DatasetUnreadable(format!("{}: {e}", options.ours.display()))
        })?);
        crate::sha256_hex(&bytes)
    };
    let manifest =
        Manifest::new("compare", cfg.seed, digest, ours.len(), 0);
    write_json_pretty(&cfg.output_dir.join("manifest.json"), &manifest)?;

    println!(
        "questions              {}\n\
         baseline accuracy      {:.4}\n\
         ours accuracy          {:.4}\n\
         token reduction        {:.4}\n\
         generator call ratio   {:.4}",
        report.questions,
        report.baseline_accuracy,
        report.ours_accuracy,
        report.ours_tokens.reduction_vs_baseline.unwrap_or(f64::NAN),
        report.generator_call_ratio,
    );
    Ok(())
}
