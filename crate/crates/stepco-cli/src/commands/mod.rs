//! The five subcommands. Each one validates its configuration before doing
//! any work, writes only inside its output directory, and produces
//! deterministic artifacts: trace rows ordered by question id, fixed float
//! formatting, and manifests without timestamps.

mod annotate;
mod compare;
mod evaluate;
mod run;
mod simulate;

pub use annotate::{cmd_annotate, AnnotateOptions};
pub use compare::{cmd_compare, CompareOptions};
pub use evaluate::{cmd_evaluate, EvaluateOptions};
pub use run::cmd_run;
pub use simulate::{cmd_simulate, SimulateOptions};

use stepco::baselines::{
    run_best_of_n, run_pathco, run_self_consistency, run_single_pass,
    SinglePassMode,
};
use stepco::correction::run_stepco;
use stepco::error::{Error, Result};
use stepco::gateway::GeneratorBackend;
use stepco::path::Question;
use stepco::scoring::ScorerBackend;
use stepco::seeding::derive_seed;

use crate::config::{ExperimentConfig, Method};
use crate::trace::TraceRecord;

/// Execute one question with the configured method. Failures become trace
/// rows with an error message instead of propagating, so one bad question
/// cannot take down the batch.
fn run_one(
    cfg: &ExperimentConfig,
    generator: &GeneratorBackend,
    scorer: &ScorerBackend,
    q: &Question,
) -> TraceRecord {
    let seed = derive_seed(cfg.seed, &[&q.id]);
    let gold = &q.gold_answer;
    let method = cfg.method;
    match method {
        Method::Stepco | Method::Pathco => {
            let loop_cfg = cfg.stepco_config();
            let outcome = if method == Method::Stepco {
                run_stepco(generator, scorer, q, &loop_cfg, seed)
            } else {
                run_pathco(generator, scorer, q, &loop_cfg, seed)
            };
            match outcome {
                Ok(run) => TraceRecord::from_run(&run, method, gold),
                Err(failure) => TraceRecord::from_error(
                    &q.id,
                    method,
                    failure.error.to_string(),
                    &failure.partial,
                    failure.tokens,
                    gold.kind,
                ),
            }
        }
        Method::BestOfN => {
            match run_best_of_n(
                generator,
                scorer,
                q,
                cfg.n,
                cfg.temperature,
                seed,
            ) {
                Ok((answer, _, tokens)) => TraceRecord::from_answer(
                    &q.id, method, answer, tokens, gold,
                ),
                Err(e) => TraceRecord::from_error(
                    &q.id,
                    method,
                    e.to_string(),
                    &[],
                    Default::default(),
                    gold.kind,
                ),
            }
        }
        Method::SelfConsistency => {
            match run_self_consistency(generator, q, cfg.n, cfg.temperature, seed)
            {
                Ok((answer, tokens)) => TraceRecord::from_answer(
                    &q.id, method, answer, tokens, gold,
                ),
                Err(e) => TraceRecord::from_error(
                    &q.id,
                    method,
                    e.to_string(),
                    &[],
                    Default::default(),
                    gold.kind,
                ),
            }
        }
        Method::Direct | Method::ZeroShotCot => {
            let mode = if method == Method::Direct {
                SinglePassMode::Direct
            } else {
                SinglePassMode::ZeroShotCot
            };
            match run_single_pass(generator, q, mode, None, cfg.temperature, seed)
            {
                Ok((answer, tokens)) => TraceRecord::from_answer(
                    &q.id, method, answer, tokens, gold,
                ),
                Err(e) => TraceRecord::from_error(
                    &q.id,
                    method,
                    e.to_string(),
                    &[],
                    Default::default(),
                    gold.kind,
                ),
            }
        }
    }
}

/// Run the whole batch on a worker pool bounded by `parallelism`, then
/// return the records sorted by question id. Aborts when more than half of
/// the questions fail — at that point the trace set says more about the
/// backend than about the method.
fn execute_batch(
    cfg: &ExperimentConfig,
    generator: &GeneratorBackend,
    scorer: &ScorerBackend,
    questions: &[Question],
) -> Result<(Vec<TraceRecord>, usize)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| {
            Error::ConfigInvalid(format!("cannot build worker pool: {e}"))
        })?;

    let mut records: Vec<TraceRecord> = pool.install(|| {
        use rayon::prelude::*;
        questions
            .par_iter()
            .map(|q| run_one(cfg, generator, scorer, q))
            .collect()
    });
    records.sort_by(|a, b| a.question_id.cmp(&b.question_id));

    let failures = records.iter().filter(|r| r.error.is_some()).count();
    for record in records.iter().filter(|r| r.error.is_some()) {
        tracing::warn!(
            question = %record.question_id,
            error = record.error.as_deref().unwrap_or(""),
            "question failed"
        );
    }
    if failures * 2 > questions.len() {
        return Err(Error::GenerationFailed(format!(
            "{failures} of {} questions failed; aborting",
            questions.len()
        )));
    }
    Ok((records, failures))
}

fn ensure_output_dir(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        Error::DatasetUnreadable(format!(
            "cannot create {}: {e}",
            cfg.output_dir.display()
        ))
    })
}
