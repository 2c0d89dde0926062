//! Reference strategies the step-level loop is compared against:
//! majority voting over sampled paths, verifier-ranked best-of-N,
//! whole-path verify-then-revise, and single-pass prompting.

use serde::{Deserialize, Serialize};

use crate::correction::{RunFailure, RunResult, StepCoConfig, Termination, TokenLedger};
use crate::error::{Error, Result};
use crate::gateway::GeneratorBackend;
use crate::path::{
    answers_equal, extract_final_answer, parse_reasoning_path, AnswerKey, Question,
    ReasoningPath,
};
use crate::scoring::{score_suffix, ScorerBackend, VerificationReport};
use crate::seeding::derive_seed;

/// The sampled candidates of a best-of-N run and which one was picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub paths: Vec<ReasoningPath>,
    /// Mean step probability per candidate, parallel to `paths`.
    pub mean_scores: Vec<f64>,
    /// Index into `paths` of the selected candidate.
    pub chosen: usize,
}

fn sample_paths(
    gen: &GeneratorBackend,
    q: &Question,
    n: u32,
    temperature: f64,
    seed: u64,
    ledger: &mut TokenLedger,
) -> Result<Vec<ReasoningPath>> {
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let prompt = crate::correction::build_initial_prompt(q);
    let mut paths = Vec::with_capacity(n as usize);
    for i in 0..n {
        let s = derive_seed(seed, &[&q.id, "sc", &i.to_string()]);
        let (text, usage) = gen.complete(&prompt, temperature, s)?;
        ledger.record_generation(&usage);
        if let Ok(path) = parse_reasoning_path(&text) {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::GenerationFailed(format!(
            "all {n} samples for question {} were unparseable",
            q.id
        )));
    }
    Ok(paths)
}

/// Majority vote over `n` sampled paths. Answers are grouped by semantic
/// equality; ties go to the answer seen first. Paths without an extractable
/// answer don't vote.
pub fn run_self_consistency(
    gen: &GeneratorBackend,
    q: &Question,
    n: u32,
    temperature: f64,
    seed: u64,
) -> Result<(Option<AnswerKey>, TokenLedger)> {
    let mut ledger = TokenLedger::default();
    let paths = sample_paths(gen, q, n, temperature, seed, &mut ledger)?;

    let kind = q.gold_answer.kind;
    let mut groups: Vec<(AnswerKey, usize)> = Vec::new();
    for path in &paths {
        let Ok(answer) = extract_final_answer(path, kind) else { continue };
        match groups
            .iter_mut()
            .find(|(rep, _)| answers_equal(rep, &answer).unwrap_or(false))
        {
            Some((_, count)) => *count += 1,
            None => groups.push((answer, 1)),
        }
    }
    // Strictly-greater keeps the earliest representative on ties.
    let winner = groups
        .into_iter()
        .reduce(|best, cand| if cand.1 > best.1 { cand } else { best })
        .map(|(rep, _)| rep);
    Ok((winner, ledger))
}

/// Sample `n` paths, score every step of each, and keep the candidate with
/// the highest mean step probability (lowest index on ties).
pub fn run_best_of_n(
    gen: &GeneratorBackend,
    scorer: &ScorerBackend,
    q: &Question,
    n: u32,
    temperature: f64,
    seed: u64,
) -> Result<(Option<AnswerKey>, CandidateSet, TokenLedger)> {
    let mut ledger = TokenLedger::default();
    let paths = sample_paths(gen, q, n, temperature, seed, &mut ledger)?;

    let mut mean_scores = Vec::with_capacity(paths.len());
    for path in &paths {
        let scores = score_suffix(scorer, q, path, 1)?;
        ledger.scorer_calls += scores.len() as u64;
        mean_scores.push(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    let mut chosen = 0;
    for (i, &m) in mean_scores.iter().enumerate() {
        if m > mean_scores[chosen] {
            chosen = i;
        }
    }
    let answer = extract_final_answer(&paths[chosen], q.gold_answer.kind).ok();
    Ok((answer, CandidateSet { paths, mean_scores, chosen }, ledger))
}

/// Whole-path variant of the verify-revise loop: the entire path gets one
/// aggregate score, and a rejected path is revised from step 1 (no verified
/// prefix is ever kept). Uses the same config, templates, and budget as the
/// step-level loop.
pub fn run_pathco(
    gen: &GeneratorBackend,
    scorer: &ScorerBackend,
    q: &Question,
    cfg: &StepCoConfig,
    seed: u64,
) -> std::result::Result<RunResult, RunFailure> {
    let mut total = TokenLedger::default();
    let mut iterations = Vec::new();

    macro_rules! fail {
        ($err:expr) => {
            return Err(RunFailure { error: $err, partial: iterations, tokens: total })
        };
    }

    let init_prompt = cfg.templates.render_initial(&q.text);
    let init_seed = derive_seed(seed, &[&q.id, "init"]);
    let (init_text, usage) = match gen.complete(&init_prompt, cfg.temperature, init_seed)
    {
        Ok(ok) => ok,
        Err(e) => fail!(e),
    };
    total.record_generation(&usage);
    let initial = match parse_reasoning_path(&init_text) {
        Ok(p) => p,
        Err(e) => fail!(e),
    };

    let mut current = initial.clone();
    let mut terminated_by = Termination::BudgetExhausted;

    for t in 1..=cfg.max_iterations {
        let mut iter_tokens = TokenLedger::default();
        let scores = match score_suffix(scorer, q, &current, 1) {
            Ok(s) => s,
            Err(e) => {
                total += iter_tokens;
                fail!(e)
            }
        };
        iter_tokens.scorer_calls = scores.len() as u64;
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let rejected = mean < cfg.theta;
        let report = VerificationReport {
            probabilities: scores,
            first_error: if rejected { Some(1) } else { None },
            scored_from: 1,
        };

        if !rejected {
            iterations.push(crate::correction::IterationTrace {
                t,
                path_before: current.clone(),
                report,
                revision_prompt: None,
                path_after: None,
                tokens: iter_tokens,
            });
            total += iter_tokens;
            terminated_by = Termination::AllVerified;
            break;
        }

        // Revise the whole path; the aggregate score plays the role of the
        // step probability in the prompt.
        let prompt = cfg.templates.render_revision(&q.text, &current, 1, mean);
        let revise_seed = derive_seed(seed, &[&q.id, "revise", &t.to_string()]);
        let revised_text = match gen.complete(&prompt, cfg.temperature, revise_seed) {
            Ok((text, usage)) => {
                iter_tokens.record_generation(&usage);
                text
            }
            Err(e) => {
                total += iter_tokens;
                fail!(e)
            }
        };
        let after = match parse_reasoning_path(&revised_text) {
            Ok(p) => p,
            Err(Error::ParseEmpty) => current.clone(),
            Err(e) => {
                total += iter_tokens;
                fail!(e)
            }
        };

        iterations.push(crate::correction::IterationTrace {
            t,
            path_before: current.clone(),
            report,
            revision_prompt: Some(prompt),
            path_after: Some(after.clone()),
            tokens: iter_tokens,
        });
        total += iter_tokens;
        current = after;
    }

    let final_answer = extract_final_answer(&current, q.gold_answer.kind).ok();
    Ok(RunResult {
        question_id: q.id.clone(),
        initial_path: initial,
        final_path: current,
        final_answer,
        iterations,
        terminated_by,
        total_tokens: total,
    })
}

/// Single-pass prompting styles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinglePassMode {
    /// `Q: {question}. A: The answer is` — the model completes the answer.
    Direct,
    /// `Q: {question}. A: Let's think step by step` — free-form reasoning.
    ZeroShotCot,
}

/// One generation call, no verification. `demonstrations`, when given, is
/// prepended followed by a blank line.
pub fn run_single_pass(
    gen: &GeneratorBackend,
    q: &Question,
    mode: SinglePassMode,
    demonstrations: Option<&str>,
    temperature: f64,
    seed: u64,
) -> Result<(Option<AnswerKey>, TokenLedger)> {
    let core = match mode {
        SinglePassMode::Direct => format!("Q: {}. A: The answer is", q.text),
        SinglePassMode::ZeroShotCot => {
            format!("Q: {}. A: Let's think step by step", q.text)
        }
    };
    let prompt = match demonstrations {
        Some(demos) => format!("{demos}\n\n{core}"),
        None => core,
    };
    let mut ledger = TokenLedger::default();
    let s = derive_seed(seed, &[&q.id, "init"]);
    let (text, usage) = gen.complete(&prompt, temperature, s)?;
    ledger.record_generation(&usage);
    let answer = match mode {
        // The completion continues "The answer is ..."; parse it directly.
        SinglePassMode::Direct => {
            AnswerKey::parse(q.gold_answer.kind, &text).ok()
        }
        SinglePassMode::ZeroShotCot => parse_reasoning_path(&text)
            .ok()
            .and_then(|p| extract_final_answer(&p, q.gold_answer.kind).ok()),
    };
    Ok((answer, ledger))
}
