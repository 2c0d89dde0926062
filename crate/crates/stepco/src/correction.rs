//! The verify-then-revise loop.
//!
//! Each iteration scores the unverified suffix of the current path, finds the
//! first step whose probability of leading to a correct answer falls strictly
//! below the threshold, asks the generator to revise from that step onward,
//! and splices the revision onto the verified prefix. Verified prefixes are
//! never re-scored and never change; the first-error index is therefore
//! non-decreasing across iterations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{GeneratorBackend, UsageCounts};
use crate::path::{
    extract_final_answer, parse_reasoning_path, splice, AnswerKey, Question,
    ReasoningPath,
};
use crate::scoring::{first_error_index, score_suffix, ScorerBackend, VerificationReport};
use crate::seeding::derive_seed;

/// Prompt templates used by the loop. Placeholders: `{question}`, `{path}`
/// (full tagged path), `{step}` (the flagged step, tagged), `{probability}`
/// (two decimals), `{revise_steps}` / `{keep_steps}` (tagged step ranges).
/// `revision_full` is used when the flagged step is the first one and there
/// is no prefix to keep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub initial: String,
    pub revision_keep: String,
    pub revision_full: String,
}

impl Default for PromptTemplates {
    fn default() -> PromptTemplates {
        PromptTemplates {
            initial: "Mark the beginning and end of each reasoning step with <Step> \
                      and </Step> tags. Q: {question}. A: Let's think step by step"
                .into(),
            revision_keep: "Q: {question}. A: {path}. The probability that step {step} \
                            leads to the correct answer is {probability}. Please revise \
                            steps {revise_steps} while keeping the steps {keep_steps} \
                            unchanged to increase the probability that the revised steps \
                            lead to the correct answer"
                .into(),
            revision_full: "Q: {question}. A: {path}. The probability that step {step} \
                            leads to the correct answer is {probability}. Please revise \
                            steps {revise_steps} to increase the probability that the \
                            revised steps lead to the correct answer"
                .into(),
        }
    }
}

impl PromptTemplates {
    pub fn render_initial(&self, question_text: &str) -> String {
        self.initial.replace("{question}", question_text)
    }

    /// Render the revision prompt for flagged step `k` (1-based, in bounds)
    /// with probability `p_k`.
    pub fn render_revision(
        &self,
        question_text: &str,
        path: &ReasoningPath,
        k: usize,
        p_k: f64,
    ) -> String {
        let template =
            if k == 1 { &self.revision_full } else { &self.revision_keep };
        let tag = |i: usize| {
            format!("<Step {n}>{t}</Step {n}>", n = i, t = path.steps[i - 1].text)
        };
        let range = |from: usize, to: usize| {
            (from..=to).map(tag).collect::<Vec<_>>().join("\n")
        };
        template
            .replace("{question}", question_text)
            .replace("{path}", &path.render_tagged())
            .replace("{step}", &tag(k))
            .replace("{probability}", &format!("{p_k:.2}"))
            .replace("{revise_steps}", &range(k, path.len()))
            .replace("{keep_steps}", &if k > 1 { range(1, k - 1) } else { String::new() })
    }
}

/// Generation prompt for the first attempt at a question.
pub fn build_initial_prompt(q: &Question) -> String {
    PromptTemplates::default().render_initial(&q.text)
}

/// Revision prompt asking the generator to rewrite steps `k..` of `path`.
pub fn build_revision_prompt(
    q: &Question,
    path: &ReasoningPath,
    k: usize,
    p_k: f64,
) -> Result<String> {
    if k < 1 || k > path.len() {
        return Err(Error::IndexOutOfRange { index: k, len: path.len() });
    }
    Ok(PromptTemplates::default().render_revision(&q.text, path, k, p_k))
}

/// Loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCoConfig {
    /// Verification threshold θ; a step passes iff its probability ≥ θ.
    pub theta: f64,
    /// Maximum verify-revise iterations T.
    pub max_iterations: u32,
    /// Sampling temperature for all generation calls.
    pub temperature: f64,
    #[serde(default)]
    pub templates: PromptTemplates,
}

impl Default for StepCoConfig {
    fn default() -> StepCoConfig {
        StepCoConfig {
            theta: 0.5,
            max_iterations: 5,
            temperature: 0.7,
            templates: PromptTemplates::default(),
        }
    }
}

/// Why the loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Every scored step reached the threshold.
    AllVerified,
    /// The iteration budget ran out; the last path is adopted as-is.
    BudgetExhausted,
}

/// Additive usage counters for one run (or one iteration of one run).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub scorer_calls: u64,
    pub generator_calls: u64,
}

impl TokenLedger {
    /// Count one generation call and its token usage.
    pub fn record_generation(&mut self, usage: &UsageCounts) {
        self.generator_calls += 1;
        self.prompt_tokens += usage.prompt_tokens;
        self.completion_tokens += usage.completion_tokens;
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for TokenLedger {
    type Output = TokenLedger;
    fn add(self, rhs: TokenLedger) -> TokenLedger {
        TokenLedger {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
            scorer_calls: self.scorer_calls + rhs.scorer_calls,
            generator_calls: self.generator_calls + rhs.generator_calls,
        }
    }
}

impl std::ops::AddAssign for TokenLedger {
    fn add_assign(&mut self, rhs: TokenLedger) {
        *self = *self + rhs;
    }
}

/// Everything that happened in one verify-revise iteration.
/// `path_after` is present exactly when a step was flagged; when the
/// revision was unusable it equals `path_before` (the iteration is still
/// consumed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// 1-based iteration number.
    pub t: u32,
    pub path_before: ReasoningPath,
    pub report: VerificationReport,
    pub revision_prompt: Option<String>,
    pub path_after: Option<ReasoningPath>,
    pub tokens: TokenLedger,
}

/// Full record of one question's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub question_id: String,
    pub initial_path: ReasoningPath,
    pub final_path: ReasoningPath,
    /// Extracted from the final step; `None` when no answer of the question's
    /// kind could be parsed out (scored as incorrect downstream).
    pub final_answer: Option<AnswerKey>,
    pub iterations: Vec<IterationTrace>,
    pub terminated_by: Termination,
    pub total_tokens: TokenLedger,
}

/// A failed run: the underlying error plus whatever iterations completed
/// before it, so the caller can still account for spent tokens.
#[derive(Debug, thiserror::Error)]
#[error("run failed after {} completed iteration(s): {error}", partial.len())]
pub struct RunFailure {
    pub error: Error,
    pub partial: Vec<IterationTrace>,
    pub tokens: TokenLedger,
}

/// Interpret the reviser's output as a replacement suffix for steps `k..`.
///
/// Revisers sometimes re-emit the whole path instead of only the suffix:
/// when the parsed output is long enough and its first `k-1` steps match the
/// kept prefix byte-for-byte, those steps are dropped; otherwise the entire
/// output is the suffix.
fn align_suffix(current: &ReasoningPath, k: usize, revised: &ReasoningPath) -> Vec<String> {
    let texts: Vec<String> = revised.steps.iter().map(|s| s.text.clone()).collect();
    if revised.len() >= k
        && current.steps[..k - 1]
            .iter()
            .zip(&revised.steps[..k - 1])
            .all(|(a, b)| a.text == b.text)
    {
        texts[k - 1..].to_vec()
    } else {
        texts
    }
}

/// Run the verify-then-revise loop for one question.
///
/// All randomness is derived from `seed`; identical inputs and backends
/// replay identically. Backend failures surface as [`RunFailure`] carrying
/// the completed iterations.
pub fn run_stepco(
    gen: &GeneratorBackend,
    scorer: &ScorerBackend,
    q: &Question,
    cfg: &StepCoConfig,
    seed: u64,
) -> std::result::Result<RunResult, RunFailure> {
    let mut total = TokenLedger::default();
    let mut iterations: Vec<IterationTrace> = Vec::new();

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
    let mut k_prev: usize = 1;
    // Probabilities of the verified steps 1..k_prev-1, all ≥ theta.
    let mut prefix_probs: Vec<f64> = Vec::new();
    let mut terminated_by = Termination::BudgetExhausted;

    for t in 1..=cfg.max_iterations {
        let mut iter_tokens = TokenLedger::default();
        let scores = match score_suffix(scorer, q, &current, k_prev) {
            Ok(s) => s,
            Err(e) => {
                total += iter_tokens;
                fail!(e)
            }
        };
        iter_tokens.scorer_calls = scores.len() as u64;

        let mut merged = prefix_probs.clone();
        merged.extend_from_slice(&scores);
        debug_assert_eq!(merged.len(), current.len());
        let first_error = first_error_index(&merged, cfg.theta, k_prev);
        let report = VerificationReport {
            probabilities: scores,
            first_error,
            scored_from: k_prev,
        };

        let Some(k) = first_error else {
            iterations.push(IterationTrace {
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
        };

        let p_k = merged[k - 1];
        let prompt = cfg.templates.render_revision(&q.text, &current, k, p_k);
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

        // An empty or unparseable revision consumes the iteration but keeps
        // the previous path.
        let suffix = match parse_reasoning_path(&revised_text) {
            Ok(revised) => align_suffix(&current, k, &revised),
            Err(Error::ParseEmpty) => Vec::new(),
            Err(e) => {
                total += iter_tokens;
                fail!(e)
            }
        };
        let after = if suffix.is_empty() {
            current.clone()
        } else {
            match splice(&current, k, &suffix) {
                Ok(p) => p,
                Err(e) => {
                    total += iter_tokens;
                    fail!(e)
                }
            }
        };

        iterations.push(IterationTrace {
            t,
            path_before: current.clone(),
            report,
            revision_prompt: Some(prompt),
            path_after: Some(after.clone()),
            tokens: iter_tokens,
        });
        total += iter_tokens;
        prefix_probs = merged[..k - 1].to_vec();
        k_prev = k;
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
