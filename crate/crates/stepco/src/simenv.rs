//! Deterministic synthetic reasoning environment.
//!
//! Provides running-total word problems with known gold steps, a generator
//! that injects cascading errors at a configurable rate, a reviser with a
//! configurable success probability, and exact or noise-injected scorers.
//! Everything is a pure function of its seed, so full-pipeline behavior can
//! be tested — and the method's qualitative curves reproduced — without any
//! LLM in the loop.
//!
//! The error model is deliberately simple: the first corrupted step's value
//! is shifted by a nonzero offset and every later running total inherits the
//! shift, so downstream arithmetic stays self-consistent while the final
//! answer is wrong — one mistake cascades to the end of the path.

use std::collections::HashMap;

use once_cell::sync::Lazy;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::{parse_reasoning_path, AnswerKey, AnswerKind, Question};
use crate::seeding::{derive_seed, rng_from, stable_hash64};

/// Per-step false-positive / false-negative rates of the noisy scorer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScorerNoise {
    /// Probability that a wrong prefix is scored as passing.
    pub fpr: f64,
    /// Probability that a correct prefix is scored as failing.
    pub fnr: f64,
}

/// Knobs of the synthetic environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Per-step corruption probability of the generator, in [0,1].
    pub epsilon: f64,
    /// Per-call success probability of the reviser, in [0,1].
    pub rho: f64,
    /// Scorer flip rates, in [0,1]².
    #[serde(default)]
    pub scorer_noise: ScorerNoise,
    /// Base seed for the environment's own streams.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            epsilon: 0.1,
            rho: 0.8,
            scorer_noise: ScorerNoise::default(),
            seed: 0,
        }
    }
}

/// A word problem with its gold reasoning chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub question: Question,
    /// Step texts; all but the last state a running total, the last is the
    /// bare answer.
    pub gold_steps: Vec<String>,
    pub gold_answer: AnswerKey,
}

static INT: Lazy<Regex> = Lazy::new(|| Regex::new(r"-?\d+").unwrap());
static FLAGGED_STEP: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"The probability that step <Step (\d+)>").unwrap());

/// Last integer stated in a step text — the value the step "computes".
pub(crate) fn last_int(text: &str) -> Option<i64> {
    INT.find_iter(text).last().and_then(|m| m.as_str().parse().ok())
}

impl SyntheticTask {
    /// Number of reasoning steps (the final bare-answer step included).
    pub fn n_steps(&self) -> usize {
        self.gold_steps.len()
    }

    /// The value each gold step computes, one entry per step.
    pub(crate) fn step_values(&self) -> Vec<i64> {
        self.gold_steps
            .iter()
            .map(|s| last_int(s).expect("gold steps always state a value"))
            .collect()
    }

    /// Day-i increment for i ≥ 2, recovered from consecutive totals.
    fn delta(&self, i: usize) -> i64 {
        let v = self.step_values();
        v[i - 1] - v[i - 2]
    }
}

fn step_text(task: &SyntheticTask, i: usize, prev_shown: i64, value: i64) -> String {
    let days = task.n_steps() - 1;
    if i == 1 {
        format!("Clients by Day 1: {value}")
    } else if i <= days {
        format!("Clients by Day {i}: {prev_shown} + {d} = {value}", d = task.delta(i))
    } else {
        format!("{value}")
    }
}

/// Build one running-total task. Deterministic per `(seed, n_steps)`.
///
/// The question accumulates client counts over `n_steps - 1` days; gold
/// steps are the running totals, and the final step is the bare answer.
pub fn synthesize_task(seed: u64, n_steps: usize) -> Result<SyntheticTask> {
    if n_steps < 2 {
        return Err(Error::InvalidArity { got: n_steps, min: 2 });
    }
    let mut rng = rng_from(derive_seed(seed, &["task", &n_steps.to_string()]));
    let days = n_steps - 1;
    let opening: i64 = rng.gen_range(10..=99);
    let deltas: Vec<i64> = (2..=days).map(|_| rng.gen_range(2..=30)).collect();

    let mut text = format!("On Day 1, a shop had {opening} clients.");
    let mut totals = vec![opening];
    for (day, d) in deltas.iter().enumerate() {
        text.push_str(&format!(" On Day {}, it gained {d} more clients.", day + 2));
        totals.push(totals.last().unwrap() + d);
    }
    text.push_str(&format!(" How many clients did the shop have by Day {days}?"));

    let mut gold_steps = vec![format!("Clients by Day 1: {opening}")];
    for (day, d) in deltas.iter().enumerate() {
        gold_steps.push(format!(
            "Clients by Day {}: {} + {} = {}",
            day + 2,
            totals[day],
            d,
            totals[day + 1]
        ));
    }
    let answer = *totals.last().unwrap();
    gold_steps.push(format!("{answer}"));

    let gold_answer = AnswerKey::parse(AnswerKind::Numeric, &answer.to_string())?;
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("n_steps".into(), n_steps.to_string());
    Ok(SyntheticTask {
        question: Question {
            id: format!("sim-{seed:016x}-{n_steps}"),
            text,
            gold_answer: gold_answer.clone(),
            metadata,
        },
        gold_steps,
        gold_answer,
    })
}

/// Build `count` tasks with step counts drawn uniformly from
/// `min_steps..=max_steps`, each task seeded independently.
pub fn synthesize_batch(
    seed: u64,
    count: usize,
    min_steps: usize,
    max_steps: usize,
) -> Result<Vec<SyntheticTask>> {
    if min_steps < 2 || max_steps < min_steps {
        return Err(Error::InvalidArity { got: min_steps.min(max_steps), min: 2 });
    }
    (0..count)
        .map(|i| {
            let task_seed = derive_seed(seed, &["batch", &i.to_string()]);
            let mut rng = rng_from(derive_seed(task_seed, &["arity"]));
            let n = rng.gen_range(min_steps..=max_steps);
            synthesize_task(task_seed, n)
        })
        .collect()
}

fn draw_offset<R: Rng>(rng: &mut R) -> i64 {
    let magnitude: i64 = rng.gen_range(1..=9);
    if rng.gen_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// Emit a tagged path for `task`, corrupting each step with probability
/// `cfg.epsilon` until the first corruption, whose offset then propagates
/// through every later value. Deterministic per `seed`.
pub fn sim_generate(task: &SyntheticTask, cfg: &SimConfig, seed: u64) -> String {
    let mut rng = rng_from(seed);
    let gold = task.step_values();
    let mut offset: i64 = 0;
    let mut prev_shown: i64 = 0;
    let mut lines = Vec::with_capacity(gold.len());
    for i in 1..=gold.len() {
        if offset == 0 && cfg.epsilon > 0.0 && rng.gen_bool(cfg.epsilon) {
            offset = draw_offset(&mut rng);
        }
        let value = gold[i - 1] + offset;
        let text = step_text(task, i, prev_shown, value);
        lines.push(format!("<Step {i}>{text}</Step {i}>"));
        prev_shown = value;
    }
    lines.join("\n")
}

/// Replacement-suffix behavior of the simulated backend.
///
/// The flagged index k is parsed from the revision prompt. With probability
/// `cfg.rho` the suffix continues from the kept prefix's actual value using
/// the gold increments (byte-identical to the gold suffix whenever the
/// prefix is clean); otherwise a fresh nonzero offset corrupts step k and
/// cascades. Deterministic per `seed`.
pub fn sim_revise(
    task: &SyntheticTask,
    revision_prompt: &str,
    cfg: &SimConfig,
    seed: u64,
) -> Result<String> {
    let k: usize = FLAGGED_STEP
        .captures(revision_prompt)
        .and_then(|c| c[1].parse().ok())
        .ok_or_else(|| {
            Error::PromptUnrecognized(
                "revision prompt does not name a flagged step".into(),
            )
        })?;
    let n = task.n_steps();
    if k < 1 || k > n {
        return Err(Error::PromptUnrecognized(format!(
            "flagged step {k} outside 1..={n}"
        )));
    }

    // Recover the kept prefix's last value from the prompt's embedded path.
    let prev = if k == 1 {
        None
    } else {
        let a = revision_prompt
            .find(". A: ")
            .ok_or_else(|| Error::PromptUnrecognized("missing path".into()))?;
        let end = revision_prompt
            .find(". The probability that step")
            .ok_or_else(|| Error::PromptUnrecognized("missing probability".into()))?;
        let path = parse_reasoning_path(&revision_prompt[a + 5..end])
            .map_err(|e| Error::PromptUnrecognized(e.to_string()))?;
        if path.len() < k - 1 {
            return Err(Error::PromptUnrecognized(format!(
                "prompt path has {} steps, need at least {}",
                path.len(),
                k - 1
            )));
        }
        Some(last_int(&path.steps[k - 2].text).ok_or_else(|| {
            Error::PromptUnrecognized("kept prefix states no value".into())
        })?)
    };

    let mut rng = rng_from(seed);
    let offset = if rng.gen_bool(cfg.rho) { 0 } else { draw_offset(&mut rng) };

    let gold = task.step_values();
    let days = n - 1;
    let mut lines = Vec::with_capacity(n - k + 1);
    let mut current = prev.unwrap_or(0);
    for i in k..=n {
        let value = if i == 1 {
            gold[0] + offset
        } else if i <= days {
            current + task.delta(i) + if i == k { offset } else { 0 }
        } else {
            // Final bare answer restates the Day-`days` total.
            current + if i == k { offset } else { 0 }
        };
        lines.push(format!(
            "<Step {i}>{}</Step {i}>",
            step_text(task, i, current, value)
        ));
        current = value;
    }
    Ok(lines.join("\n"))
}

/// Ground-truth scorer over a set of synthetic tasks, keyed by question
/// text. Noiseless scores are exactly 1.0 (every prefix step states the
/// gold value) or 0.0; the noisy variant flips the pass/fail side with the
/// configured rates and reports a uniform draw from the corresponding side
/// of its reference threshold.
pub struct OracleScorer {
    tasks: HashMap<String, SyntheticTask>,
    noise: Option<NoisySide>,
}

struct NoisySide {
    rates: ScorerNoise,
    /// Scores land in [theta_ref,1] for "pass" and [0,theta_ref) for "fail";
    /// fixed at construction so sweeping a loop's threshold does not move
    /// the noise model under it.
    theta_ref: f64,
    seed: u64,
}

fn task_map(
    tasks: impl IntoIterator<Item = SyntheticTask>,
) -> HashMap<String, SyntheticTask> {
    tasks.into_iter().map(|t| (t.question.text.clone(), t)).collect()
}

impl OracleScorer {
    pub fn exact(tasks: impl IntoIterator<Item = SyntheticTask>) -> OracleScorer {
        OracleScorer { tasks: task_map(tasks), noise: None }
    }

    /// `theta_ref` must lie strictly inside (0,1) so both sides are
    /// non-empty.
    pub fn noisy(
        tasks: impl IntoIterator<Item = SyntheticTask>,
        rates: ScorerNoise,
        theta_ref: f64,
        seed: u64,
    ) -> OracleScorer {
        assert!(
            theta_ref > 0.0 && theta_ref < 1.0,
            "reference threshold must be in (0,1)"
        );
        OracleScorer {
            tasks: task_map(tasks),
            noise: Some(NoisySide { rates, theta_ref, seed }),
        }
    }

    /// Score a prefix prompt (`Q: {question}\nA: {tagged steps}`).
    pub fn score(&self, prompt: &str) -> Result<f64> {
        let body = prompt.strip_prefix("Q: ").ok_or_else(|| {
            Error::PrefixUnalignable("prompt does not start with Q:".into())
        })?;
        let split = body.find("\nA: ").ok_or_else(|| {
            Error::PrefixUnalignable("prompt has no answer section".into())
        })?;
        let question = &body[..split];
        let task = self.tasks.get(question).ok_or_else(|| {
            Error::PrefixUnalignable(format!("unknown question {question:?}"))
        })?;
        let steps = parse_reasoning_path(&body[split + 4..])
            .map_err(|e| Error::PrefixUnalignable(e.to_string()))?;

        let gold = task.step_values();
        let truth = steps.len() <= gold.len()
            && steps
                .steps
                .iter()
                .zip(&gold)
                .all(|(s, g)| last_int(&s.text) == Some(*g));

        match &self.noise {
            None => Ok(if truth { 1.0 } else { 0.0 }),
            Some(noisy) => {
                // Key the draw on (seed, prompt) so scores are stable across
                // call orders and repeats.
                let mut rng = rng_from(stable_hash64(&[
                    &noisy.seed.to_le_bytes(),
                    prompt.as_bytes(),
                ]));
                let pass = if truth {
                    !rng.gen_bool(noisy.rates.fnr)
                } else {
                    rng.gen_bool(noisy.rates.fpr)
                };
                Ok(if pass {
                    rng.gen_range(noisy.theta_ref..=1.0)
                } else {
                    rng.gen_range(0.0..noisy.theta_ref)
                })
            }
        }
    }
}

/// Simulated LLM over a set of synthetic tasks. Recognizes the pipeline's
/// prompt shapes — initial tagged generation, revision, direct answer,
/// bare step-by-step, and prefix continuation for annotation trees — and
/// answers each deterministically per seed.
pub struct SimulatedGenerator {
    tasks: HashMap<String, SyntheticTask>,
    cfg: SimConfig,
    minus_prefix: &'static str,
}

const INITIAL_PREFIX: &str = "Mark the beginning and end of each reasoning step \
                              with <Step> and </Step> tags. Q: ";
const THINK_SUFFIX: &str = ". A: Let's think step by step";
const DIRECT_SUFFIX: &str = ". A: The answer is";

impl SimulatedGenerator {
    pub fn new(
        cfg: SimConfig,
        tasks: impl IntoIterator<Item = SyntheticTask>,
    ) -> SimulatedGenerator {
        SimulatedGenerator {
            tasks: task_map(tasks),
            cfg,
            minus_prefix: include_str!("../assets/demonstration_minus.txt"),
        }
    }

    fn task(&self, question: &str) -> Result<&SyntheticTask> {
        self.tasks.get(question).ok_or_else(|| {
            Error::PromptUnrecognized(format!("unknown question {question:?}"))
        })
    }

    /// Question text of the last `Q: ...` block before `suffix`.
    fn question_before<'a>(&self, prompt: &'a str, suffix: &str) -> Result<&'a str> {
        let body = prompt.strip_suffix(suffix).ok_or_else(|| {
            Error::PromptUnrecognized("prompt tail not recognized".into())
        })?;
        let q = body.rfind("Q: ").ok_or_else(|| {
            Error::PromptUnrecognized("prompt has no question".into())
        })?;
        Ok(&body[q + 3..])
    }

    pub fn complete(&self, prompt: &str, seed: u64) -> Result<String> {
        if let Some(rest) = prompt.strip_prefix(INITIAL_PREFIX) {
            let question = rest.strip_suffix(THINK_SUFFIX).ok_or_else(|| {
                Error::PromptUnrecognized("initial prompt tail not recognized".into())
            })?;
            return Ok(sim_generate(self.task(question)?, &self.cfg, seed));
        }

        if prompt.contains("Please revise steps") {
            let body = prompt.strip_prefix("Q: ").ok_or_else(|| {
                Error::PromptUnrecognized("revision prompt missing question".into())
            })?;
            let split = body.find(". A: ").ok_or_else(|| {
                Error::PromptUnrecognized("revision prompt missing path".into())
            })?;
            return sim_revise(self.task(&body[..split])?, prompt, &self.cfg, seed);
        }

        if prompt.ends_with(DIRECT_SUFFIX) {
            let question = self.question_before(prompt, DIRECT_SUFFIX)?;
            let path = sim_generate(self.task(question)?, &self.cfg, seed);
            // Take the final step's value, not the last integer of the raw
            // text — that would be the closing tag's step number.
            let parsed = parse_reasoning_path(&path)
                .expect("simulated paths always parse");
            let answer = last_int(&parsed.steps[parsed.len() - 1].text)
                .expect("simulated paths end in a value");
            return Ok(format!("The answer is {answer}."));
        }

        if prompt.ends_with(THINK_SUFFIX) {
            let question = self.question_before(prompt, THINK_SUFFIX)?;
            return Ok(sim_generate(self.task(question)?, &self.cfg, seed));
        }

        // Prefix continuation: "[demos]\n\nQ: {question}\nA: {tagged prefix}".
        if let Some(q) = prompt.rfind("Q: ") {
            if let Some(split) = prompt[q..].find("\nA: ") {
                let question = &prompt[q + 3..q + split];
                let task = self.task(question)?;
                let prefix = &prompt[q + split + 4..];
                return self.continue_prefix(task, prompt, prefix, seed);
            }
        }

        Err(Error::PromptUnrecognized(format!(
            "prompt shape not recognized, starts {:?}",
            prompt.chars().take(60).collect::<String>()
        )))
    }

    /// Emit the next single step after `prefix`. A world where the guided
    /// ("plus") continuation errs at the base rate and the misleading
    /// ("minus") continuation errs at least half the time.
    fn continue_prefix(
        &self,
        task: &SyntheticTask,
        full_prompt: &str,
        prefix: &str,
        seed: u64,
    ) -> Result<String> {
        let (depth, prev) = if prefix.trim().is_empty() {
            (0, None)
        } else {
            let parsed = parse_reasoning_path(prefix)
                .map_err(|e| Error::PromptUnrecognized(e.to_string()))?;
            let last = last_int(&parsed.steps[parsed.len() - 1].text).ok_or_else(
                || Error::PromptUnrecognized("prefix states no value".into()),
            )?;
            (parsed.len(), Some(last))
        };

        let rate = if full_prompt.starts_with(self.minus_prefix) {
            self.cfg.epsilon.max(0.5)
        } else {
            self.cfg.epsilon
        };
        let mut rng = rng_from(seed);
        let corrupt = rate > 0.0 && rng.gen_bool(rate);
        let offset = if corrupt { draw_offset(&mut rng) } else { 0 };

        let n = task.n_steps();
        let i = (depth + 1).min(n);
        let days = n - 1;
        let gold = task.step_values();
        let current = prev.unwrap_or(0);
        let value = if i == 1 {
            gold[0] + offset
        } else if i <= days {
            current + task.delta(i) + offset
        } else {
            current + offset
        };
        Ok(format!(
            "<Step {i}>{}</Step {i}>",
            step_text(task, i, current, value)
        ))
    }
}

/// Parse the question text's own numbers and re-run the arithmetic — an
/// evaluator independent of the task's stored steps.
#[cfg(test)]
fn reevaluate_from_question_text(text: &str) -> Vec<i64> {
    let opening_re = Regex::new(r"had (\d+) clients").unwrap();
    let gain_re = Regex::new(r"gained (\d+) more").unwrap();
    let opening: i64 = opening_re.captures(text).unwrap()[1].parse().unwrap();
    let mut totals = vec![opening];
    for c in gain_re.captures_iter(text) {
        let d: i64 = c[1].parse().unwrap();
        totals.push(totals.last().unwrap() + d);
    }
    totals
}
