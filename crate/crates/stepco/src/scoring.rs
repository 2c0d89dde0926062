//! Step-prefix verification.
//!
//! A scorer maps "question + steps 1..τ" to the probability that the prefix
//! leads to the correct final answer. The correction loop only needs two
//! things from this module: [`score_suffix`] (probabilities for every prefix
//! ending at or after the first unverified step) and [`first_error_index`]
//! (the earliest step scoring strictly below the threshold).

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::{render_tagged_texts, Question, ReasoningPath};
use crate::simenv::OracleScorer;

/// The scorer input convention: question line, answer line, then steps 1..τ
/// as numbered tags. Shared by verification and by annotation example
/// rendering so trained scorers see the format they were supervised on.
pub fn render_prefix_prompt(question_text: &str, step_texts: &[&str]) -> String {
    format!(
        "Q: {}\nA: {}",
        question_text,
        render_tagged_texts(step_texts.iter().copied())
    )
}

/// Prefix prompt for steps 1..=tau of `path`. `tau` is 1-based and must not
/// exceed the path length; scoring an empty prefix is meaningless.
pub fn build_prefix_prompt(
    q: &Question,
    path: &ReasoningPath,
    tau: usize,
) -> Result<String> {
    if tau < 1 || tau > path.len() {
        return Err(Error::IndexOutOfRange { index: tau, len: path.len() });
    }
    let texts: Vec<&str> =
        path.steps[..tau].iter().map(|s| s.text.as_str()).collect();
    Ok(render_prefix_prompt(&q.text, &texts))
}

/// Smallest 1-based index `i` with `k_prev <= i <= probs.len()` whose
/// probability is strictly below `theta`. `probs` is aligned to absolute
/// step indices (`probs[0]` is step 1). A step scoring exactly `theta`
/// counts as verified.
pub fn first_error_index(probs: &[f64], theta: f64, k_prev: usize) -> Option<usize> {
    let start = k_prev.max(1);
    (start..=probs.len()).find(|&i| probs[i - 1] < theta)
}

/// Outcome of verifying the unverified suffix of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// One probability per scored prefix, aligned to the scored indices:
    /// `probabilities[0]` belongs to step `scored_from`.
    pub probabilities: Vec<f64>,
    /// Absolute 1-based index of the first step below threshold, if any.
    pub first_error: Option<usize>,
    /// The first step that was scored in this round (`k^(t-1)`).
    pub scored_from: usize,
}

/// Calibration error of a scorer against labeled prefix examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub mse: f64,
    pub n: usize,
}

/// Where probabilities come from.
pub enum ScorerBackend {
    /// POST `{endpoint}/score` with `{"prompt": ...}`, expect
    /// `{"probability": ...}`.
    RemoteHttp(RemoteScorer),
    /// Exact (or noise-injected) ground truth over synthetic tasks.
    Oracle(OracleScorer),
    /// Always the same probability; handy for degenerate-path tests.
    Constant(f64),
    /// Replay table keyed by the full prefix prompt.
    Table(HashMap<String, f64>),
}

impl ScorerBackend {
    pub fn constant(p: f64) -> ScorerBackend {
        ScorerBackend::Constant(p)
    }

    pub fn table<I, K>(entries: I) -> ScorerBackend
    where
        I: IntoIterator<Item = (K, f64)>,
        K: Into<String>,
    {
        ScorerBackend::Table(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    /// Score one prefix prompt. Out-of-range values are clamped to [0, 1]
    /// with a warning rather than failing the run.
    pub fn score(&self, prompt: &str) -> Result<f64> {
        let raw = match self {
            ScorerBackend::RemoteHttp(remote) => remote.score(prompt)?,
            ScorerBackend::Oracle(oracle) => oracle.score(prompt)?,
            ScorerBackend::Constant(p) => *p,
            ScorerBackend::Table(map) => *map.get(prompt).ok_or_else(|| {
                Error::ScorerMalformed(format!(
                    "no table entry for prompt starting {:?}",
                    prompt.chars().take(60).collect::<String>()
                ))
            })?,
        };
        if !raw.is_finite() {
            return Err(Error::ScorerMalformed(format!(
                "probability {raw} is not finite"
            )));
        }
        if !(0.0..=1.0).contains(&raw) {
            tracing::warn!(probability = raw, "scorer probability out of [0,1]; clamping");
        }
        Ok(raw.clamp(0.0, 1.0))
    }
}

/// Score every prefix ending at steps `from..=path.len()`.
pub fn score_suffix(
    scorer: &ScorerBackend,
    q: &Question,
    path: &ReasoningPath,
    from: usize,
) -> Result<Vec<f64>> {
    if from < 1 || from > path.len() {
        return Err(Error::IndexOutOfRange { index: from, len: path.len() });
    }
    (from..=path.len())
        .map(|tau| {
            let prompt = build_prefix_prompt(q, path, tau)?;
            scorer.score(&prompt)
        })
        .collect()
}

/// Mean squared error of the scorer's probabilities against the target
/// labels of an annotation dataset.
pub fn calibration_mse(
    scorer: &ScorerBackend,
    dataset: &[crate::annotation::AnnotatedExample],
) -> Result<CalibrationStats> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    for ex in dataset {
        let p = scorer.score(&ex.x)?;
        let d = p - ex.y;
        sum += d * d;
    }
    Ok(CalibrationStats { mse: sum / dataset.len() as f64, n: dataset.len() })
}

/// Settings for the remote scorer endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteScorerConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Total attempts (first try included).
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    /// Initial backoff in milliseconds; doubles per retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_secs() -> u64 {
    30
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

pub struct RemoteScorer {
    cfg: RemoteScorerConfig,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    probability: f64,
}

impl RemoteScorer {
    pub fn new(cfg: RemoteScorerConfig) -> Result<RemoteScorer> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::ScorerUnavailable(e.to_string()))?;
        Ok(RemoteScorer { cfg, http })
    }

    /// POST the prompt. Retries transport failures, 5xx, and malformed
    /// bodies with exponential backoff; any 4xx is a hard
    /// [`Error::ScorerMalformed`] (our request was wrong — retrying cannot
    /// help).
    fn score(&self, prompt: &str) -> Result<f64> {
        let url = format!("{}/score", self.cfg.endpoint.trim_end_matches('/'));
        let mut backoff = Duration::from_millis(self.cfg.backoff_ms);
        let attempts = self.cfg.attempts.max(1);
        let mut last_failure = String::new();

        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            let resp = match self
                .http
                .post(&url)
                .json(&ScoreRequest { prompt })
                .send()
            {
                Ok(r) => r,
                Err(e) => {
                    last_failure = format!("transport: {e}");
                    tracing::warn!(attempt, error = %e, "scorer request failed");
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if (400..500).contains(&status) {
                return Err(Error::ScorerMalformed(format!("status {status}")));
            }
            if status >= 500 {
                last_failure = format!("status {status}");
                tracing::warn!(attempt, status, "scorer request will be retried");
                continue;
            }
            let text =
                resp.text().map_err(|e| Error::ScorerUnavailable(e.to_string()))?;
            match serde_json::from_str::<ScoreResponse>(&text) {
                Ok(parsed) => return Ok(parsed.probability),
                Err(e) => {
                    last_failure = format!("malformed body: {e}");
                    tracing::warn!(attempt, error = %e, "scorer body unusable; retrying");
                }
            }
        }
        Err(Error::ScorerUnavailable(format!(
            "retries exhausted after {attempts} attempts ({last_failure})"
        )))
    }
}
