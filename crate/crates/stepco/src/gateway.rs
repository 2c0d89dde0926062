//! Generator backends.
//!
//! [`GeneratorBackend`] abstracts "give me a completion for this prompt":
//! an OpenAI-compatible chat endpoint, a scripted stand-in for tests, or the
//! deterministic simulated generator from [`crate::simenv`]. All variants
//! report token usage; when the backend does not supply real counts the
//! usage is estimated (`ceil(utf8_len / 4)`) and flagged as such.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simenv::SimulatedGenerator;

/// Token usage for one completion. `estimated` is true when the counts came
/// from the byte-length heuristic rather than the provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageCounts {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
}

/// Rough token count: one token per 4 UTF-8 bytes, rounded up.
pub fn count_tokens_estimate(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

pub(crate) fn estimated_usage(prompt: &str, completion: &str) -> UsageCounts {
    UsageCounts {
        prompt_tokens: count_tokens_estimate(prompt),
        completion_tokens: count_tokens_estimate(completion),
        estimated: true,
    }
}

/// A canned generator for tests and replays: either a fixed response
/// sequence (single-consumer) or a prompt -> response map (order-free,
/// safe under concurrency).
pub enum ScriptedGenerator {
    Sequence(Mutex<VecDeque<String>>),
    ByPrompt(HashMap<String, String>),
}

impl ScriptedGenerator {
    pub fn sequence<I, S>(items: I) -> ScriptedGenerator
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedGenerator::Sequence(Mutex::new(
            items.into_iter().map(Into::into).collect(),
        ))
    }

    pub fn by_prompt<I, K, V>(items: I) -> ScriptedGenerator
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        ScriptedGenerator::ByPrompt(
            items.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        )
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        match self {
            ScriptedGenerator::Sequence(q) => q
                .lock()
                .expect("scripted generator lock poisoned")
                .pop_front()
                .ok_or_else(|| {
                    Error::ScriptExhausted("response sequence is empty".into())
                }),
            ScriptedGenerator::ByPrompt(map) => {
                map.get(prompt).cloned().ok_or_else(|| {
                    Error::ScriptExhausted(format!(
                        "no scripted response for prompt starting {:?}",
                        prompt.chars().take(60).collect::<String>()
                    ))
                })
            }
        }
    }
}

/// Connection settings for an OpenAI-compatible `/v1/chat/completions`
/// endpoint. The API key is read from the environment variable named by
/// `api_key_env` and never logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteChatConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Total attempts (first try included) for retryable failures.
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    /// Initial backoff in milliseconds; doubles per retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub stop: Option<Vec<String>>,
}

fn default_timeout_secs() -> u64 {
    60
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

pub struct RemoteChatClient {
    cfg: RemoteChatConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a Vec<String>>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl RemoteChatClient {
    pub fn new(cfg: RemoteChatConfig) -> Result<RemoteChatClient> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::GenerationFailed(format!(
                    "api key environment variable {var} is not set"
                ))
            })?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::GenerationFailed(e.to_string()))?;
        Ok(RemoteChatClient { cfg, api_key, http })
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    /// One chat completion. Retries 429 and 5xx with exponential backoff;
    /// 401/403 fail immediately as [`Error::AuthFailed`]; other 4xx fail
    /// immediately as [`Error::GenerationFailed`].
    fn complete(&self, prompt: &str, temperature: f64) -> Result<(String, UsageCounts)> {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature,
            max_tokens: self.cfg.max_tokens,
            stop: self.cfg.stop.as_ref(),
        };
        let url = self.endpoint();
        let mut backoff = Duration::from_millis(self.cfg.backoff_ms);
        let attempts = self.cfg.attempts.max(1);
        let mut last_failure = String::new();

        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            let mut req = self.http.post(&url).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last_failure = format!("transport: {e}");
                    tracing::warn!(attempt, error = %e, "chat request failed");
                    continue;
                }
            };
            let status = resp.status().as_u16();
            match status {
                200..=299 => {
                    let text = resp
                        .text()
                        .map_err(|e| Error::GenerationFailed(e.to_string()))?;
                    let parsed: ChatResponse = serde_json::from_str(&text)
                        .map_err(|e| {
                            Error::GenerationFailed(format!("bad response body: {e}"))
                        })?;
                    let choice = parsed.choices.into_iter().next().ok_or_else(|| {
                        Error::GenerationFailed("response had no choices".into())
                    })?;
                    let usage = match parsed.usage {
                        Some(u) => UsageCounts {
                            prompt_tokens: u.prompt_tokens,
                            completion_tokens: u.completion_tokens,
                            estimated: false,
                        },
                        None => estimated_usage(prompt, &choice.message.content),
                    };
                    return Ok((choice.message.content, usage));
                }
                401 | 403 => return Err(Error::AuthFailed(status)),
                429 | 500..=599 => {
                    last_failure = format!("status {status}");
                    tracing::warn!(attempt, status, "chat request will be retried");
                }
                _ => {
                    return Err(Error::GenerationFailed(format!(
                        "unexpected status {status}"
                    )))
                }
            }
        }
        Err(Error::GenerationFailed(format!(
            "retries exhausted after {attempts} attempts ({last_failure})"
        )))
    }
}

/// Where completions come from.
pub enum GeneratorBackend {
    RemoteChat(RemoteChatClient),
    Scripted(ScriptedGenerator),
    Simulated(SimulatedGenerator),
}

impl GeneratorBackend {
    pub fn scripted_sequence<I, S>(items: I) -> GeneratorBackend
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        GeneratorBackend::Scripted(ScriptedGenerator::sequence(items))
    }

    pub fn scripted_by_prompt<I, K, V>(items: I) -> GeneratorBackend
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        GeneratorBackend::Scripted(ScriptedGenerator::by_prompt(items))
    }

    /// Produce one completion. `temperature` is passed through to remote
    /// backends; `seed` drives the simulated backend (remote sampling is
    /// provider-side and not replayable).
    pub fn complete(
        &self,
        prompt: &str,
        temperature: f64,
        seed: u64,
    ) -> Result<(String, UsageCounts)> {
        match self {
            GeneratorBackend::RemoteChat(client) => client.complete(prompt, temperature),
            GeneratorBackend::Scripted(script) => {
                let text = script.complete(prompt)?;
                let usage = estimated_usage(prompt, &text);
                Ok((text, usage))
            }
            GeneratorBackend::Simulated(sim) => {
                let text = sim.complete(prompt, seed)?;
                let usage = estimated_usage(prompt, &text);
                Ok((text, usage))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(count_tokens_estimate(""), 0);
        assert_eq!(count_tokens_estimate("abcd"), 1);
        assert_eq!(count_tokens_estimate("abcdefgh"), 2);
        assert_eq!(count_tokens_estimate("abcdefghi"), 3);
        // Multibyte characters count by bytes, not chars.
        assert_eq!(count_tokens_estimate("ππ"), 1);
    }

    #[test]
    fn scripted_sequence_in_order_then_exhausts() {
        let g = GeneratorBackend::scripted_sequence(["one", "two"]);
        let (a, usage) = g.complete("p", 0.7, 0).unwrap();
        assert_eq!(a, "one");
        assert!(usage.estimated);
        assert_eq!(usage.prompt_tokens, 1);
        assert_eq!(g.complete("p", 0.7, 0).unwrap().0, "two");
        assert!(matches!(
            g.complete("p", 0.7, 0),
            Err(Error::ScriptExhausted(_))
        ));
    }

    #[test]
    fn scripted_by_prompt_is_keyed() {
        let g = GeneratorBackend::Scripted(ScriptedGenerator::by_prompt([
            ("alpha", "1"),
            ("beta", "2"),
        ]));
        assert_eq!(g.complete("beta", 0.7, 0).unwrap().0, "2");
        assert_eq!(g.complete("alpha", 0.7, 0).unwrap().0, "1");
        assert_eq!(g.complete("alpha", 0.7, 0).unwrap().0, "1");
        assert!(matches!(
            g.complete("gamma", 0.7, 0),
            Err(Error::ScriptExhausted(_))
        ));
    }
}
