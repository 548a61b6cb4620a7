//! Blocking client for OpenAI-style `/chat/completions` endpoints.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prompts::{render_prompts, Role};
use super::{Capabilities, GeneratorBackend, Sample, SolverBackend};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles afterwards.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL up to and excluding `/chat/completions`, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_in_flight: usize,
    pub timeout_secs: f64,
    pub retry: RetryPolicy,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "base-model".into(),
            api_key_env: "RZERO_API_KEY".into(),
            temperature: 1.0,
            top_p: 0.99,
            max_in_flight: 8,
            timeout_secs: 120.0,
            retry: RetryPolicy::default(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("endpoint: {m}")));
        if !(self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be >= 1");
        }
        if !(self.timeout_secs > 0.0) {
            return bad("timeout_secs must be > 0");
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be >= 1");
        }
        if self.base_url.is_empty() || self.model_name.is_empty() {
            return bad("base_url and model_name are required");
        }
        Ok(())
    }

    fn api_key(&self) -> Result<String> {
        std::env::var(&self.api_key_env).map_err(|_| {
            Error::Config(format!(
                "endpoint credentials missing: environment variable {} is not set",
                self.api_key_env
            ))
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retry(Option<u16>, String),
    Fatal(Option<u16>, String),
}

fn attempt(client: &reqwest::blocking::Client, url: &str, key: &str, body: &serde_json::Value) -> Attempt {
    let resp = match client.post(url).bearer_auth(key).json(body).send() {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(None, e.to_string()),
    };
    let status = resp.status();
    if !status.is_success() {
        let code = status.as_u16();
        let text = resp.text().unwrap_or_default();
        let transient = status.is_server_error() || code == 429 || code == 408;
        let msg = format!("HTTP {code}: {}", text.chars().take(200).collect::<String>());
        return if transient {
            Attempt::Retry(Some(code), msg)
        } else {
            Attempt::Fatal(Some(code), msg)
        };
    }
    match resp.json::<ChatResponse>() {
        Ok(parsed) => match parsed.choices.into_iter().next() {
            Some(c) => Attempt::Done(c.message.content.unwrap_or_default()),
            None => Attempt::Fatal(Some(status.as_u16()), "response has no choices".into()),
        },
        Err(e) => Attempt::Fatal(Some(status.as_u16()), format!("unparseable response: {e}")),
    }
}

/// Issues `n` single-choice completion requests, at most `max_in_flight` at a
/// time, and returns the texts in request order.
pub fn endpoint_sample(
    config: &EndpointConfig,
    system_prompt: &str,
    user_prompt: &str,
    n: usize,
) -> Result<Vec<String>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    config.validate()?;
    let key = config.api_key()?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(config.timeout_secs))
        .build()
        .map_err(|e| Error::Config(format!("http client: {e}")))?;
    let url = config.url();
    let body = json!({
        "model": config.model_name,
        "messages": [
            {"role": "system", "content": system_prompt},
            {"role": "user", "content": user_prompt},
        ],
        "temperature": config.temperature,
        "top_p": config.top_p,
        "n": 1,
    });

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<String>>>> = Mutex::new((0..n).map(|_| None).collect());
    let workers = config.max_in_flight.min(n);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let out = request_with_retry(config, &client, &url, &key, &body);
                let failed = out.is_err();
                slots.lock().expect("slot lock")[i] = Some(out);
                if failed {
                    // stop handing out work; remaining slots stay empty
                    next.store(n, Ordering::SeqCst);
                }
            });
        }
    });

    let slots = slots.into_inner().expect("slot lock");
    let mut out = Vec::with_capacity(n);
    let mut first_err = None;
    for slot in slots {
        match slot {
            Some(Ok(text)) => out.push(text),
            Some(Err(e)) => {
                first_err.get_or_insert(e);
            }
            None => {}
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn request_with_retry(
    config: &EndpointConfig,
    client: &reqwest::blocking::Client,
    url: &str,
    key: &str,
    body: &serde_json::Value,
) -> Result<String> {
    let mut delay = Duration::from_millis(config.retry.backoff_ms);
    let mut last = (None, String::new());
    for n in 1..=config.retry.max_attempts {
        match attempt(client, url, key, body) {
            Attempt::Done(text) => return Ok(text),
            Attempt::Fatal(status, message) => {
                return Err(Error::Transport {
                    attempts: n,
                    status,
                    message,
                })
            }
            Attempt::Retry(status, message) => {
                log::warn!("request attempt {n} failed: {message}");
                last = (status, message);
                if n < config.retry.max_attempts {
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
    Err(Error::Transport {
        attempts: config.retry.max_attempts,
        status: last.0,
        message: last.1,
    })
}

/// Generation-only challenger backed by a remote model.
#[derive(Debug, Clone)]
pub struct EndpointChallenger {
    pub config: EndpointConfig,
}

impl GeneratorBackend for EndpointChallenger {
    fn capabilities(&self) -> Capabilities {
        Capabilities { trainable: false }
    }

    fn sample_questions(&self, n: usize, _seed: u64) -> Result<Vec<Sample>> {
        let (system, user) = render_prompts(Role::Challenger, None)?;
        Ok(endpoint_sample(&self.config, &system, &user, n)?
            .into_iter()
            .map(|text| Sample {
                text,
                action_path: Vec::new(),
                logprob: 0.0,
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct EndpointSolver {
    pub config: EndpointConfig,
}

impl SolverBackend for EndpointSolver {
    fn capabilities(&self) -> Capabilities {
        Capabilities { trainable: false }
    }

    fn sample_answers(&self, question: &str, m: usize, _seed: u64) -> Result<Vec<Sample>> {
        let (system, user) = render_prompts(Role::Solver, Some(question))?;
        Ok(endpoint_sample(&self.config, &system, &user, m)?
            .into_iter()
            .map(|text| Sample {
                text,
                action_path: Vec::new(),
                logprob: 0.0,
            })
            .collect())
    }
}
