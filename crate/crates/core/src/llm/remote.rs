//! Chat-completion wire-protocol client for live runs.
//!
//! Speaks the widely used request shape (model, message list, temperature)
//! against a configured base URL, with the bearer credential taken from an
//! environment variable. Temperature is pinned to 0.

use serde::{Deserialize, Serialize};
use std::time::Duration;

use super::LlmError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer credential.
    #[serde(default = "default_credential_var")]
    pub credential_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_credential_var() -> String {
    "FLAGRUN_API_KEY".to_string()
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f32,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

/// Outcome of one remote call: either an answer with usage counts, or a
/// timeout the caller records as an error exchange.
pub enum RemoteOutcome {
    Answer {
        text: String,
        tokens_in: u64,
        tokens_out: u64,
    },
    TimedOut,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::BackendUnreachable(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn complete(&self, system: &str, user: &str) -> Result<RemoteOutcome, LlmError> {
        let body = WireRequest {
            model: &self.config.model,
            messages: vec![
                WireMessage {
                    role: "system",
                    content: system,
                },
                WireMessage {
                    role: "user",
                    content: user,
                },
            ],
            temperature: 0.0,
        };
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let credential = std::env::var(&self.config.credential_env).ok();
        let mut last_err = String::new();
        for _ in 0..=self.config.retries {
            let mut req = self.client.post(&url).json(&body);
            if let Some(token) = &credential {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(response) => {
                    let status = response.status();
                    if !status.is_success() {
                        return Err(LlmError::MalformedResponse(format!(
                            "backend returned status {status}"
                        )));
                    }
                    let reply: WireReply = response
                        .json()
                        .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
                    let choice = reply.choices.into_iter().next().ok_or_else(|| {
                        LlmError::MalformedResponse("reply carried no choices".into())
                    })?;
                    let usage = reply.usage.unwrap_or_default();
                    return Ok(RemoteOutcome::Answer {
                        text: choice.message.content,
                        tokens_in: usage.prompt_tokens,
                        tokens_out: usage.completion_tokens,
                    });
                }
                Err(e) if e.is_timeout() => return Ok(RemoteOutcome::TimedOut),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(LlmError::BackendUnreachable(last_err))
    }
}
