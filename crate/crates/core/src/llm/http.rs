use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatRequest, LlmClient, LlmError, Role};

pub const API_KEY_ENV: &str = "FLOWZERO_API_KEY";
pub const API_BASE_ENV: &str = "FLOWZERO_API_BASE";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

/// Exponential backoff for transient failures (transport errors, 429, 5xx).
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_delay: Duration,
    pub max_delay: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            initial_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, retry: u32) -> Duration {
        let factor = self.multiplier.powi(retry as i32);
        self.initial_delay.mul_f64(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: String,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl HttpConfig {
    /// Reads the credential and optional base URL from the environment.
    pub fn from_env() -> Result<Self, LlmError> {
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::Config(format!("{API_KEY_ENV} is not set")))?;
        let base_url = std::env::var(API_BASE_ENV).unwrap_or_else(|_| DEFAULT_API_BASE.into());
        Ok(Self::new(base_url, api_key))
    }

    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
        }
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpClient {
    config: HttpConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Retry(String),
}

impl HttpClient {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .new_agent();
        Self { config, agent }
    }

    pub fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn body(request: &ChatRequest) -> Value {
        let mut messages = vec![json!({ "role": "system", "content": request.system_prompt })];
        messages.extend(request.messages.iter().map(|m| {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            json!({ "role": role, "content": m.content })
        }));
        json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Result<Attempt, LlmError> {
        let response = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(body);
        let mut response = match response {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .unwrap_or_else(|e| format!("<unreadable body: {e}>"));
        match status {
            200..=299 => extract_content(&text).map(Attempt::Done),
            401 | 403 => Err(LlmError::Auth { status, body: text }),
            429 | 500..=599 => Ok(Attempt::Retry(format!("HTTP {status}: {text}"))),
            _ => Err(LlmError::Rejected { status, body: text }),
        }
    }
}

fn extract_content(text: &str) -> Result<String, LlmError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| LlmError::BadResponse("no choices[0].message.content".into()))
}

impl LlmClient for HttpClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let body = Self::body(request);
        let policy = &self.config.retry;
        let mut last = String::new();
        for attempt in 0..=policy.max_retries {
            if attempt > 0 {
                thread::sleep(policy.delay_for(attempt - 1));
            }
            match self.attempt(&body)? {
                Attempt::Done(content) => return Ok(content),
                Attempt::Retry(reason) => last = reason,
            }
        }
        Err(LlmError::Transport {
            attempts: policy.max_retries + 1,
            message: last,
        })
    }
}
