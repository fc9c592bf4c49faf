//! Chat-completion clients and the prompt templates used to drive them.

mod http;
mod scripted;
mod templates;
mod transcript;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpClient, HttpConfig, RetryPolicy, API_BASE_ENV, API_KEY_ENV, DEFAULT_API_BASE};
pub use scripted::ScriptedClient;
pub use templates::{
    render_prompt, PromptTemplate, PromptTemplates, TemplateError, TemplateKind, PLACEHOLDERS,
    SYSTEM_PROMPT,
};
pub use transcript::{Exchange, RecordingClient, ReplayClient};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("scripted client exhausted after {0} response(s)")]
    ScriptExhausted(usize),
    #[error("replay diverged at exchange {index}: {reason}")]
    ReplayMismatch { index: usize, reason: String },
    #[error("missing configuration: {0}")]
    Config(String),
    #[error("transcript I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Which pipeline step issued a request. Not sent over the wire; carried
/// so test doubles and transcripts can tell steps apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Generate,
    Verify,
    Rectify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
    pub purpose: Purpose,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::Config("chat request has no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::Config(format!(
                "temperature must be in [0, 2], got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// Anything that can answer a chat request with the assistant's text.
pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<C: LlmClient + ?Sized> LlmClient for std::sync::Arc<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// Model settings shared by every request of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub model_id: String,
    pub generate_temperature: f64,
    pub max_tokens: u32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            model_id: "gpt-4".into(),
            generate_temperature: 0.0,
            max_tokens: 4096,
        }
    }
}

impl ModelSettings {
    /// Verification and rectification always run at temperature 0.
    pub fn request(&self, purpose: Purpose, messages: Vec<Message>) -> ChatRequest {
        let temperature = match purpose {
            Purpose::Generate => self.generate_temperature,
            Purpose::Verify | Purpose::Rectify => 0.0,
        };
        ChatRequest {
            system_prompt: SYSTEM_PROMPT.to_string(),
            messages,
            temperature,
            max_tokens: self.max_tokens,
            model_id: self.model_id.clone(),
            purpose,
        }
    }
}
