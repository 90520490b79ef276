//! Chat-completion backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmlError};

pub mod expr;
pub mod oracle;
pub mod remote;
pub mod scripted;

pub use oracle::{OracleBackend, OracleRole};
pub use remote::RemoteBackend;
pub use scripted::{ScriptEntry, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub retries: u32,
    pub timeout: Duration,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.0,
            max_tokens: 1024,
            retries: 3,
            timeout: Duration::from_secs(120),
        }
    }
}

impl SamplingParams {
    pub fn with_temperature(temperature: f64) -> Self {
        SamplingParams {
            temperature,
            ..Self::default()
        }
    }
}

/// A chat-completion provider. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn chat(&self, messages: &[ChatMessage], sampling: &SamplingParams) -> Result<String>;

    /// Upper bound on useful concurrent calls.
    fn max_concurrency(&self) -> usize {
        usize::MAX
    }

    fn describe(&self) -> String;
}

/// Checks the shared preconditions of `chat`.
pub fn validate_messages(messages: &[ChatMessage]) -> Result<()> {
    let last = messages
        .last()
        .ok_or_else(|| VmlError::invalid("messages must be non-empty"))?;
    if last.role != Role::User {
        return Err(VmlError::invalid("last message must come from the user"));
    }
    if messages.iter().any(|m| m.content.is_empty()) {
        return Err(VmlError::invalid("message content must be non-empty"));
    }
    Ok(())
}
