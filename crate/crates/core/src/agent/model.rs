use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Message;
use crate::tools::{AgentProfile, ToolSchema};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("ModelUnavailable: {0}")]
    Unavailable(String),
    #[error("MalformedScript: step {step}: {reason}")]
    MalformedScript { step: usize, reason: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub agent: AgentProfile,
    pub messages: &'a [Message],
    pub tools: &'a [ToolSchema],
    pub temperature: f64,
    pub thinking_budget: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    /// Assistant message: text and/or tool calls.
    pub message: Message,
    /// Backend-reported usage, used verbatim when present.
    pub usage: Option<Usage>,
    /// Latency charged to this call on the simulated clock.
    pub latency: Duration,
}

#[async_trait]
pub trait ModelClient: Send + Sync + std::fmt::Debug {
    async fn complete(&self, request: CompletionRequest<'_>) -> Result<Completion, ModelError>;

    /// Cheap reachability probe.
    async fn health(&self) -> Result<(), ModelError> {
        Ok(())
    }

    /// True when timings come from the simulated clock rather than the wall.
    fn simulated_clock(&self) -> bool {
        false
    }

    fn describe(&self) -> String;
}
