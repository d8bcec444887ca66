//! Deterministic replay backend.
//!
//! A script is a JSON list of steps (or `{"default_latency_ms": n, "steps": [...]}`).
//! Each agent profile walks its own steps strictly in order:
//!
//! ```json
//! {"agent": "query", "turn": 0, "pattern": "ozempic",
//!  "respond": {"text": "...", "tool_calls": [{"name": "search", "arguments": {...}}]},
//!  "repeat": 1, "latency_ms": 900}
//! ```
//!
//! `turn` is the zero-based user turn of the conversation, `pattern` a
//! case-insensitive regex over the text of the last message, and `repeat`
//! either a count or `"forever"`. A step whose conditions do not hold is a
//! scripted fault, reported as the model being unavailable.

use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use regex::{Regex, RegexBuilder};
use serde::Deserialize;
use serde_json::Value;

use super::model::{Completion, CompletionRequest, ModelClient, ModelError};
use super::{Message, Role};
use crate::tools::{AgentProfile, ToolCall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ScriptAgent {
    Query,
    Retrieval,
}

impl ScriptAgent {
    fn of(profile: AgentProfile) -> Self {
        match profile {
            AgentProfile::QueryAgent => ScriptAgent::Query,
            AgentProfile::RetrievalAgent => ScriptAgent::Retrieval,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            ScriptAgent::Query => "q",
            ScriptAgent::Retrieval => "r",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
enum Repeat {
    Times(u32),
    Forever(Forever),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Forever {
    Forever,
}

#[derive(Debug, Clone, Deserialize)]
struct RawCall {
    name: String,
    #[serde(default)]
    arguments: Option<Value>,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct RawResponse {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tool_calls: Vec<RawCall>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    #[serde(default = "default_agent")]
    agent: ScriptAgent,
    #[serde(default)]
    turn: Option<usize>,
    #[serde(default)]
    pattern: Option<String>,
    respond: RawResponse,
    #[serde(default)]
    repeat: Option<Repeat>,
    #[serde(default)]
    latency_ms: Option<u64>,
    #[serde(default)]
    #[allow(dead_code)]
    note: Option<String>,
}

fn default_agent() -> ScriptAgent {
    ScriptAgent::Query
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawScript {
    Steps(Vec<RawStep>),
    Full {
        #[serde(default)]
        default_latency_ms: u64,
        steps: Vec<RawStep>,
    },
}

#[derive(Debug, Clone)]
struct Step {
    agent: ScriptAgent,
    turn: Option<usize>,
    pattern: Option<Regex>,
    text: Option<String>,
    calls: Vec<(String, Value)>,
    repeat: Option<u32>,
    latency: Duration,
}

#[derive(Debug, Default)]
struct Cursor {
    next: usize,
    used: u32,
}

#[derive(Debug, Default)]
struct State {
    query: Cursor,
    retrieval: Cursor,
    calls_issued: u64,
}

#[derive(Debug)]
pub struct ScriptedModel {
    query: Vec<Step>,
    retrieval: Vec<Step>,
    state: Mutex<State>,
    label: String,
}

fn malformed(step: usize, reason: impl Into<String>) -> ModelError {
    ModelError::MalformedScript {
        step,
        reason: reason.into(),
    }
}

impl ScriptedModel {
    pub fn from_json_str(text: &str, label: &str) -> Result<Self, ModelError> {
        let raw: RawScript = serde_json::from_str(text).map_err(|e| {
            let step = serde_json::from_str::<Vec<Value>>(text)
                .ok()
                .and_then(|items| {
                    items
                        .iter()
                        .position(|v| serde_json::from_value::<RawStep>(v.clone()).is_err())
                })
                .unwrap_or(0);
            malformed(step, e.to_string())
        })?;
        let (default_latency, raw_steps) = match raw {
            RawScript::Steps(s) => (0, s),
            RawScript::Full {
                default_latency_ms,
                steps,
            } => (default_latency_ms, steps),
        };
        let mut query = Vec::new();
        let mut retrieval = Vec::new();
        for (i, raw) in raw_steps.into_iter().enumerate() {
            let pattern = raw
                .pattern
                .as_deref()
                .map(|p| {
                    RegexBuilder::new(p)
                        .case_insensitive(true)
                        .build()
                        .map_err(|e| malformed(i, format!("bad pattern: {e}")))
                })
                .transpose()?;
            if raw.respond.text.is_none() && raw.respond.tool_calls.is_empty() {
                return Err(malformed(i, "respond needs text or tool_calls"));
            }
            let repeat = match raw.repeat {
                None => Some(1),
                Some(Repeat::Times(0)) => return Err(malformed(i, "repeat must be at least 1")),
                Some(Repeat::Times(n)) => Some(n),
                Some(Repeat::Forever(_)) => None,
            };
            let mut calls = Vec::new();
            for c in raw.respond.tool_calls {
                let args = c.arguments.unwrap_or_else(|| Value::Object(Default::default()));
                if !args.is_object() {
                    return Err(malformed(i, format!("arguments of `{}` must be an object", c.name)));
                }
                calls.push((c.name, args));
            }
            let step = Step {
                agent: raw.agent,
                turn: raw.turn,
                pattern,
                text: raw.respond.text,
                calls,
                repeat,
                latency: Duration::from_millis(raw.latency_ms.unwrap_or(default_latency)),
            };
            match step.agent {
                ScriptAgent::Query => query.push(step),
                ScriptAgent::Retrieval => retrieval.push(step),
            }
        }
        Ok(ScriptedModel {
            query,
            retrieval,
            state: Mutex::new(State::default()),
            label: label.to_string(),
        })
    }

    pub fn steps_remaining(&self) -> (usize, usize) {
        let s = self.state.lock().expect("script state poisoned");
        (
            self.query.len().saturating_sub(s.query.next),
            self.retrieval.len().saturating_sub(s.retrieval.next),
        )
    }
}

/// Read a script file.
pub fn load_script(path: impl AsRef<Path>) -> Result<ScriptedModel, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| malformed(0, format!("{}: {e}", path.display())))?;
    ScriptedModel::from_json_str(&text, &path.display().to_string())
}

fn message_text(m: &Message) -> String {
    match &m.tool_result {
        Some(r) => r.content.clone(),
        None => m.content.clone(),
    }
}

#[async_trait]
impl ModelClient for ScriptedModel {
    async fn complete(&self, request: CompletionRequest<'_>) -> Result<Completion, ModelError> {
        let agent = ScriptAgent::of(request.agent);
        let steps = match agent {
            ScriptAgent::Query => &self.query,
            ScriptAgent::Retrieval => &self.retrieval,
        };
        let mut state = self.state.lock().expect("script state poisoned");
        let cursor = match agent {
            ScriptAgent::Query => &mut state.query,
            ScriptAgent::Retrieval => &mut state.retrieval,
        };
        let index = cursor.next;
        let Some(step) = steps.get(index) else {
            return Err(ModelError::Unavailable(format!(
                "script exhausted for the {} agent",
                request.agent.as_str()
            )));
        };
        let turn = request
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .count()
            .saturating_sub(1);
        if let Some(expected) = step.turn {
            if expected != turn && agent == ScriptAgent::Query {
                return Err(ModelError::Unavailable(format!(
                    "script step {index} expects turn {expected}, conversation is at turn {turn}"
                )));
            }
        }
        if let Some(pattern) = &step.pattern {
            let last = request.messages.last().map(message_text).unwrap_or_default();
            if !pattern.is_match(&last) {
                return Err(ModelError::Unavailable(format!(
                    "script step {index} pattern /{}/ does not match the last message",
                    pattern.as_str()
                )));
            }
        }
        cursor.used += 1;
        if step.repeat.is_some_and(|n| cursor.used >= n) {
            cursor.next += 1;
            cursor.used = 0;
        }
        let mut tool_calls = Vec::with_capacity(step.calls.len());
        for (name, arguments) in &step.calls {
            state.calls_issued += 1;
            tool_calls.push(ToolCall {
                call_id: format!("call-{}{}", agent.tag(), state.calls_issued),
                name: name.clone(),
                arguments: arguments.clone(),
            });
        }
        Ok(Completion {
            message: Message::assistant(step.text.clone().unwrap_or_default(), tool_calls),
            usage: None,
            latency: step.latency,
        })
    }

    fn simulated_clock(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("script:{}", self.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(agent: AgentProfile, messages: &'a [Message]) -> CompletionRequest<'a> {
        CompletionRequest {
            agent,
            messages,
            tools: &[],
            temperature: 0.0,
            thinking_budget: 0,
        }
    }

    #[tokio::test]
    async fn one_step_hello() {
        let m = ScriptedModel::from_json_str(r#"[{"respond": {"text": "hello"}}]"#, "t").unwrap();
        let msgs = [Message::user("hi")];
        let c = m.complete(req(AgentProfile::QueryAgent, &msgs)).await.unwrap();
        assert_eq!(c.message.content, "hello");
        assert!(c.message.tool_calls.is_empty());
        assert!(matches!(
            m.complete(req(AgentProfile::QueryAgent, &msgs)).await,
            Err(ModelError::Unavailable(_))
        ));
    }

    #[tokio::test]
    async fn cursors_are_per_agent_and_ids_deterministic() {
        let text = r#"[
            {"agent": "query", "respond": {"tool_calls": [{"name": "retrieve", "arguments": {"term": "x"}}]}},
            {"agent": "retrieval", "respond": {"tool_calls": [{"name": "search", "arguments": {"key": "x", "mode": "concepts"}}]}},
            {"agent": "query", "respond": {"text": "done"}}
        ]"#;
        let run = || async {
            let m = ScriptedModel::from_json_str(text, "t").unwrap();
            let msgs = [Message::user("q")];
            let a = m.complete(req(AgentProfile::QueryAgent, &msgs)).await.unwrap();
            let b = m.complete(req(AgentProfile::RetrievalAgent, &msgs)).await.unwrap();
            let c = m.complete(req(AgentProfile::QueryAgent, &msgs)).await.unwrap();
            (a, b, c)
        };
        let (a, b, c) = run().await;
        assert_eq!(a.message.tool_calls[0].call_id, "call-q1");
        assert_eq!(b.message.tool_calls[0].call_id, "call-r2");
        assert_eq!(c.message.content, "done");
        assert_eq!(run().await, (a, b, c));
    }

    #[tokio::test]
    async fn pattern_and_turn_are_enforced() {
        let m = ScriptedModel::from_json_str(
            r#"[{"turn": 1, "pattern": "ozempic", "respond": {"text": "ok"}}]"#,
            "t",
        )
        .unwrap();
        let turn0 = [Message::user("ozempic")];
        assert!(m.complete(req(AgentProfile::QueryAgent, &turn0)).await.is_err());
        let wrong = [Message::user("a"), Message::user("something else")];
        assert!(m.complete(req(AgentProfile::QueryAgent, &wrong)).await.is_err());
        let right = [Message::user("a"), Message::user("Patients on OZEMPIC")];
        assert!(m.complete(req(AgentProfile::QueryAgent, &right)).await.is_ok());
    }

    #[tokio::test]
    async fn repeat_counts_and_forever() {
        let m = ScriptedModel::from_json_str(
            r#"[{"respond": {"text": "a"}, "repeat": 2}, {"respond": {"text": "b"}, "repeat": "forever"}]"#,
            "t",
        )
        .unwrap();
        let msgs = [Message::user("q")];
        let mut out = Vec::new();
        for _ in 0..5 {
            out.push(m.complete(req(AgentProfile::QueryAgent, &msgs)).await.unwrap().message.content);
        }
        assert_eq!(out, ["a", "a", "b", "b", "b"]);
    }

    #[test]
    fn malformed_scripts() {
        let bad = [
            r#"[{"respond": {}}]"#,
            r#"[{"respond": {"text": "x"}, "repeat": 0}]"#,
            r#"[{"respond": {"text": "x"}, "pattern": "("}]"#,
            r#"[{"respond": {"text": "x"}}, {"respond": {"text": "y"}, "bogus": 1}]"#,
            r#"[{"respond": {"tool_calls": [{"name": "search", "arguments": [1]}]}}]"#,
            "{",
        ];
        for text in bad {
            assert!(
                matches!(ScriptedModel::from_json_str(text, "t"), Err(ModelError::MalformedScript { .. })),
                "{text}"
            );
        }
        match ScriptedModel::from_json_str(
            r#"[{"respond": {"text": "x"}}, {"respond": {"text": "y"}, "bogus": 1}]"#,
            "t",
        ) {
            Err(ModelError::MalformedScript { step, .. }) => assert_eq!(step, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn object_form_sets_default_latency() {
        let m = ScriptedModel::from_json_str(
            r#"{"default_latency_ms": 250, "steps": [{"respond": {"text": "x"}}, {"respond": {"text": "y"}, "latency_ms": 5}]}"#,
            "t",
        )
        .unwrap();
        assert_eq!(m.query[0].latency, Duration::from_millis(250));
        assert_eq!(m.query[1].latency, Duration::from_millis(5));
    }
}
