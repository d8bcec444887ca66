//! Query agent and retrieval sub-agent loops.
//!
//! A turn appends the user's message to the session history and then
//! alternates model completions with sequential tool dispatch until the
//! model answers in plain text, the iteration cap is hit, the backend
//! fails, or the model calls a tool it was not given. Each `retrieve` call
//! spins up a retrieval agent whose history starts from exactly three
//! messages: its system prompt, the term and the intent.

mod http;
mod model;
mod prompt;
mod scripted;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::mpsc::UnboundedSender;

use crate::tools::{
    list_tools, AgentProfile, Delegator, Effect, Shortlist, ToolCall, ToolConfig, ToolGateway,
    ToolResult,
};

pub use http::{parse_response, request_body, EndpointConfig, HttpModel};
pub use model::{Completion, CompletionRequest, ModelClient, ModelError, Usage};
pub use prompt::{render_template, PromptError, PromptSet, ACTIVE_CONCEPT_ID};
pub use scripted::{load_script, ScriptedModel};

pub const DEFAULT_MAX_ITERATIONS: u32 = 12;
pub const DEFAULT_SUB_AGENT_MAX_ITERATIONS: u32 = 8;
pub const LIMIT_REACHED: &str = "limit reached";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_result: Option<ToolResult>,
}

impl Message {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_result: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>, tool_calls: Vec<ToolCall>) -> Self {
        Message {
            tool_calls,
            ..Message::plain(Role::Assistant, content)
        }
    }

    pub fn tool(result: ToolResult) -> Self {
        Message {
            tool_result: Some(result),
            ..Message::plain(Role::Tool, "")
        }
    }

    fn char_count(&self) -> usize {
        let calls: usize = self
            .tool_calls
            .iter()
            .map(|c| c.name.chars().count() + c.arguments.to_string().chars().count())
            .sum();
        let result = self
            .tool_result
            .as_ref()
            .map_or(0, |r| r.content.chars().count());
        self.content.chars().count() + calls + result
    }
}

/// Token estimate used when the backend reports no usage: a quarter of the
/// characters in contents, tool-call names and arguments, and tool results,
/// rounded up.
pub fn count_tokens(messages: &[Message]) -> u64 {
    let chars: usize = messages.iter().map(Message::char_count).sum();
    chars.div_ceil(4) as u64
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Script file, or `builtin:<name>` for a bundled script.
    Script { path: String },
    Endpoint(EndpointConfig),
}

pub fn build_model(spec: &ModelSpec) -> Result<Arc<dyn ModelClient>, ModelError> {
    match spec {
        ModelSpec::Script { path } => {
            let model = match path.strip_prefix("builtin:") {
                Some(name) => {
                    let text = crate::assets::script(name).ok_or_else(|| ModelError::MalformedScript {
                        step: 0,
                        reason: format!("no bundled script named `{name}`"),
                    })?;
                    ScriptedModel::from_json_str(text, path)?
                }
                None => load_script(PathBuf::from(path))?,
            };
            Ok(Arc::new(model))
        }
        ModelSpec::Endpoint(e) => Ok(Arc::new(HttpModel::new(e.clone()))),
    }
}

fn default_max_iterations() -> u32 {
    DEFAULT_MAX_ITERATIONS
}

fn default_sub_iterations() -> u32 {
    DEFAULT_SUB_AGENT_MAX_ITERATIONS
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u32,
    #[serde(default = "yes")]
    pub delegation: bool,
    #[serde(default = "yes")]
    pub kb_enabled: bool,
    #[serde(default = "default_sub_iterations")]
    pub sub_agent_max_iterations: u32,
    #[serde(default)]
    pub thinking_budget: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            delegation: true,
            kb_enabled: true,
            sub_agent_max_iterations: DEFAULT_SUB_AGENT_MAX_ITERATIONS,
            thinking_budget: 0,
            temperature: 0.0,
            model: None,
        }
    }
}

/// Per-session adjustments accepted by the service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(default)]
    pub delegation: Option<bool>,
    #[serde(default)]
    pub kb_enabled: Option<bool>,
    #[serde(default)]
    pub max_iterations: Option<u32>,
    #[serde(default)]
    pub sub_agent_max_iterations: Option<u32>,
    #[serde(default)]
    pub thinking_budget: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{0} must be at least 1")]
    ZeroCap(&'static str),
}

impl AgentConfig {
    pub fn tool_config(&self) -> ToolConfig {
        ToolConfig {
            delegation: self.delegation,
            kb_enabled: self.kb_enabled,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_iterations == 0 {
            return Err(ConfigError::ZeroCap("max_iterations"));
        }
        if self.sub_agent_max_iterations == 0 {
            return Err(ConfigError::ZeroCap("sub_agent_max_iterations"));
        }
        Ok(())
    }

    pub fn with_overrides(&self, o: &ConfigOverrides) -> Result<AgentConfig, ConfigError> {
        let mut c = self.clone();
        if let Some(v) = o.delegation {
            c.delegation = v;
        }
        if let Some(v) = o.kb_enabled {
            c.kb_enabled = v;
        }
        if let Some(v) = o.max_iterations {
            c.max_iterations = v;
        }
        if let Some(v) = o.sub_agent_max_iterations {
            c.sub_agent_max_iterations = v;
        }
        if let Some(v) = o.thinking_budget {
            c.thinking_budget = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum TurnOutcome {
    Completed,
    IterationLimit,
    ModelUnavailable(String),
    ProtocolViolation(String),
}

impl TurnOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, TurnOutcome::Completed)
    }

    pub fn describe(&self) -> String {
        match self {
            TurnOutcome::Completed => "completed".into(),
            TurnOutcome::IterationLimit => "IterationLimit".into(),
            TurnOutcome::ModelUnavailable(c) => format!("ModelUnavailable: {c}"),
            TurnOutcome::ProtocolViolation(c) => format!("ProtocolViolation: {c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedCohort {
    pub cohort_id: String,
    pub size: usize,
    pub expr: String,
}

/// Record of one retrieval sub-agent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTrajectory {
    pub term: String,
    pub intent: String,
    /// Size of the history the sub-agent started from.
    pub initial_messages: usize,
    pub messages: Vec<Message>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub tool_invocations: usize,
    pub elapsed_seconds: f64,
    pub shortlist: Shortlist,
    pub outcome: TurnOutcome,
}

impl SubTrajectory {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Record of one user turn of the query agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub session_id: String,
    pub turn: usize,
    /// Messages appended to the session during this turn.
    pub messages: Vec<Message>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub tool_invocations: usize,
    pub elapsed_seconds: f64,
    pub sub_trajectories: Vec<SubTrajectory>,
    pub outcome: TurnOutcome,
    pub final_text: String,
    pub cohorts: Vec<CreatedCohort>,
    pub urls: Vec<String>,
}

impl Trajectory {
    /// Main-agent tokens plus every sub-agent's.
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens
            + self.completion_tokens
            + self.sub_trajectories.iter().map(SubTrajectory::tokens).sum::<u64>()
    }

    pub fn total_tool_invocations(&self) -> usize {
        self.tool_invocations
            + self
                .sub_trajectories
                .iter()
                .map(|s| s.tool_invocations)
                .sum::<usize>()
    }

    pub fn last_cohort(&self) -> Option<&CreatedCohort> {
        self.cohorts.last()
    }

    pub fn counters(&self) -> Value {
        json!({
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens(),
            "tool_invocations": self.tool_invocations,
            "total_tool_invocations": self.total_tool_invocations(),
            "delegations": self.sub_trajectories.len(),
            "elapsed_seconds": self.elapsed_seconds,
            "outcome": self.outcome,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AssistantText,
    ToolCall,
    ToolResult,
    DelegationStarted,
    DelegationFinished,
    TurnDone,
    TurnError,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::AssistantText => "assistant_text",
            EventKind::ToolCall => "tool_call",
            EventKind::ToolResult => "tool_result",
            EventKind::DelegationStarted => "delegation_started",
            EventKind::DelegationFinished => "delegation_finished",
            EventKind::TurnDone => "turn_done",
            EventKind::TurnError => "turn_error",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::TurnDone | EventKind::TurnError)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub sequence: u64,
    pub kind: EventKind,
    pub payload: Value,
}

/// Numbers events from 0 and forwards them to an optional channel.
#[derive(Debug, Default)]
pub struct EventSink {
    tx: Option<UnboundedSender<AgentEvent>>,
    next: AtomicU64,
}

impl EventSink {
    pub fn new(tx: UnboundedSender<AgentEvent>) -> Self {
        EventSink {
            tx: Some(tx),
            next: AtomicU64::new(0),
        }
    }

    pub fn discard() -> Self {
        EventSink::default()
    }

    pub fn emit(&self, kind: EventKind, payload: Value) {
        let sequence = self.next.fetch_add(1, Ordering::SeqCst);
        if let Some(tx) = &self.tx {
            let _ = tx.send(AgentEvent {
                sequence,
                kind,
                payload,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TurnError {
    #[error("message text is empty")]
    EmptyText,
}

/// A conversation with the query agent. History is append-only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub config: AgentConfig,
    pub created_at: DateTime<Utc>,
    history: Vec<Message>,
    turns: usize,
}

impl Session {
    pub fn history(&self) -> &[Message] {
        &self.history
    }

    pub fn turns(&self) -> usize {
        self.turns
    }
}

/// Model, tools and prompts shared by every session.
#[derive(Debug, Clone)]
pub struct Agent {
    model: Arc<dyn ModelClient>,
    gateway: ToolGateway,
    prompts: PromptSet,
    active_concept_id: String,
}

struct SubRunner<'a> {
    agent: &'a Agent,
    config: &'a AgentConfig,
    events: &'a EventSink,
    subs: Vec<SubTrajectory>,
    fatal: Option<String>,
}

#[async_trait]
impl Delegator for SubRunner<'_> {
    async fn delegate(&mut self, term: &str, intent: &str) -> Result<Shortlist, String> {
        self.events.emit(
            EventKind::DelegationStarted,
            json!({"term": term, "intent": intent}),
        );
        let sub = self
            .agent
            .run_subagent(term, intent, self.config, self.events)
            .await;
        self.events.emit(
            EventKind::DelegationFinished,
            json!({
                "term": term,
                "shortlist": sub.shortlist,
                "tool_invocations": sub.tool_invocations,
                "tokens": sub.tokens(),
                "outcome": sub.outcome,
            }),
        );
        let result = match &sub.outcome {
            TurnOutcome::ModelUnavailable(cause) => {
                self.fatal = Some(cause.clone());
                Err(format!("ModelUnavailable: {cause}"))
            }
            _ => Ok(sub.shortlist.clone()),
        };
        self.subs.push(sub);
        result
    }
}

fn tool_call_payload(agent: AgentProfile, call: &ToolCall) -> Value {
    json!({
        "agent": agent.as_str(),
        "call_id": call.call_id,
        "name": call.name,
        "arguments": call.arguments,
    })
}

fn tool_result_payload(agent: AgentProfile, name: &str, r: &ToolResult) -> Value {
    json!({
        "agent": agent.as_str(),
        "call_id": r.call_id,
        "name": name,
        "content": r.content,
        "is_error": r.is_error,
    })
}

fn skipped(call: &ToolCall, why: &str) -> ToolResult {
    ToolResult {
        call_id: call.call_id.clone(),
        content: format!("Skipped: {why}"),
        is_error: true,
    }
}

const APOLOGY: &str = "Sorry, I ran out of steps before I could finish this request. \
Please try again with a narrower question.";

impl Agent {
    pub fn new(model: Arc<dyn ModelClient>, gateway: ToolGateway, prompts: PromptSet) -> Self {
        Agent {
            model,
            gateway,
            prompts,
            active_concept_id: ACTIVE_CONCEPT_ID.to_string(),
        }
    }

    pub fn with_active_concept(mut self, id: impl Into<String>) -> Self {
        self.active_concept_id = id.into();
        self
    }

    pub fn model(&self) -> &Arc<dyn ModelClient> {
        &self.model
    }

    pub fn gateway(&self) -> &ToolGateway {
        &self.gateway
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    /// Open a session; both prompts are rendered up front so template
    /// problems surface here rather than mid-turn.
    pub fn new_session(&self, id: impl Into<String>, config: AgentConfig) -> Result<Session, PromptError> {
        let system = self.prompts.render_query(&config, &self.active_concept_id)?;
        self.prompts.render_retrieval(&config)?;
        Ok(Session {
            id: id.into(),
            config,
            created_at: Utc::now(),
            history: vec![Message::system(system)],
            turns: 0,
        })
    }

    fn account(
        request: &[Message],
        completion: &Completion,
        prompt_tokens: &mut u64,
        completion_tokens: &mut u64,
    ) {
        match completion.usage {
            Some(u) => {
                *prompt_tokens += u.prompt_tokens;
                *completion_tokens += u.completion_tokens;
            }
            None => {
                *prompt_tokens += count_tokens(request);
                *completion_tokens += count_tokens(std::slice::from_ref(&completion.message));
            }
        }
    }

    /// Run one user turn to completion.
    pub async fn run_turn(
        &self,
        session: &mut Session,
        user_text: &str,
        events: &EventSink,
    ) -> Result<Trajectory, TurnError> {
        if user_text.trim().is_empty() {
            return Err(TurnError::EmptyText);
        }
        let wall = Instant::now();
        let config = session.config.clone();
        let tool_config = config.tool_config();
        let tools = list_tools(AgentProfile::QueryAgent, &tool_config);
        let start = session.history.len();
        session.history.push(Message::user(user_text));

        let mut prompt_tokens = 0;
        let mut completion_tokens = 0;
        let mut tool_invocations = 0;
        let mut simulated = Duration::ZERO;
        let mut cohorts = Vec::new();
        let mut urls = Vec::new();
        let mut final_text = String::new();
        let mut runner = SubRunner {
            agent: self,
            config: &config,
            events,
            subs: Vec::new(),
            fatal: None,
        };
        let mut outcome = None;

        for _ in 0..config.max_iterations {
            let request = CompletionRequest {
                agent: AgentProfile::QueryAgent,
                messages: &session.history,
                tools: &tools,
                temperature: config.temperature,
                thinking_budget: config.thinking_budget,
            };
            let completion = match self.model.complete(request).await {
                Ok(c) => c,
                Err(e) => {
                    outcome = Some(TurnOutcome::ModelUnavailable(e.to_string()));
                    break;
                }
            };
            Self::account(&session.history, &completion, &mut prompt_tokens, &mut completion_tokens);
            simulated += completion.latency;
            let message = completion.message;
            session.history.push(message.clone());
            if !message.content.is_empty() {
                events.emit(EventKind::AssistantText, json!({"text": message.content}));
            }
            if message.tool_calls.is_empty() {
                final_text = message.content;
                outcome = Some(TurnOutcome::Completed);
                break;
            }
            let mut abort: Option<TurnOutcome> = None;
            for call in &message.tool_calls {
                events.emit(EventKind::ToolCall, tool_call_payload(AgentProfile::QueryAgent, call));
                let result = if abort.is_some() {
                    skipped(call, "turn aborted")
                } else {
                    match self
                        .gateway
                        .dispatch(
                            AgentProfile::QueryAgent,
                            &tool_config,
                            call,
                            Some(&session.id),
                            Some(&mut runner),
                        )
                        .await
                    {
                        Ok(d) => {
                            tool_invocations += 1;
                            match d.effect {
                                Some(Effect::CohortCreated {
                                    cohort_id,
                                    size,
                                    expr,
                                }) => cohorts.push(CreatedCohort {
                                    cohort_id,
                                    size,
                                    expr,
                                }),
                                Some(Effect::Url { url }) => urls.push(url),
                                _ => {}
                            }
                            if let Some(cause) = runner.fatal.take() {
                                abort = Some(TurnOutcome::ModelUnavailable(cause));
                            }
                            d.result
                        }
                        Err(unknown) => {
                            abort = Some(TurnOutcome::ProtocolViolation(unknown.to_string()));
                            ToolResult {
                                call_id: call.call_id.clone(),
                                content: unknown.to_string(),
                                is_error: true,
                            }
                        }
                    }
                };
                events.emit(
                    EventKind::ToolResult,
                    tool_result_payload(AgentProfile::QueryAgent, &call.name, &result),
                );
                session.history.push(Message::tool(result));
            }
            if abort.is_some() {
                outcome = abort;
                break;
            }
        }

        let outcome = outcome.unwrap_or_else(|| {
            session.history.push(Message::assistant(APOLOGY, Vec::new()));
            events.emit(EventKind::AssistantText, json!({"text": APOLOGY}));
            final_text = APOLOGY.to_string();
            TurnOutcome::IterationLimit
        });
        let subs = runner.subs;
        let elapsed_seconds = if self.model.simulated_clock() {
            (simulated + subs.iter().map(|s| Duration::from_secs_f64(s.elapsed_seconds)).sum::<Duration>())
                .as_secs_f64()
        } else {
            wall.elapsed().as_secs_f64()
        };
        let turn = session.turns;
        session.turns += 1;
        let trajectory = Trajectory {
            session_id: session.id.clone(),
            turn,
            messages: session.history[start..].to_vec(),
            prompt_tokens,
            completion_tokens,
            tool_invocations,
            elapsed_seconds,
            sub_trajectories: subs,
            outcome,
            final_text,
            cohorts,
            urls,
        };
        if trajectory.outcome.is_completed() {
            events.emit(EventKind::TurnDone, trajectory.counters());
        } else {
            events.emit(
                EventKind::TurnError,
                json!({"error": trajectory.outcome.describe(), "counters": trajectory.counters()}),
            );
        }
        Ok(trajectory)
    }

    /// Run a retrieval agent on a clean history.
    pub async fn run_subagent(
        &self,
        term: &str,
        intent: &str,
        config: &AgentConfig,
        events: &EventSink,
    ) -> SubTrajectory {
        let wall = Instant::now();
        let tool_config = config.tool_config();
        let tools = list_tools(AgentProfile::RetrievalAgent, &tool_config);
        let mut sub = SubTrajectory {
            term: term.to_string(),
            intent: intent.to_string(),
            initial_messages: 0,
            messages: Vec::new(),
            prompt_tokens: 0,
            completion_tokens: 0,
            tool_invocations: 0,
            elapsed_seconds: 0.0,
            shortlist: Shortlist::default(),
            outcome: TurnOutcome::IterationLimit,
        };
        let system = match self.prompts.render_retrieval(config) {
            Ok(s) => s,
            Err(e) => {
                sub.outcome = TurnOutcome::ProtocolViolation(e.to_string());
                return sub;
            }
        };
        sub.messages = vec![
            Message::system(system),
            Message::user(format!("Term: {term}")),
            Message::user(format!("Intent: {intent}")),
        ];
        sub.initial_messages = sub.messages.len();
        let mut simulated = Duration::ZERO;
        let mut finished = None;

        for _ in 0..config.sub_agent_max_iterations {
            let request = CompletionRequest {
                agent: AgentProfile::RetrievalAgent,
                messages: &sub.messages,
                tools: &tools,
                temperature: config.temperature,
                thinking_budget: config.thinking_budget,
            };
            let completion = match self.model.complete(request).await {
                Ok(c) => c,
                Err(e) => {
                    finished = Some((Shortlist::default(), TurnOutcome::ModelUnavailable(e.to_string())));
                    break;
                }
            };
            Self::account(&sub.messages, &completion, &mut sub.prompt_tokens, &mut sub.completion_tokens);
            simulated += completion.latency;
            let message = completion.message;
            sub.messages.push(message.clone());
            if message.tool_calls.is_empty() {
                let rationale = if message.content.is_empty() {
                    "no shortlist returned".to_string()
                } else {
                    message.content
                };
                finished = Some((
                    Shortlist {
                        concepts: Vec::new(),
                        rationale,
                    },
                    TurnOutcome::Completed,
                ));
                break;
            }
            for call in &message.tool_calls {
                events.emit(EventKind::ToolCall, tool_call_payload(AgentProfile::RetrievalAgent, call));
                let result = if finished.is_some() {
                    skipped(call, "shortlist already returned")
                } else {
                    match self
                        .gateway
                        .dispatch(AgentProfile::RetrievalAgent, &tool_config, call, None, None)
                        .await
                    {
                        Ok(d) => {
                            sub.tool_invocations += 1;
                            if let Some(Effect::Shortlist { shortlist }) = d.effect {
                                finished = Some((shortlist, TurnOutcome::Completed));
                            }
                            d.result
                        }
                        Err(unknown) => {
                            finished = Some((
                                Shortlist {
                                    concepts: Vec::new(),
                                    rationale: "protocol violation".into(),
                                },
                                TurnOutcome::ProtocolViolation(unknown.to_string()),
                            ));
                            ToolResult {
                                call_id: call.call_id.clone(),
                                content: unknown.to_string(),
                                is_error: true,
                            }
                        }
                    }
                };
                events.emit(
                    EventKind::ToolResult,
                    tool_result_payload(AgentProfile::RetrievalAgent, &call.name, &result),
                );
                sub.messages.push(Message::tool(result));
            }
            if finished.is_some() {
                break;
            }
        }

        let (shortlist, outcome) = finished.unwrap_or_else(|| {
            (
                Shortlist {
                    concepts: Vec::new(),
                    rationale: LIMIT_REACHED.to_string(),
                },
                TurnOutcome::IterationLimit,
            )
        });
        sub.shortlist = shortlist;
        sub.outcome = outcome;
        sub.elapsed_seconds = if self.model.simulated_clock() {
            simulated.as_secs_f64()
        } else {
            wall.elapsed().as_secs_f64()
        };
        sub
    }
}
