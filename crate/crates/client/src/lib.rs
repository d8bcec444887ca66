//! Thin typed client for the cohortq HTTP service.

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use cohortq_core::agent::{AgentConfig, AgentEvent, ConfigOverrides, EventKind, Message};

mod sse;

pub use reqwest::Method;
pub use sse::{SseFrame, SseParser};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{status}: {message}")]
    Status { status: u16, message: String },
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatCreated {
    pub session_id: String,
    pub config: AgentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatEdit {
    pub expr: String,
    pub cohort_id: String,
    pub size: usize,
    pub at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatInfo {
    pub session_id: String,
    pub config: AgentConfig,
    pub created_at: String,
    pub turns: usize,
    pub busy: bool,
    #[serde(default)]
    pub history: Option<Vec<Message>>,
    #[serde(default)]
    pub edits: Vec<ChatEdit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortCreated {
    pub cohort_id: String,
    pub size: usize,
    pub expr: String,
    pub url: String,
}

/// Every event of one turn, in arrival order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TurnStream {
    pub events: Vec<AgentEvent>,
}

impl TurnStream {
    pub fn terminal(&self) -> Option<&AgentEvent> {
        self.events.last().filter(|e| e.kind.is_terminal())
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &AgentEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Text of the last assistant_text event.
    pub fn final_text(&self) -> Option<&str> {
        self.of_kind(EventKind::AssistantText)
            .last()
            .and_then(|e| e.payload["text"].as_str())
    }
}

/// Raw status and body, for callers that want to inspect errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub content_type: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Client {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    async fn check(resp: reqwest::Response) -> Result<reqwest::Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<Value>(&body)
            .ok()
            .and_then(|v| v["error"].as_str().map(str::to_string))
            .unwrap_or(body);
        Err(ClientError::Status {
            status: status.as_u16(),
            message,
        })
    }

    async fn json<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let resp = Self::check(resp).await?;
        let text = resp.text().await?;
        serde_json::from_str(&text).map_err(|e| ClientError::Decode(format!("{e}: {text}")))
    }

    async fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::json(self.http.get(self.url(path)).send().await?).await
    }

    pub async fn raw(&self, method: Method, path: &str, body: Option<&Value>) -> Result<RawResponse, ClientError> {
        let mut req = self.http.request(method, self.url(path));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        Ok(RawResponse {
            status,
            content_type,
            body: resp.text().await?,
        })
    }

    pub async fn health(&self) -> Result<Value, ClientError> {
        self.get_json("/health").await
    }

    pub async fn create_chat(&self, overrides: Option<&ConfigOverrides>) -> Result<ChatCreated, ClientError> {
        let mut req = self.http.post(self.url("/chats"));
        if let Some(o) = overrides {
            req = req.json(o);
        }
        Self::json(req.send().await?).await
    }

    pub async fn get_chat(&self, session_id: &str) -> Result<ChatInfo, ClientError> {
        self.get_json(&format!("/chats/{session_id}")).await
    }

    /// Run a turn, calling `on_event` as each event arrives.
    pub async fn send_message_with(
        &self,
        session_id: &str,
        text: &str,
        mut on_event: impl FnMut(&AgentEvent),
    ) -> Result<TurnStream, ClientError> {
        let resp = self
            .http
            .post(self.url(&format!("/chats/{session_id}/messages")))
            .json(&json!({"text": text}))
            .send()
            .await?;
        let mut resp = Self::check(resp).await?;
        let mut parser = SseParser::new();
        let mut out = TurnStream::default();
        let mut take = |frame: SseFrame, out: &mut TurnStream| -> Result<(), ClientError> {
            let ev: AgentEvent = serde_json::from_str(&frame.data)
                .map_err(|e| ClientError::Decode(format!("{e}: {}", frame.data)))?;
            on_event(&ev);
            out.events.push(ev);
            Ok(())
        };
        while let Some(chunk) = resp.chunk().await? {
            for frame in parser.push(&chunk) {
                take(frame, &mut out)?;
            }
        }
        if let Some(frame) = parser.finish() {
            take(frame, &mut out)?;
        }
        Ok(out)
    }

    pub async fn send_message(&self, session_id: &str, text: &str) -> Result<TurnStream, ClientError> {
        self.send_message_with(session_id, text, |_| {}).await
    }

    pub async fn create_cohort(&self, expr: &str, session_id: Option<&str>) -> Result<CohortCreated, ClientError> {
        let mut body = json!({"expr": expr});
        if let Some(s) = session_id {
            body["session_id"] = json!(s);
        }
        Self::json(self.http.post(self.url("/cohorts")).json(&body).send().await?).await
    }

    pub async fn get_cohort(&self, cohort_id: &str) -> Result<Value, ClientError> {
        self.get_json(&format!("/cohorts/{cohort_id}")).await
    }

    /// Follow a relative results link as handed out by the agent.
    pub async fn results(&self, link: &str) -> Result<Value, ClientError> {
        if !link.starts_with("/results/") {
            return Err(ClientError::Decode(format!("not a results link: {link}")));
        }
        self.get_json(link).await
    }

    async fn results_query(&self, route: &str, params: &[(&str, &str)]) -> Result<Value, ClientError> {
        Self::json(self.http.get(self.url(route)).query(params).send().await?).await
    }

    pub async fn register(&self, cohort: &str, report: Option<&str>) -> Result<Value, ClientError> {
        let mut p = vec![("cohort", cohort)];
        p.extend(report.map(|r| ("report", r)));
        self.results_query("/results/register", &p).await
    }

    pub async fn profile(&self, den: &str, category: Option<&str>) -> Result<Value, ClientError> {
        let mut p = vec![("den", den)];
        p.extend(category.map(|c| ("category", c)));
        self.results_query("/results/profile", &p).await
    }

    pub async fn compare(&self, num: &str, den: &str, by: &str) -> Result<Value, ClientError> {
        self.results_query("/results/compare", &[("num", num), ("den", den), ("by", by)])
            .await
    }

    pub async fn kpi(&self, kpi: &str, loc: Option<&str>) -> Result<Value, ClientError> {
        let mut p = vec![("kpi", kpi)];
        p.extend(loc.map(|l| ("loc", l)));
        self.results_query("/results/kpi", &p).await
    }

    pub async fn workflow(&self, riskset: &str) -> Result<Value, ClientError> {
        self.results_query("/results/workflow", &[("riskset", riskset)]).await
    }

    pub async fn click(&self, session_id: &str, turn: usize) -> Result<(), ClientError> {
        let turn = turn.to_string();
        let resp = self
            .http
            .get(self.url("/results/beacon"))
            .query(&[("session_id", session_id), ("turn", turn.as_str())])
            .send()
            .await?;
        Self::check(resp).await.map(|_| ())
    }

    pub async fn feedback(
        &self,
        session_id: &str,
        turn: usize,
        verdict: &str,
        free_text: Option<&str>,
    ) -> Result<(), ClientError> {
        let mut body = json!({"session_id": session_id, "turn": turn, "verdict": verdict});
        if let Some(t) = free_text {
            body["free_text"] = json!(t);
        }
        let resp = self.http.post(self.url("/feedback")).json(&body).send().await?;
        let resp = Self::check(resp).await?;
        if resp.status() != StatusCode::NO_CONTENT {
            return Err(ClientError::Decode(format!("expected 204, got {}", resp.status())));
        }
        Ok(())
    }

    pub async fn feedback_list(&self) -> Result<Value, ClientError> {
        self.get_json("/feedback").await
    }

    pub async fn feedback_export(&self) -> Result<String, ClientError> {
        let resp = Self::check(self.http.get(self.url("/feedback/export")).send().await?).await?;
        Ok(resp.text().await?)
    }
}
