//! Client for OpenAI-compatible `chat/completions` endpoints.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::model::{Completion, CompletionRequest, ModelClient, ModelError, Usage};
use super::{Message, Role};
use crate::tools::ToolCall;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key. The key itself never
    /// appears in config files.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    120_000
}

#[derive(Debug, Clone)]
pub struct HttpModel {
    config: EndpointConfig,
    http: reqwest::Client,
}

impl HttpModel {
    pub fn new(config: EndpointConfig) -> Self {
        HttpModel {
            config,
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn authorise(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match self
            .config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
        {
            Some(key) => req.bearer_auth(key),
            None => req,
        }
    }
}

fn wire_message(m: &Message) -> Value {
    match m.role {
        Role::Tool => {
            let r = m.tool_result.as_ref();
            json!({
                "role": "tool",
                "tool_call_id": r.map(|r| r.call_id.as_str()).unwrap_or_default(),
                "content": r.map(|r| r.content.as_str()).unwrap_or(m.content.as_str()),
            })
        }
        Role::Assistant if !m.tool_calls.is_empty() => json!({
            "role": "assistant",
            "content": if m.content.is_empty() { Value::Null } else { Value::String(m.content.clone()) },
            "tool_calls": m.tool_calls.iter().map(|c| json!({
                "id": c.call_id,
                "type": "function",
                "function": {"name": c.name, "arguments": c.arguments.to_string()},
            })).collect::<Vec<_>>(),
        }),
        role => json!({"role": role.as_str(), "content": m.content}),
    }
}

/// Request body for one completion.
pub fn request_body(model: &str, request: &CompletionRequest<'_>) -> Value {
    let mut body = json!({
        "model": model,
        "messages": request.messages.iter().map(wire_message).collect::<Vec<_>>(),
        "temperature": request.temperature,
    });
    if !request.tools.is_empty() {
        body["tools"] = request
            .tools
            .iter()
            .map(|t| json!({"type": "function", "function": t}))
            .collect();
    }
    if request.thinking_budget > 0 {
        body["thinking_budget"] = json!(request.thinking_budget);
    }
    body
}

#[derive(Deserialize)]
struct WireFunction {
    name: String,
    #[serde(default)]
    arguments: Value,
}

#[derive(Deserialize)]
struct WireCall {
    id: String,
    function: WireFunction,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    tool_calls: Vec<WireCall>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

/// Decode a completion response. Arguments may arrive as a JSON string or
/// an object; unparsable argument strings are passed through as a string
/// so the gateway reports them as invalid.
pub fn parse_response(body: &str) -> Result<(Message, Option<Usage>), ModelError> {
    let resp: WireResponse = serde_json::from_str(body)
        .map_err(|e| ModelError::Unavailable(format!("unreadable completion: {e}")))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ModelError::Unavailable("completion has no choices".into()))?;
    let calls = choice
        .message
        .tool_calls
        .into_iter()
        .map(|c| {
            let arguments = match c.function.arguments {
                Value::String(s) if s.trim().is_empty() => json!({}),
                Value::String(s) => serde_json::from_str(&s).unwrap_or(Value::String(s)),
                Value::Null => json!({}),
                other => other,
            };
            ToolCall {
                call_id: c.id,
                name: c.function.name,
                arguments,
            }
        })
        .collect();
    Ok((
        Message::assistant(choice.message.content.unwrap_or_default(), calls),
        resp.usage,
    ))
}

#[async_trait]
impl ModelClient for HttpModel {
    async fn complete(&self, request: CompletionRequest<'_>) -> Result<Completion, ModelError> {
        let started = Instant::now();
        let body = request_body(&self.config.model, &request);
        let resp = self
            .authorise(self.http.post(self.url("chat/completions")))
            .timeout(Duration::from_millis(self.config.timeout_ms))
            .json(&body)
            .send()
            .await
            .map_err(|e| ModelError::Unavailable(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| ModelError::Unavailable(e.to_string()))?;
        if !status.is_success() {
            return Err(ModelError::Unavailable(format!("status {status}: {text}")));
        }
        let (message, usage) = parse_response(&text)?;
        Ok(Completion {
            message,
            usage,
            latency: started.elapsed(),
        })
    }

    async fn health(&self) -> Result<(), ModelError> {
        let resp = self
            .authorise(self.http.get(self.url("models")))
            .timeout(Duration::from_secs(5))
            .send()
            .await
            .map_err(|e| ModelError::Unavailable(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ModelError::Unavailable(format!("status {}", resp.status())))
        }
    }

    fn describe(&self) -> String {
        format!("endpoint:{}@{}", self.config.model, self.config.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::{tool_schema, AgentProfile, ToolResult};
    use axum::{routing::get, routing::post, Json, Router};
    use std::sync::{Arc, Mutex};

    #[test]
    fn body_shape() {
        let msgs = vec![
            Message::system("sys"),
            Message::user("hi"),
            Message::assistant(
                "",
                vec![ToolCall {
                    call_id: "a1".into(),
                    name: "search".into(),
                    arguments: json!({"key": "x", "mode": "concepts"}),
                }],
            ),
            Message::tool(ToolResult {
                call_id: "a1".into(),
                content: "{}".into(),
                is_error: false,
            }),
        ];
        let tools = vec![tool_schema("search").unwrap()];
        let req = CompletionRequest {
            agent: AgentProfile::QueryAgent,
            messages: &msgs,
            tools: &tools,
            temperature: 0.0,
            thinking_budget: 0,
        };
        let body = request_body("m", &req);
        assert_eq!(body["messages"][2]["tool_calls"][0]["function"]["arguments"], "{\"key\":\"x\",\"mode\":\"concepts\"}");
        assert_eq!(body["messages"][3]["tool_call_id"], "a1");
        assert_eq!(body["tools"][0]["function"]["name"], "search");
        assert_eq!(body["temperature"], 0.0);
        assert!(body.get("thinking_budget").is_none());
        let with_budget = request_body(
            "m",
            &CompletionRequest {
                thinking_budget: 64,
                ..req
            },
        );
        assert_eq!(with_budget["thinking_budget"], 64);
    }

    #[test]
    fn response_parsing() {
        let (m, usage) = parse_response(
            r#"{"choices":[{"message":{"content":null,"tool_calls":[{"id":"x","type":"function","function":{"name":"search","arguments":"{\"key\":\"dm2\"}"}}]}}],"usage":{"prompt_tokens":11,"completion_tokens":3}}"#,
        )
        .unwrap();
        assert_eq!(m.tool_calls[0].arguments, json!({"key": "dm2"}));
        assert_eq!(usage, Some(Usage { prompt_tokens: 11, completion_tokens: 3 }));
        assert!(parse_response(r#"{"choices":[]}"#).is_err());
        let (m, _) = parse_response(
            r#"{"choices":[{"message":{"tool_calls":[{"id":"x","function":{"name":"s","arguments":"not json"}}]}}]}"#,
        )
        .unwrap();
        assert_eq!(m.tool_calls[0].arguments, json!("not json"));
    }

    #[tokio::test]
    async fn round_trip_against_a_stub_server() {
        let seen = Arc::new(Mutex::new(Vec::<Value>::new()));
        let log = seen.clone();
        let app = Router::new()
            .route("/v1/models", get(|| async { "{}" }))
            .route(
                "/v1/chat/completions",
                post(move |Json(body): Json<Value>| {
                    let log = log.clone();
                    async move {
                        log.lock().unwrap().push(body);
                        Json(json!({
                            "choices": [{"message": {"content": "hello"}}],
                            "usage": {"prompt_tokens": 7, "completion_tokens": 1}
                        }))
                    }
                }),
            );
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

        let model = HttpModel::new(EndpointConfig {
            base_url: format!("http://{addr}/v1/"),
            model: "stub".into(),
            api_key_env: None,
            timeout_ms: 5_000,
        });
        model.health().await.unwrap();
        let msgs = [Message::user("hi")];
        let c = model
            .complete(CompletionRequest {
                agent: AgentProfile::QueryAgent,
                messages: &msgs,
                tools: &[],
                temperature: 0.0,
                thinking_budget: 0,
            })
            .await
            .unwrap();
        assert_eq!(c.message.content, "hello");
        assert_eq!(c.usage.unwrap().prompt_tokens, 7);
        assert_eq!(seen.lock().unwrap()[0]["model"], "stub");

        let down = HttpModel::new(EndpointConfig {
            base_url: "http://127.0.0.1:9".into(),
            model: "x".into(),
            api_key_env: None,
            timeout_ms: 500,
        });
        assert!(matches!(down.health().await, Err(ModelError::Unavailable(_))));
    }
}
