use std::convert::Infallible;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::Json;
use chrono::Utc;
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::mpsc;

use cohortq_core::agent::{AgentEvent, ConfigOverrides, EventSink};

use super::parse_body;
use crate::error::ApiError;
use crate::state::{AppState, SessionSlot};

#[derive(Debug, Deserialize)]
struct MessageBody {
    text: String,
}

pub async fn create(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let overrides: ConfigOverrides = if body.iter().all(u8::is_ascii_whitespace) {
        ConfigOverrides::default()
    } else {
        parse_body(&body)?
    };
    let config = state
        .defaults()
        .with_overrides(&overrides)
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let unavailable = |e: cohortq_core::agent::ModelError| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string())
    };
    let agent = state.agent().map_err(unavailable)?;
    agent.model().health().await.map_err(unavailable)?;
    let id = format!("s-{}", uuid::Uuid::new_v4().simple());
    let session = agent
        .new_session(id.clone(), config.clone())
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let created_at = session.created_at;
    state.insert_session(SessionSlot {
        id: id.clone(),
        agent,
        session: Arc::new(tokio::sync::Mutex::new(session)),
        config: config.clone(),
        created_at,
        turns_done: Default::default(),
        edits: Mutex::default(),
    });
    state.journal.record(json!({
        "type": "session_created",
        "session_id": id,
        "created_at": created_at,
        "config": config,
    }));
    tracing::info!(session = %id, "session created");
    Ok((
        StatusCode::CREATED,
        Json(json!({"session_id": id, "config": config})),
    ))
}

pub async fn get(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let slot = state
        .session(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))?;
    let edits = slot.edits.lock().expect("edits poisoned").clone();
    let mut body = json!({
        "session_id": slot.id,
        "config": slot.config,
        "created_at": slot.created_at,
        "turns": slot.turns_done(),
        "edits": edits,
    });
    match slot.session.try_lock() {
        Ok(session) => {
            body["busy"] = json!(false);
            body["history"] = json!(session.history());
        }
        Err(_) => body["busy"] = json!(true),
    }
    Ok(Json(body))
}

fn to_sse(ev: &AgentEvent) -> Event {
    Event::default()
        .event(ev.kind.as_str())
        .id(ev.sequence.to_string())
        .data(serde_json::to_string(ev).expect("events serialize"))
}

pub async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let slot = state
        .session(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))?;
    let MessageBody { text } = parse_body(&body)?;
    if text.trim().is_empty() {
        return Err(ApiError::unprocessable("message text is empty"));
    }
    let guard = slot
        .session
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::conflict(format!("a turn is already running in session {id}")))?;

    let (tx, rx) = mpsc::unbounded_channel();
    tokio::spawn(async move {
        let sink = EventSink::new(tx);
        let mut session = guard;
        let result = slot.agent.run_turn(&mut session, &text, &sink).await;
        match result {
            Ok(trajectory) => {
                slot.turns_done.fetch_add(1, Ordering::SeqCst);
                state.journal.record(json!({
                    "type": "turn",
                    "session_id": slot.id,
                    "turn": trajectory.turn,
                    "at": Utc::now(),
                    "question": text,
                    "counters": trajectory.counters(),
                    "trajectory": trajectory,
                }));
            }
            Err(e) => tracing::warn!(session = %slot.id, error = %e, "turn rejected"),
        }
        // Release the session before the stream closes so a client that
        // reads to the end can post again immediately.
        drop(session);
        drop(sink);
    });

    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|ev| (Ok(to_sse(&ev)), rx))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
