use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use chrono::Utc;
use serde::Deserialize;
use serde_json::{json, Value};

use super::parse_body;
use crate::error::ApiError;
use crate::state::{AppState, FeedbackError, FeedbackRecord, Verdict};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    session_id: String,
    turn: usize,
    verdict: Verdict,
    #[serde(default)]
    free_text: Option<String>,
}

pub async fn submit(State(state): State<Arc<AppState>>, body: Bytes) -> Result<StatusCode, ApiError> {
    let b: FeedbackBody = parse_body(&body)?;
    let record = FeedbackRecord {
        session_id: b.session_id,
        turn: b.turn,
        verdict: b.verdict,
        free_text: b.free_text.filter(|t| !t.trim().is_empty()),
        url_clicked: false,
    };
    match state.record_feedback(record.clone()) {
        Ok(stored) => {
            let mut entry = json!(stored);
            entry["type"] = json!("feedback");
            entry["at"] = json!(Utc::now());
            state.journal.record(entry);
            Ok(StatusCode::NO_CONTENT)
        }
        Err(FeedbackError::UnknownSession) => Err(ApiError::not_found(format!(
            "unknown session {}",
            record.session_id
        ))),
        Err(FeedbackError::UnknownTurn) => Err(ApiError::not_found(format!(
            "no finished turn {} in session {}",
            record.turn, record.session_id
        ))),
        Err(FeedbackError::Duplicate) => Err(ApiError::conflict(format!(
            "turn {} of session {} already has a verdict",
            record.turn, record.session_id
        ))),
    }
}

pub async fn list(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "records": state.feedback_records(),
        "counts": state.feedback_counts(),
    }))
}

/// One row per verdict bucket: how many finished turns fell in it and how
/// many of those had a result link opened.
pub fn export_csv(state: &AppState) -> String {
    let mut out = String::from("verdict,turns,url_clicked\n");
    let counts = state.feedback_counts();
    for bucket in ["positive", "negative", "no_response"] {
        let c = counts[bucket];
        out.push_str(&format!("{bucket},{},{}\n", c.turns, c.url_clicked));
    }
    out
}

pub async fn export(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    (
        [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
        export_csv(&state),
    )
}
