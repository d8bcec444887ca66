use std::sync::Arc;

use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower_http::services::{ServeDir, ServeFile};

use crate::error::ApiError;
use crate::state::AppState;

pub mod chats;
pub mod cohorts;
pub mod feedback;
pub mod results;

pub(crate) fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(format!("invalid body: {e}")))
}

pub(crate) fn required<T>(value: Option<T>, name: &str) -> Result<T, ApiError> {
    value.ok_or_else(|| {
        ApiError::new(
            axum::http::StatusCode::BAD_REQUEST,
            format!("missing query parameter `{name}`"),
        )
    })
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let exec = state.gateway().exec();
    Json(json!({
        "status": "ok",
        "model": state.model_spec(),
        "patients": exec.store().len(),
        "cohorts": exec.cohorts().len(),
        "sessions": state.session_count(),
        "as_of": exec.as_of(),
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut app = Router::new();
    if let Some(dir) = state.ui_dir() {
        let index = dir.join("index.html");
        app = app.nest_service("/ui", ServeDir::new(dir).fallback(ServeFile::new(index)));
    }
    app
        .route("/health", get(health))
        .route("/chats", post(chats::create))
        .route("/chats/{id}", get(chats::get))
        .route("/chats/{id}/messages", post(chats::post_message))
        .route("/cohorts", post(cohorts::create))
        .route("/cohorts/{id}", get(cohorts::get))
        .route("/results/register", get(results::register))
        .route("/results/profile", get(results::profile))
        .route("/results/compare", get(results::compare))
        .route("/results/kpi", get(results::kpi))
        .route("/results/workflow", get(results::workflow))
        .route("/results/beacon", get(results::beacon))
        .route("/feedback", post(feedback::submit).get(feedback::list))
        .route("/feedback/export", get(feedback::export))
        .with_state(state)
}
