use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use chrono::Utc;
use serde::Deserialize;
use serde_json::{json, Value};

use cohortq_core::logic::{format_expr, parse_expr, validate_expr, ParseError, Violation};

use super::parse_body;
use crate::error::ApiError;
use crate::state::{AppState, CohortEdit};

pub async fn get(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let record = state.gateway().exec().cohort(&id)?;
    Ok(Json(json!({
        "cohort_id": record.cohort_id,
        "expr": format_expr(&record.expr),
        "size": record.size,
        "created_at": record.created_at,
        "as_of": record.as_of,
        "session_id": record.session_id,
        "url": format!("/results/register?cohort={}", record.cohort_id),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    expr: String,
    #[serde(default)]
    session_id: Option<String>,
}

fn is_id_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | ':' | '.')
}

/// Byte offset of the first whole-token occurrence of `needle`, ignoring
/// ASCII case.
pub fn token_position(text: &str, needle: &str) -> Option<usize> {
    let hay = text.to_ascii_lowercase();
    let needle = needle.to_ascii_lowercase();
    if needle.is_empty() {
        return None;
    }
    let mut from = 0;
    while let Some(i) = hay[from..].find(&needle) {
        let start = from + i;
        let end = start + needle.len();
        let before = hay[..start].chars().next_back().is_none_or(|c| !is_id_char(c));
        let after = hay[end..].chars().next().is_none_or(|c| !is_id_char(c));
        if before && after {
            return Some(start);
        }
        from = start + 1;
    }
    None
}

fn violation_json(text: &str, v: &Violation) -> Value {
    let position = match v {
        Violation::UnknownConcept(id) => token_position(text, id),
        Violation::UnknownCohort(id) => token_position(text, &format!("COHORT:{id}")),
        Violation::Arity | Violation::TooDeep => None,
    };
    let mut out = json!(v);
    out["message"] = json!(v.to_string());
    out["position"] = json!(position);
    out
}

fn parse_error_json(e: &ParseError) -> Value {
    match e {
        ParseError::SyntaxError { position, expected } => json!({
            "kind": "SyntaxError",
            "position": position,
            "expected": expected,
            "message": e.to_string(),
        }),
        other => json!({"kind": "ParseError", "position": null, "message": other.to_string()}),
    }
}

/// Edit-and-rerun: compile a hand-edited expression into a new cohort.
pub async fn create(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let CreateBody { expr: text, session_id } = parse_body(&body)?;
    let slot = match &session_id {
        Some(id) => Some(
            state
                .session(id)
                .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))?,
        ),
        None => None,
    };
    let exec = state.gateway().exec();
    let expr = parse_expr(&text).map_err(|e| {
        ApiError::unprocessable(e.to_string()).with_detail(json!({"violations": [parse_error_json(&e)]}))
    })?;
    let violations = validate_expr(&expr, exec.catalog(), exec.cohorts());
    if !violations.is_empty() {
        let listed: Vec<Value> = violations.iter().map(|v| violation_json(&text, v)).collect();
        let message = listed
            .iter()
            .filter_map(|v| v["message"].as_str())
            .collect::<Vec<_>>()
            .join(", ");
        return Err(ApiError::unprocessable(format!("ValidationError: {message}"))
            .with_detail(json!({"violations": listed})));
    }
    let created = exec.create_cohort_from_expr(expr.clone(), session_id.as_deref())?;
    let canonical = format_expr(&expr);
    if let Some(slot) = slot {
        slot.edits.lock().expect("edits poisoned").push(CohortEdit {
            expr: canonical.clone(),
            cohort_id: created.cohort_id.clone(),
            size: created.size,
            at: Utc::now(),
        });
    }
    state.journal.record(json!({
        "type": "cohort_edit",
        "session_id": session_id,
        "expr": canonical,
        "cohort_id": created.cohort_id,
        "size": created.size,
        "at": Utc::now(),
    }));
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "cohort_id": created.cohort_id,
            "size": created.size,
            "expr": canonical,
            "url": format!("/results/register?cohort={}", created.cohort_id),
        })),
    ))
}
