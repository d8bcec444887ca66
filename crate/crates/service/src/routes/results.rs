//! Result views addressed by the URLs the agent hands out. Only the
//! register returns patient rows.

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};

use cohortq_core::catalog::Grouping;

use super::required;
use crate::error::ApiError;
use crate::state::{AppState, FeedbackError};

#[derive(Debug, Deserialize)]
pub struct RegisterQuery {
    cohort: Option<String>,
    report: Option<String>,
}

pub async fn register(
    State(state): State<Arc<AppState>>,
    Query(q): Query<RegisterQuery>,
) -> Result<Json<Value>, ApiError> {
    let exec = state.gateway().exec();
    let cohort = required(q.cohort, "cohort")?;
    let record = exec.cohort(&cohort)?;
    let table = exec.list_cohort(&cohort, q.report.as_deref())?;
    Ok(Json(json!({
        "kind": "register",
        "cohort_id": cohort,
        "expr": exec.cohort_expr(&cohort)?,
        "report": q.report,
        "count": record.size,
        "columns": table.columns,
        "rows": table.rows,
    })))
}

#[derive(Debug, Deserialize)]
pub struct ProfileQuery {
    den: Option<String>,
    category: Option<String>,
}

pub async fn profile(
    State(state): State<Arc<AppState>>,
    Query(q): Query<ProfileQuery>,
) -> Result<Json<Value>, ApiError> {
    let exec = state.gateway().exec();
    let den = required(q.den, "den")?;
    let expr = exec.cohort_expr(&den)?;
    Ok(Json(match q.category {
        None => json!({
            "kind": "profile",
            "cohort_id": den,
            "expr": expr,
            "summary": exec.summarise_cohort(&den, exec.as_of())?,
        }),
        Some(category) => {
            let bins = exec.histogram(&den, &category, None)?;
            let total: usize = bins.iter().map(|b| b.count).sum();
            json!({
                "kind": "histogram",
                "cohort_id": den,
                "expr": expr,
                "category": category,
                "bins": bins,
                "total": total,
            })
        }
    }))
}

#[derive(Debug, Deserialize)]
pub struct CompareQuery {
    num: Option<String>,
    den: Option<String>,
    by: Option<String>,
}

pub async fn compare(
    State(state): State<Arc<AppState>>,
    Query(q): Query<CompareQuery>,
) -> Result<Json<Value>, ApiError> {
    let exec = state.gateway().exec();
    let num = required(q.num, "num")?;
    let den = required(q.den, "den")?;
    let by: Grouping = match q.by {
        None => Grouping::District,
        Some(b) => b
            .parse()
            .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?,
    };
    let rows = exec.prevalence_by_group(&num, &den, by)?;
    Ok(Json(json!({
        "kind": "compare",
        "numerator": num,
        "denominator": den,
        "by": by.as_str(),
        "rows": rows,
    })))
}

#[derive(Debug, Deserialize)]
pub struct KpiQuery {
    kpi: Option<String>,
    loc: Option<String>,
}

pub async fn kpi(
    State(state): State<Arc<AppState>>,
    Query(q): Query<KpiQuery>,
) -> Result<Json<Value>, ApiError> {
    let kpi = required(q.kpi, "kpi")?;
    let rows = state.gateway().exec().kpi_rates(&kpi, q.loc.as_deref())?;
    Ok(Json(json!({
        "kind": "kpi",
        "kpi": kpi,
        "location": q.loc,
        "rows": rows,
    })))
}

#[derive(Debug, Deserialize)]
pub struct WorkflowQuery {
    riskset: Option<String>,
}

pub async fn workflow(
    State(state): State<Arc<AppState>>,
    Query(q): Query<WorkflowQuery>,
) -> Result<Json<Value>, ApiError> {
    let riskset = required(q.riskset, "riskset")?;
    let view = state.gateway().exec().workflow(&riskset)?;
    let mut body = json!(view);
    body["kind"] = json!("workflow");
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
pub struct BeaconQuery {
    session_id: Option<String>,
    turn: Option<usize>,
}

/// Fired by the UI when a link from a turn is opened.
pub async fn beacon(
    State(state): State<Arc<AppState>>,
    Query(q): Query<BeaconQuery>,
) -> Result<StatusCode, ApiError> {
    let session_id = required(q.session_id, "session_id")?;
    let turn = required(q.turn, "turn")?;
    match state.record_click(&session_id, turn) {
        Ok(()) => {
            state.journal.record(json!({
                "type": "url_clicked",
                "session_id": session_id,
                "turn": turn,
                "at": chrono::Utc::now(),
            }));
            Ok(StatusCode::NO_CONTENT)
        }
        Err(FeedbackError::UnknownSession) => Err(ApiError::not_found(format!("unknown session {session_id}"))),
        Err(_) => Err(ApiError::not_found(format!("no turn {turn} in session {session_id}"))),
    }
}
