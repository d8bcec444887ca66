//! HTTP/JSON service: chat sessions with streamed agent events, result
//! views, logic edits and feedback.
//!
//! | method | route                         |                                   |
//! |--------|-------------------------------|-----------------------------------|
//! | POST   | `/chats`                      | new session, optional overrides   |
//! | GET    | `/chats/{id}`                 | config, turns, history            |
//! | POST   | `/chats/{id}/messages`        | run a turn, server-sent events    |
//! | POST   | `/cohorts`                    | compile an edited expression      |
//! | GET    | `/cohorts/{id}`               | cohort metadata                   |
//! | GET    | `/results/register`           | patient rows (the only such route)|
//! | GET    | `/results/profile`            | summary or histogram              |
//! | GET    | `/results/compare`            | grouped rates                     |
//! | GET    | `/results/kpi`                | KPI by location                   |
//! | GET    | `/results/workflow`           | riskset work list                 |
//! | GET    | `/results/beacon`             | mark a turn's link as opened      |
//! | POST   | `/feedback`                   | thumbs up/down for a turn         |
//! | GET    | `/feedback`, `/feedback/export` | records, CSV tallies            |
//! | GET    | `/health`                     |                                   |
//! | GET    | `/ui/...`                     | static chat client, if configured |

use std::sync::Arc;

use tokio::net::TcpListener;

pub mod config;
pub mod error;
pub mod journal;
pub mod routes;
pub mod state;

pub use config::{load_config, ConfigError, ServiceConfig};
pub use error::ApiError;
pub use journal::Journal;
pub use routes::router;
pub use state::{AppState, CohortEdit, FeedbackCounts, FeedbackRecord, Verdict};

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router(state)).await
}
