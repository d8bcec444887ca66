#![allow(dead_code)]

use std::sync::Arc;

use cohortq_client::Client;
use cohortq_core::agent::ModelSpec;
use cohortq_service::{router, AppState, ServiceConfig};

pub struct Running {
    pub client: Client,
    pub state: Arc<AppState>,
    pub base: String,
}

pub async fn spawn(config: ServiceConfig) -> Running {
    let state = Arc::new(AppState::from_config(&config).expect("service state builds"));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = router(state.clone());
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Running {
        client: Client::new(base.clone()),
        state,
        base,
    }
}

pub fn with_script(name: &str) -> ServiceConfig {
    let mut c = ServiceConfig::default();
    c.agent.model = Some(ModelSpec::Script {
        path: format!("builtin:{name}"),
    });
    c
}

/// Brute-force scan for any store pat_id inside `text`.
pub fn leaked_ids(state: &AppState, text: &str) -> Vec<String> {
    state
        .gateway()
        .exec()
        .store()
        .pat_ids()
        .filter(|id| text.contains(id))
        .map(str::to_string)
        .collect()
}
