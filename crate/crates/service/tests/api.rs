mod common;

use std::time::Duration;

use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use cohortq_client::{ClientError, Method};
use cohortq_core::agent::{ConfigOverrides, EndpointConfig, EventKind, ModelSpec};
use cohortq_service::ServiceConfig;

use common::{leaked_ids, spawn, with_script};

const WALKTHROUGH_QUESTION: &str = "How many patients with dm2 are on ozempic?";

#[tokio::test]
async fn chats_get_fresh_ids_and_echo_overrides() {
    let s = spawn(with_script("walkthrough")).await;
    let raw = s.client.raw(Method::POST, "/chats", None).await.unwrap();
    assert_eq!(raw.status, 201);
    let a: Value = serde_json::from_str(&raw.body).unwrap();
    let b = s.client.create_chat(None).await.unwrap();
    assert_ne!(a["session_id"], json!(b.session_id));
    assert!(b.config.delegation);

    let o = ConfigOverrides {
        delegation: Some(false),
        ..ConfigOverrides::default()
    };
    let c = s.client.create_chat(Some(&o)).await.unwrap();
    assert!(!c.config.delegation);
    let info = s.client.get_chat(&c.session_id).await.unwrap();
    assert!(!info.config.delegation);
    assert!(info.config.kb_enabled);
    assert_eq!(info.turns, 0);
    assert!(!info.busy);
    assert_eq!(info.history.unwrap().len(), 1);

    let bad = s
        .client
        .raw(Method::POST, "/chats", Some(&json!({"colour": "blue"})))
        .await
        .unwrap();
    assert_eq!(bad.status, 422);
    let zero = s
        .client
        .raw(Method::POST, "/chats", Some(&json!({"max_iterations": 0})))
        .await
        .unwrap();
    assert_eq!(zero.status, 422);
    assert_eq!(s.client.get_chat("s-nope").await.unwrap_err().status(), Some(404));
}

#[tokio::test]
async fn unreachable_model_backend_is_503() {
    let mut config = ServiceConfig::default();
    config.agent.model = Some(ModelSpec::Endpoint(EndpointConfig {
        base_url: "http://127.0.0.1:9/v1".into(),
        model: "m".into(),
        api_key_env: None,
        timeout_ms: 1000,
    }));
    let s = spawn(config).await;
    let err = s.client.create_chat(None).await.unwrap_err();
    assert_eq!(err.status(), Some(503));
}

#[tokio::test]
async fn walkthrough_over_server_sent_events() {
    let s = spawn(with_script("walkthrough")).await;
    let chat = s.client.create_chat(None).await.unwrap();
    let mut seen = Vec::new();
    let turn = s
        .client
        .send_message_with(&chat.session_id, WALKTHROUGH_QUESTION, |ev| seen.push(ev.sequence))
        .await
        .unwrap();
    let seqs: Vec<u64> = turn.events.iter().map(|e| e.sequence).collect();
    assert_eq!(seqs, (0..turn.events.len() as u64).collect::<Vec<_>>());
    assert_eq!(seen, seqs);
    assert_eq!(turn.terminal().unwrap().kind, EventKind::TurnDone);
    assert_eq!(turn.events.iter().filter(|e| e.kind.is_terminal()).count(), 1);

    let cohort_call = turn
        .events
        .iter()
        .position(|e| e.kind == EventKind::ToolCall && e.payload["name"] == "create_patient_cohort")
        .expect("cohort created");
    let link_text = turn
        .events
        .iter()
        .rposition(|e| e.kind == EventKind::AssistantText && e.payload["text"].as_str().unwrap().contains("/results/"))
        .expect("answer carries a link");
    assert!(cohort_call < link_text);
    let done = turn.terminal().unwrap();
    assert_eq!(done.payload["tool_invocations"], 3);
    assert_eq!(done.payload["delegations"], 1);
    let kinds: Vec<EventKind> = turn.events.iter().map(|e| e.kind).collect();
    assert!(kinds.contains(&EventKind::DelegationStarted));
    assert!(kinds.contains(&EventKind::DelegationFinished));

    let text = turn.final_text().unwrap();
    let link = &text[text.find("/results/").unwrap()..];
    let register = s.client.results(link.trim_end_matches('.')).await.unwrap();
    assert_eq!(register["kind"], "register");
    assert_eq!(register["expr"], "(C-DM2 AND C-SEMA-3M AND C-ACTIVE)");
    let rows = register["rows"].as_array().unwrap();
    assert_eq!(rows.len() as u64, register["count"].as_u64().unwrap());
    assert!(!rows.is_empty());

    let info = s.client.get_chat(&chat.session_id).await.unwrap();
    assert_eq!(info.turns, 1);
    let history = info.history.unwrap();
    assert_eq!(history[1].content, WALKTHROUGH_QUESTION);
}

#[tokio::test]
async fn message_errors() {
    let s = spawn(with_script("walkthrough")).await;
    let chat = s.client.create_chat(None).await.unwrap();
    let path = format!("/chats/{}/messages", chat.session_id);
    let unknown = s
        .client
        .raw(Method::POST, "/chats/s-missing/messages", Some(&json!({"text": "hi"})))
        .await
        .unwrap();
    assert_eq!(unknown.status, 404);
    let empty = s.client.raw(Method::POST, &path, Some(&json!({"text": "  "}))).await.unwrap();
    assert_eq!(empty.status, 422);
    let missing = s.client.raw(Method::POST, &path, Some(&json!({}))).await.unwrap();
    assert_eq!(missing.status, 422);

    let slot = s.state.session(&chat.session_id).unwrap();
    let held = slot.session.lock().await;
    let busy = s.client.raw(Method::POST, &path, Some(&json!({"text": "hi"}))).await.unwrap();
    assert_eq!(busy.status, 409);
    assert!(s.client.get_chat(&chat.session_id).await.unwrap().busy);
    drop(held);
    assert_eq!(s.client.get_chat(&chat.session_id).await.unwrap().history.map(|h| h.len()), Some(1));
}

async fn slow_backend() -> String {
    let app = Router::new()
        .route("/v1/models", get(|| async { Json(json!({"data": []})) }))
        .route(
            "/v1/chat/completions",
            post(|| async {
                tokio::time::sleep(Duration::from_millis(600)).await;
                Json(json!({
                    "choices": [{"message": {"role": "assistant", "content": "Nothing to do."}}],
                    "usage": {"prompt_tokens": 10, "completion_tokens": 3}
                }))
            }),
        );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    base
}

#[tokio::test]
async fn concurrent_post_is_rejected_while_a_turn_runs() {
    let mut config = ServiceConfig::default();
    config.agent.model = Some(ModelSpec::Endpoint(EndpointConfig {
        base_url: slow_backend().await,
        model: "stub".into(),
        api_key_env: None,
        timeout_ms: 10_000,
    }));
    let s = spawn(config).await;
    let chat = s.client.create_chat(None).await.unwrap();
    let first = {
        let client = s.client.clone();
        let id = chat.session_id.clone();
        tokio::spawn(async move { client.send_message(&id, "first").await })
    };
    tokio::time::sleep(Duration::from_millis(150)).await;
    let second = s.client.send_message(&chat.session_id, "second").await;
    assert!(matches!(second, Err(ClientError::Status { status: 409, .. })));
    let first = first.await.unwrap().unwrap();
    assert_eq!(first.final_text(), Some("Nothing to do."));
    let done = first.terminal().unwrap();
    assert_eq!(done.payload["prompt_tokens"], 10);
    let other = s.client.create_chat(None).await.unwrap();
    assert!(s.client.send_message(&other.session_id, "again").await.is_ok());
}

#[tokio::test]
async fn result_views() {
    let s = spawn(with_script("walkthrough")).await;
    let den = s.client.create_cohort("(C-DM2 AND C-ACTIVE)", None).await.unwrap();
    let num = s.client.create_cohort("(C-DM2 AND C-ACTIVE AND C-SEMA-3M)", None).await.unwrap();
    assert!(num.size <= den.size);

    let profile = s.client.profile(&den.cohort_id, None).await.unwrap();
    assert_eq!(profile["kind"], "profile");
    assert_eq!(profile["summary"]["count"].as_u64().unwrap() as usize, den.size);

    let cats = s
        .state
        .gateway()
        .exec()
        .catalog()
        .registries()
        .concept_categories
        .clone();
    let cat = &cats[0].id;
    let hist = s.client.profile(&den.cohort_id, Some(cat)).await.unwrap();
    assert_eq!(hist["kind"], "histogram");
    let sum: u64 = hist["bins"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(hist["total"].as_u64().unwrap(), sum);

    for by in ["district", "practice"] {
        let cmp = s.client.compare(&num.cohort_id, &den.cohort_id, by).await.unwrap();
        let rows = cmp["rows"].as_array().unwrap();
        let total: u64 = rows.iter().map(|r| r["denominator"].as_u64().unwrap()).sum();
        assert_eq!(total as usize, den.size);
    }

    let registries = s.state.gateway().exec().catalog().registries().clone();
    let kpi = s.client.kpi(&registries.kpis[0].id, None).await.unwrap();
    assert_eq!(kpi["kind"], "kpi");
    let loc = &registries.kpi_populations[0].id;
    assert!(s.client.kpi(&registries.kpis[0].id, Some(loc)).await.is_ok());
    let wf = s.client.workflow(&registries.risksets[0].id).await.unwrap();
    assert_eq!(wf["kind"], "workflow");
    let again = s.client.workflow(&registries.risksets[0].id).await.unwrap();
    assert_eq!(wf["cohort_id"], again["cohort_id"]);
    let report = &registries.reports[0].id;
    let reg = s.client.register(&den.cohort_id, Some(report)).await.unwrap();
    assert_eq!(reg["rows"].as_array().unwrap().len(), den.size);

    for (path, status) in [
        ("/results/register?cohort=K404", 404),
        ("/results/profile?den=K404", 404),
        ("/results/compare?num=K404&den=K1", 404),
        ("/results/profile?den=K1&category=NOPE", 404),
        ("/results/register?cohort=K1&report=NOPE", 404),
        ("/results/kpi?kpi=NOPE", 404),
        ("/results/kpi?kpi=X&loc=Y", 404),
        ("/results/workflow?riskset=NOPE", 404),
        ("/results/register", 400),
        ("/results/compare?num=K1&den=K1&by=street", 400),
        ("/cohorts/K404", 404),
    ] {
        let r = s.client.raw(Method::GET, path, None).await.unwrap();
        assert_eq!(r.status, status, "{path}");
        let body: Value = serde_json::from_str(&r.body).unwrap();
        assert!(body["error"].is_string());
    }
}

#[tokio::test]
async fn edit_and_rerun() {
    let s = spawn(with_script("walkthrough")).await;
    let chat = s.client.create_chat(None).await.unwrap();
    let base = s.client.create_cohort("C-DM2 and C-SEMA-3M", Some(&chat.session_id)).await.unwrap();
    assert_eq!(base.expr, "(C-DM2 AND C-SEMA-3M)");
    let narrowed = s
        .client
        .create_cohort(&format!("{} AND C-ACTIVE", base.expr), Some(&chat.session_id))
        .await
        .unwrap();
    assert!(narrowed.size <= base.size);
    let reverted = s.client.create_cohort(&base.expr, Some(&chat.session_id)).await.unwrap();
    assert_eq!(reverted.size, base.size);
    assert_ne!(reverted.cohort_id, base.cohort_id);
    let meta = s.client.get_cohort(&narrowed.cohort_id).await.unwrap();
    assert_eq!(meta["expr"], "((C-DM2 AND C-SEMA-3M) AND C-ACTIVE)");
    assert_eq!(meta["session_id"], json!(chat.session_id));

    let info = s.client.get_chat(&chat.session_id).await.unwrap();
    assert_eq!(info.edits.len(), 3);
    assert_eq!(info.edits[1].cohort_id, narrowed.cohort_id);
    assert_eq!(info.history.unwrap().len(), 1);

    let unknown = s
        .client
        .raw(Method::POST, "/cohorts", Some(&json!({"expr": "C-DM2 AND C-NOPE"})))
        .await
        .unwrap();
    assert_eq!(unknown.status, 422);
    let body: Value = serde_json::from_str(&unknown.body).unwrap();
    let v = &body["detail"]["violations"][0];
    assert_eq!(v["kind"], "UnknownConcept");
    assert_eq!(v["detail"], "C-NOPE");
    assert_eq!(v["position"], 10);

    let syntax = s
        .client
        .raw(Method::POST, "/cohorts", Some(&json!({"expr": "C-DM2 AND (C-ACTIVE"})))
        .await
        .unwrap();
    assert_eq!(syntax.status, 422);
    let body: Value = serde_json::from_str(&syntax.body).unwrap();
    assert_eq!(body["detail"]["violations"][0]["kind"], "SyntaxError");
    assert!(body["detail"]["violations"][0]["position"].is_u64());

    let cohort_ref = s
        .client
        .raw(Method::POST, "/cohorts", Some(&json!({"expr": "COHORT:K77 OR C-DM2"})))
        .await
        .unwrap();
    let body: Value = serde_json::from_str(&cohort_ref.body).unwrap();
    assert_eq!(body["detail"]["violations"][0]["kind"], "UnknownCohort");
    assert_eq!(body["detail"]["violations"][0]["position"], 0);

    let chained = s
        .client
        .create_cohort(&format!("COHORT:{} AND NOT C-ACTIVE", base.cohort_id), None)
        .await
        .unwrap();
    assert_eq!(chained.size, base.size - narrowed.size);
    let stranger = s
        .client
        .raw(Method::POST, "/cohorts", Some(&json!({"expr": "C-DM2", "session_id": "s-none"})))
        .await
        .unwrap();
    assert_eq!(stranger.status, 404);
}

#[tokio::test]
async fn feedback_and_journal() {
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal.jsonl");
    let mut config = with_script("walkthrough");
    config.journal = Some(journal.clone());
    let s = spawn(config).await;
    let chat = s.client.create_chat(None).await.unwrap();
    let early = s.client.feedback(&chat.session_id, 0, "positive", None).await.unwrap_err();
    assert_eq!(early.status(), Some(404));

    s.client.send_message(&chat.session_id, WALKTHROUGH_QUESTION).await.unwrap();
    s.client.click(&chat.session_id, 0).await.unwrap();
    let raw = s
        .client
        .raw(
            Method::POST,
            "/feedback",
            Some(&json!({"session_id": chat.session_id, "turn": 0, "verdict": "positive", "free_text": "spot on"})),
        )
        .await
        .unwrap();
    assert_eq!(raw.status, 204);
    let dup = s.client.feedback(&chat.session_id, 0, "negative", None).await.unwrap_err();
    assert_eq!(dup.status(), Some(409));
    assert_eq!(s.client.feedback("s-none", 0, "positive", None).await.unwrap_err().status(), Some(404));
    assert_eq!(s.client.feedback(&chat.session_id, 1, "positive", None).await.unwrap_err().status(), Some(404));
    let bad = s
        .client
        .raw(Method::POST, "/feedback", Some(&json!({"session_id": chat.session_id, "turn": 0, "verdict": "meh"})))
        .await
        .unwrap();
    assert_eq!(bad.status, 422);
    assert_eq!(s.client.click("s-none", 0).await.unwrap_err().status(), Some(404));

    // A second session: one negative turn, one unanswered turn.
    let other = s.client.create_chat(None).await.unwrap();
    s.client.send_message(&other.session_id, WALKTHROUGH_QUESTION).await.unwrap();
    s.client.send_message(&other.session_id, "and now?").await.unwrap();
    s.client.feedback(&other.session_id, 1, "negative", None).await.unwrap();
    s.client.click(&other.session_id, 0).await.unwrap();

    let csv = s.client.feedback_export().await.unwrap();
    assert_eq!(csv, "verdict,turns,url_clicked\npositive,1,1\nnegative,1,0\nno_response,1,1\n");
    let list = s.client.feedback_list().await.unwrap();
    let records = list["records"].as_array().unwrap();
    assert_eq!(records.len(), 2);
    let positive = records.iter().find(|r| r["verdict"] == "positive").unwrap();
    assert_eq!(positive["url_clicked"], true);
    assert_eq!(positive["free_text"], "spot on");

    s.state.journal.flush().await;
    let lines: Vec<Value> = std::fs::read_to_string(&journal)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let count = |t: &str| lines.iter().filter(|l| l["type"] == t).count();
    assert_eq!(count("session_created"), 2);
    assert_eq!(count("turn"), 3);
    assert_eq!(count("feedback"), 2);
    assert_eq!(count("url_clicked"), 2);
    let text = std::fs::read_to_string(&journal).unwrap();
    assert!(leaked_ids(&s.state, &text).is_empty());
}

#[tokio::test]
async fn history_survives_across_turns() {
    let s = spawn(with_script("walkthrough")).await;
    let chat = s.client.create_chat(None).await.unwrap();
    s.client.send_message(&chat.session_id, WALKTHROUGH_QUESTION).await.unwrap();
    let before = s.client.get_chat(&chat.session_id).await.unwrap().history.unwrap().len();
    let second = s.client.send_message(&chat.session_id, "thanks").await.unwrap();
    assert!(second.terminal().is_some());
    assert_eq!(second.events[0].sequence, 0);
    let info = s.client.get_chat(&chat.session_id).await.unwrap();
    assert_eq!(info.turns, 2);
    let history = info.history.unwrap();
    assert!(history.len() > before);
    assert_eq!(history[1].content, WALKTHROUGH_QUESTION);
}

#[tokio::test]
async fn health_reports_the_store() {
    let s = spawn(with_script("walkthrough")).await;
    let h = s.client.health().await.unwrap();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["patients"], 1000);
}

#[tokio::test]
async fn ui_assets_mount_when_configured() {
    let bare = spawn(with_script("walkthrough")).await;
    assert_eq!(bare.client.raw(Method::GET, "/ui/", None).await.unwrap().status, 404);

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><title>chat</title>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let mut config = with_script("walkthrough");
    config.ui_dir = Some(dir.path().to_path_buf());
    let s = spawn(config).await;
    let index = s.client.raw(Method::GET, "/ui/", None).await.unwrap();
    assert_eq!(index.status, 200);
    assert!(index.body.contains("<title>chat</title>"));
    let js = s.client.raw(Method::GET, "/ui/app.js", None).await.unwrap();
    assert_eq!(js.body, "console.log(1)");
    let deep = s.client.raw(Method::GET, "/ui/chats/anything", None).await.unwrap();
    assert!(deep.body.contains("<title>chat</title>"));
    assert_eq!(s.client.health().await.unwrap()["status"], "ok");
}
