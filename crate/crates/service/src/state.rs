use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use cohortq_core::agent::{build_model, Agent, AgentConfig, ModelError, ModelSpec, PromptSet, Session};
use cohortq_core::runtime::{execution_from, knowledge_base_from, script_spec, SetupError};
use cohortq_core::tools::ToolGateway;

use crate::config::ServiceConfig;
use crate::journal::Journal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Positive,
    Negative,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Positive => "positive",
            Verdict::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub session_id: String,
    pub turn: usize,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
    pub url_clicked: bool,
}

/// A logic edit submitted from the audit panel, kept beside the model
/// history rather than inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEdit {
    pub expr: String,
    pub cohort_id: String,
    pub size: usize,
    pub at: DateTime<Utc>,
}

/// One chat: its own agent (so scripted cursors are per session), the
/// session behind a turn mutex, and bookkeeping readable while a turn runs.
#[derive(Debug)]
pub struct SessionSlot {
    pub id: String,
    pub agent: Agent,
    pub session: Arc<tokio::sync::Mutex<Session>>,
    pub config: AgentConfig,
    pub created_at: DateTime<Utc>,
    pub turns_done: AtomicUsize,
    pub edits: Mutex<Vec<CohortEdit>>,
}

impl SessionSlot {
    pub fn turns_done(&self) -> usize {
        self.turns_done.load(Ordering::SeqCst)
    }
}

#[derive(Debug)]
pub struct AppState {
    gateway: ToolGateway,
    prompts: PromptSet,
    model: ModelSpec,
    defaults: AgentConfig,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    feedback: Mutex<BTreeMap<(String, usize), FeedbackRecord>>,
    clicks: Mutex<BTreeSet<(String, usize)>>,
    pub journal: Journal,
    ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackError {
    UnknownSession,
    UnknownTurn,
    Duplicate,
}

/// Verdict tallies over every finished turn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FeedbackCounts {
    pub turns: usize,
    pub url_clicked: usize,
}

impl AppState {
    /// Load data sources and open the journal. Call inside a tokio runtime
    /// when a journal path is configured.
    pub fn from_config(config: &ServiceConfig) -> Result<Self, SetupError> {
        let prompts = match &config.data.prompts_dir {
            Some(dir) => PromptSet::from_dir(dir)?,
            None => PromptSet::default(),
        };
        let gateway = ToolGateway::new(
            Arc::new(execution_from(&config.data)?),
            Arc::new(knowledge_base_from(&config.data)?),
        );
        let mut defaults = config.agent.clone();
        let model = defaults
            .model
            .take()
            .unwrap_or_else(|| script_spec("builtin:walkthrough"));
        build_model(&model)?;
        let journal = match &config.journal {
            Some(path) => Journal::open(path.clone()),
            None => Journal::disabled(),
        };
        let mut state = AppState::new(gateway, prompts, model, defaults, journal);
        state.ui_dir = config.ui_dir.clone();
        Ok(state)
    }

    pub fn new(
        gateway: ToolGateway,
        prompts: PromptSet,
        model: ModelSpec,
        defaults: AgentConfig,
        journal: Journal,
    ) -> Self {
        AppState {
            gateway,
            prompts,
            model,
            defaults,
            sessions: RwLock::default(),
            feedback: Mutex::default(),
            clicks: Mutex::default(),
            journal,
            ui_dir: None,
        }
    }

    pub fn with_ui_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.ui_dir = Some(dir.into());
        self
    }

    pub fn ui_dir(&self) -> Option<&Path> {
        self.ui_dir.as_deref()
    }

    pub fn gateway(&self) -> &ToolGateway {
        &self.gateway
    }

    pub fn defaults(&self) -> &AgentConfig {
        &self.defaults
    }

    pub fn model_spec(&self) -> &ModelSpec {
        &self.model
    }

    /// A fresh agent over the shared gateway.
    pub fn agent(&self) -> Result<Agent, ModelError> {
        Ok(Agent::new(
            build_model(&self.model)?,
            self.gateway.clone(),
            self.prompts.clone(),
        ))
    }

    pub fn insert_session(&self, slot: SessionSlot) -> Arc<SessionSlot> {
        let id = slot.id.clone();
        let slot = Arc::new(slot);
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(id, slot.clone());
        slot
    }

    pub fn session(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session table poisoned").len()
    }

    pub fn record_feedback(&self, record: FeedbackRecord) -> Result<FeedbackRecord, FeedbackError> {
        let slot = self
            .session(&record.session_id)
            .ok_or(FeedbackError::UnknownSession)?;
        if record.turn >= slot.turns_done() {
            return Err(FeedbackError::UnknownTurn);
        }
        let key = (record.session_id.clone(), record.turn);
        let clicked = self.clicks.lock().expect("clicks poisoned").contains(&key);
        let mut table = self.feedback.lock().expect("feedback poisoned");
        if table.contains_key(&key) {
            return Err(FeedbackError::Duplicate);
        }
        let record = FeedbackRecord {
            url_clicked: clicked,
            ..record
        };
        table.insert(key, record.clone());
        Ok(record)
    }

    pub fn record_click(&self, session_id: &str, turn: usize) -> Result<(), FeedbackError> {
        let slot = self.session(session_id).ok_or(FeedbackError::UnknownSession)?;
        if turn >= slot.turns_done() {
            return Err(FeedbackError::UnknownTurn);
        }
        let key = (session_id.to_string(), turn);
        self.clicks.lock().expect("clicks poisoned").insert(key.clone());
        if let Some(r) = self.feedback.lock().expect("feedback poisoned").get_mut(&key) {
            r.url_clicked = true;
        }
        Ok(())
    }

    pub fn feedback_records(&self) -> Vec<FeedbackRecord> {
        self.feedback
            .lock()
            .expect("feedback poisoned")
            .values()
            .cloned()
            .collect()
    }

    /// Tallies keyed by `positive`, `negative` and `no_response`.
    pub fn feedback_counts(&self) -> BTreeMap<&'static str, FeedbackCounts> {
        let slots: Vec<(String, usize)> = self
            .sessions
            .read()
            .expect("session table poisoned")
            .iter()
            .map(|(id, s)| (id.clone(), s.turns_done()))
            .collect();
        let feedback = self.feedback.lock().expect("feedback poisoned");
        let clicks = self.clicks.lock().expect("clicks poisoned");
        let mut out: BTreeMap<&'static str, FeedbackCounts> = ["positive", "negative", "no_response"]
            .into_iter()
            .map(|k| (k, FeedbackCounts::default()))
            .collect();
        for (id, done) in slots {
            for turn in 0..done {
                let key = (id.clone(), turn);
                let bucket = match feedback.get(&key) {
                    Some(r) => r.verdict.as_str(),
                    None => "no_response",
                };
                let c = out.get_mut(bucket).expect("bucket exists");
                c.turns += 1;
                if clicks.contains(&key) {
                    c.url_clicked += 1;
                }
            }
        }
        out
    }
}
