//! Terminology lookup for brand names, acronyms and synonyms.
//!
//! A local JSON mapping is always consulted first. An HTTP endpoint can be
//! configured as a fallback for terms the local file does not know; it is
//! called as `GET <url>?query=<term>` and must answer with a JSON array of
//! [`KbEntry`].

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_RESULTS: usize = 10;
pub const DEFAULT_REMOTE_TIMEOUT_MS: u64 = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KbKind {
    Brand,
    Generic,
    Acronym,
    Synonym,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbEntry {
    pub term: String,
    pub preferred: String,
    pub kind: KbKind,
    #[serde(default)]
    pub related: Vec<String>,
}

impl KbEntry {
    fn check(&self) -> Result<(), String> {
        if self.term.trim().is_empty() {
            return Err("empty term".into());
        }
        if self.kind == KbKind::Brand && self.related.len() != 1 {
            return Err(format!(
                "brand `{}` must name exactly one generic, found {}",
                self.term,
                self.related.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KbError {
    #[error("MalformedKb: {0}")]
    MalformedKb(String),
    #[error("query must not be empty")]
    EmptyQuery,
    #[error("RemoteUnavailable: {0}")]
    RemoteUnavailable(String),
}

/// Immutable local mapping.
#[derive(Debug, Clone, Default)]
pub struct Kb {
    entries: Vec<KbEntry>,
}

impl Kb {
    pub fn from_entries(entries: Vec<KbEntry>) -> Result<Self, KbError> {
        for e in &entries {
            e.check().map_err(KbError::MalformedKb)?;
        }
        Ok(Kb { entries })
    }

    /// Parses a JSON array of entries. Blank input is an empty KB.
    pub fn from_json_str(text: &str) -> Result<Self, KbError> {
        if text.trim().is_empty() {
            return Ok(Kb::default());
        }
        let entries: Vec<KbEntry> =
            serde_json::from_str(text).map_err(|e| KbError::MalformedKb(e.to_string()))?;
        Kb::from_entries(entries)
    }

    pub fn entries(&self) -> &[KbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact case-insensitive term matches, then substring matches, in file
    /// order within each tier; at most [`MAX_RESULTS`].
    pub fn lookup(&self, query: &str) -> Result<Vec<KbEntry>, KbError> {
        let q = query.trim().to_lowercase();
        if q.is_empty() {
            return Err(KbError::EmptyQuery);
        }
        let mut exact = Vec::new();
        let mut partial = Vec::new();
        for e in &self.entries {
            let term = e.term.to_lowercase();
            if term == q {
                exact.push(e.clone());
            } else if term.contains(&q) || (term.len() >= 3 && q.contains(&term)) {
                partial.push(e.clone());
            }
        }
        exact.extend(partial);
        exact.truncate(MAX_RESULTS);
        Ok(exact)
    }
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<Kb, KbError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| KbError::MalformedKb(format!("{}: {e}", path.display())))?;
    Kb::from_json_str(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteKbConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Name of the environment variable holding a bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_timeout_ms() -> u64 {
    DEFAULT_REMOTE_TIMEOUT_MS
}

#[derive(Debug, Clone)]
pub struct RemoteKb {
    config: RemoteKbConfig,
    http: reqwest::Client,
}

impl RemoteKb {
    pub fn new(config: RemoteKbConfig) -> Self {
        RemoteKb {
            config,
            http: reqwest::Client::new(),
        }
    }

    pub async fn lookup(&self, query: &str) -> Result<Vec<KbEntry>, KbError> {
        let mut req = self
            .http
            .get(&self.config.url)
            .query(&[("query", query)])
            .timeout(Duration::from_millis(self.config.timeout_ms));
        if let Some(var) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.bearer_auth(key);
            }
        }
        let unavailable = |e: reqwest::Error| KbError::RemoteUnavailable(e.to_string());
        let resp = req.send().await.map_err(unavailable)?;
        if !resp.status().is_success() {
            return Err(KbError::RemoteUnavailable(format!("status {}", resp.status())));
        }
        let mut entries: Vec<KbEntry> = resp.json().await.map_err(unavailable)?;
        entries.truncate(MAX_RESULTS);
        Ok(entries)
    }
}

/// Local mapping plus optional remote fallback.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    local: Kb,
    remote: Option<RemoteKb>,
}

impl KnowledgeBase {
    pub fn new(local: Kb, remote: Option<RemoteKbConfig>) -> Self {
        KnowledgeBase {
            local,
            remote: remote.map(RemoteKb::new),
        }
    }

    pub fn local(&self) -> &Kb {
        &self.local
    }

    pub async fn lookup(&self, query: &str) -> Result<Vec<KbEntry>, KbError> {
        let hits = self.local.lookup(query)?;
        match &self.remote {
            Some(remote) if hits.is_empty() => remote.lookup(query.trim()).await,
            _ => Ok(hits),
        }
    }
}
