//! System prompts from plain-text templates.
//!
//! `{{name}}` is replaced by a value; `{{#flag}}...{{/flag}}` is kept only
//! when `flag` is on and `{{^flag}}...{{/flag}}` only when it is off.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::AgentConfig;
use crate::tools::{RETRIEVE, SEARCH};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("MissingPlaceholder: {0}")]
    MissingPlaceholder(String),
    #[error("unterminated section `{0}`")]
    UnterminatedSection(String),
    #[error("unterminated tag at byte {0}")]
    UnterminatedTag(usize),
    #[error("{0}")]
    Io(String),
}

pub const ACTIVE_CONCEPT_ID: &str = "C-ACTIVE";

/// Fill a template. Unknown `{{name}}` placeholders and unknown section
/// flags are both [`PromptError::MissingPlaceholder`].
pub fn render_template(
    template: &str,
    values: &BTreeMap<&str, String>,
    flags: &BTreeMap<&str, bool>,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    render_into(template, values, flags, &mut out, 0)?;
    Ok(out)
}

fn render_into(
    text: &str,
    values: &BTreeMap<&str, String>,
    flags: &BTreeMap<&str, bool>,
    out: &mut String,
    offset: usize,
) -> Result<(), PromptError> {
    let mut rest = text;
    let mut pos = offset;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or(PromptError::UnterminatedTag(pos + open))?;
        let tag = after[..close].trim();
        let tail = &after[close + 2..];
        let consumed = open + 2 + close + 2;
        if let Some(name) = tag.strip_prefix('#').or_else(|| tag.strip_prefix('^')) {
            let want = tag.starts_with('#');
            let end_tag = format!("{{{{/{name}}}}}");
            let end = tail
                .find(&end_tag)
                .ok_or_else(|| PromptError::UnterminatedSection(name.to_string()))?;
            let on = *flags
                .get(name)
                .ok_or_else(|| PromptError::MissingPlaceholder(name.to_string()))?;
            if on == want {
                render_into(&tail[..end], values, flags, out, pos + consumed)?;
            }
            let skip = end + end_tag.len();
            pos += consumed + skip;
            rest = &tail[skip..];
        } else {
            let v = values
                .get(tag)
                .ok_or_else(|| PromptError::MissingPlaceholder(tag.to_string()))?;
            out.push_str(v);
            pos += consumed;
            rest = tail;
        }
    }
    out.push_str(rest);
    Ok(())
}

/// The two agent templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub query_agent: String,
    pub retrieval_agent: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            query_agent: crate::assets::QUERY_AGENT_PROMPT.to_string(),
            retrieval_agent: crate::assets::RETRIEVAL_AGENT_PROMPT.to_string(),
        }
    }
}

impl PromptSet {
    /// Load `query_agent.txt` and `retrieval_agent.txt` from a directory.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.as_ref().join(name);
            std::fs::read_to_string(&path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))
        };
        Ok(PromptSet {
            query_agent: read("query_agent.txt")?,
            retrieval_agent: read("retrieval_agent.txt")?,
        })
    }

    fn flags(config: &AgentConfig) -> BTreeMap<&'static str, bool> {
        BTreeMap::from([("kb", config.kb_enabled), ("delegation", config.delegation)])
    }

    pub fn render_query(&self, config: &AgentConfig, active_concept_id: &str) -> Result<String, PromptError> {
        let values = BTreeMap::from([
            ("active_concept_id", active_concept_id.to_string()),
            (
                "lookup_tool",
                if config.delegation { RETRIEVE } else { SEARCH }.to_string(),
            ),
        ]);
        let mut flags = Self::flags(config);
        flags.insert("kb", config.kb_enabled && !config.delegation);
        render_template(&self.query_agent, &values, &flags)
    }

    pub fn render_retrieval(&self, config: &AgentConfig) -> Result<String, PromptError> {
        render_template(&self.retrieval_agent, &BTreeMap::new(), &Self::flags(config))
    }
}
