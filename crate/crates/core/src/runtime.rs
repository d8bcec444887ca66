//! Assembling an agent from data sources on disk or the bundled defaults.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{build_model, Agent, AgentConfig, ModelError, ModelSpec, PromptError, PromptSet};
use crate::assets;
use crate::catalog::{load_catalog, load_registries, Catalog, CatalogError};
use crate::ehr::{generate, load_store, EhrStore, ExecutionLayer, GenerateError, StoreIoError};
use crate::kb::{load_kb, KbError, KnowledgeBase, RemoteKbConfig};
use crate::tools::ToolGateway;

/// Where the catalog, KB, store and prompts come from. Unset paths fall
/// back to the bundled assets; an unset store directory means a freshly
/// generated demo store.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub registries: Option<PathBuf>,
    #[serde(default)]
    pub kb: Option<PathBuf>,
    #[serde(default)]
    pub remote_kb: Option<RemoteKbConfig>,
    #[serde(default)]
    pub store_dir: Option<PathBuf>,
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    /// Seed for the generated demo store; ignored with `store_dir`.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("{0}")]
    Catalog(#[from] CatalogError),
    #[error("{0}")]
    Kb(#[from] KbError),
    #[error("StoreMissing: {0}")]
    StoreMissing(String),
    #[error("{0}")]
    Store(#[from] StoreIoError),
    #[error("{0}")]
    Generate(#[from] GenerateError),
    #[error("{0}")]
    Prompt(#[from] PromptError),
    #[error("{0}")]
    Model(#[from] ModelError),
}

pub fn catalog_from(data: &DataConfig) -> Result<Catalog, SetupError> {
    let catalog = match &data.catalog {
        Some(p) => load_catalog(p)?,
        None => return Ok(match &data.registries {
            Some(r) => Catalog::from_json_str(assets::CATALOG_JSON)?.with_registries(load_registries(r)?)?,
            None => assets::catalog(),
        }),
    };
    let registries = match &data.registries {
        Some(r) => load_registries(r)?,
        None => serde_json::from_str(assets::REGISTRIES_JSON).expect("bundled registries parse"),
    };
    Ok(catalog.with_registries(registries)?)
}

pub fn store_from(data: &DataConfig, catalog: &Catalog) -> Result<EhrStore, SetupError> {
    match &data.store_dir {
        Some(dir) if !dir.join("patient.csv").is_file() => {
            Err(SetupError::StoreMissing(format!("no patient.csv under {}", dir.display())))
        }
        Some(dir) => Ok(load_store(dir)?),
        None => {
            let mut config = assets::demo_config();
            if let Some(seed) = data.seed {
                config.seed = seed;
            }
            Ok(generate(&config, catalog)?)
        }
    }
}

pub fn execution_from(data: &DataConfig) -> Result<ExecutionLayer, SetupError> {
    let catalog = catalog_from(data)?;
    let store = store_from(data, &catalog)?;
    let as_of = store.as_of().unwrap_or_else(|| assets::demo_config().as_of);
    Ok(ExecutionLayer::new(Arc::new(catalog), Arc::new(store), as_of))
}

pub fn knowledge_base_from(data: &DataConfig) -> Result<KnowledgeBase, SetupError> {
    let local = match &data.kb {
        Some(p) => load_kb(p)?,
        None => assets::kb(),
    };
    Ok(KnowledgeBase::new(local, data.remote_kb.clone()))
}

/// Resolve a script reference: `builtin:<name>` or a file path.
pub fn script_spec(script: &str) -> ModelSpec {
    ModelSpec::Script {
        path: script.to_string(),
    }
}

/// Build an agent with a fresh execution layer and cohort cache.
pub fn build_agent(data: &DataConfig, config: &AgentConfig) -> Result<Agent, SetupError> {
    let spec = config
        .model
        .clone()
        .unwrap_or_else(|| script_spec("builtin:walkthrough"));
    let model = build_model(&spec)?;
    let prompts = match &data.prompts_dir {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::default(),
    };
    let gateway = ToolGateway::new(Arc::new(execution_from(data)?), Arc::new(knowledge_base_from(data)?));
    Ok(Agent::new(model, gateway, prompts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::write_store;

    #[test]
    fn bundled_defaults() {
        let agent = build_agent(&DataConfig::default(), &AgentConfig::default()).unwrap();
        assert_eq!(agent.gateway().exec().store().len(), 1000);
        assert_eq!(agent.model().describe(), "script:builtin:walkthrough");
    }

    #[test]
    fn seed_changes_the_store() {
        let a = execution_from(&DataConfig::default()).unwrap();
        let b = execution_from(&DataConfig {
            seed: Some(7),
            ..DataConfig::default()
        })
        .unwrap();
        assert_ne!(a.store().patients()[0].pat_id, b.store().patients()[0].pat_id);
    }

    #[test]
    fn store_directory_round_trip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let missing = DataConfig {
            store_dir: Some(dir.path().join("nope")),
            ..DataConfig::default()
        };
        assert!(matches!(execution_from(&missing), Err(SetupError::StoreMissing(_))));
        let demo = assets::demo_store();
        write_store(&demo, dir.path(), None).unwrap();
        let loaded = execution_from(&DataConfig {
            store_dir: Some(dir.path().to_path_buf()),
            ..DataConfig::default()
        })
        .unwrap();
        assert_eq!(loaded.store().len(), demo.len());
        assert_eq!(loaded.as_of(), assets::demo_config().as_of);
    }
}
