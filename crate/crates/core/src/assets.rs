//! Bundled catalog, registries, demo configuration and fixtures.

use std::sync::Arc;

use crate::catalog::{Catalog, Registries};
use crate::ehr::{generate, EhrStore, ExecutionLayer, GeneratorConfig};

pub const CATALOG_JSON: &str = include_str!("../assets/catalog.json");
pub const REGISTRIES_JSON: &str = include_str!("../assets/registries.json");
pub const DEMO_CONFIG_JSON: &str = include_str!("../assets/demo_config.json");

/// Bundled catalog with its registries attached.
pub fn catalog() -> Catalog {
    let registries: Registries =
        serde_json::from_str(REGISTRIES_JSON).expect("bundled registries parse");
    Catalog::from_json_str(CATALOG_JSON)
        .and_then(|c| c.with_registries(registries))
        .expect("bundled catalog is valid")
}

pub fn demo_config() -> GeneratorConfig {
    serde_json::from_str(DEMO_CONFIG_JSON).expect("bundled demo config parses")
}

/// Seed-42 demo store.
pub fn demo_store() -> EhrStore {
    generate(&demo_config(), &catalog()).expect("demo config generates")
}

/// Fresh execution layer over the demo store, with an empty cohort cache.
pub fn demo_execution() -> ExecutionLayer {
    let config = demo_config();
    let catalog = catalog();
    let store = generate(&config, &catalog).expect("demo config generates");
    ExecutionLayer::new(Arc::new(catalog), Arc::new(store), config.as_of)
}

pub const KB_JSON: &str = include_str!("../assets/kb.json");

pub fn kb() -> crate::kb::Kb {
    crate::kb::Kb::from_json_str(KB_JSON).expect("bundled kb is valid")
}

pub const QUERY_AGENT_PROMPT: &str = include_str!("../assets/prompts/query_agent.txt");
pub const RETRIEVAL_AGENT_PROMPT: &str = include_str!("../assets/prompts/retrieval_agent.txt");

/// Bundled model scripts, addressable as `builtin:<name>`.
pub const SCRIPTS: &[(&str, &str)] = &[
    ("walkthrough", include_str!("../assets/scripts/walkthrough.json")),
    ("epi", include_str!("../assets/scripts/epi.json")),
    ("brands_kb_on", include_str!("../assets/scripts/brands_kb_on.json")),
    ("brands_kb_off", include_str!("../assets/scripts/brands_kb_off.json")),
    ("chained_delegation_on", include_str!("../assets/scripts/chained_delegation_on.json")),
    ("chained_delegation_off", include_str!("../assets/scripts/chained_delegation_off.json")),
];

pub fn script(name: &str) -> Option<&'static str> {
    SCRIPTS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Bundled benchmarks (JSON lines), addressable as `builtin:<name>`.
pub const BENCHMARKS: &[(&str, &str)] = &[
    ("epi", include_str!("../assets/benchmarks/epi.jsonl")),
    ("brands", include_str!("../assets/benchmarks/brands.jsonl")),
    ("chained", include_str!("../assets/benchmarks/chained.jsonl")),
];

pub fn benchmark(name: &str) -> Option<&'static str> {
    BENCHMARKS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
