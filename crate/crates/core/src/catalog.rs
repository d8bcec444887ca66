//! Local vocabulary of clinical concepts and the lexical search over it.
//!
//! A [`Catalog`] holds the concept records that cohort expressions are
//! written in terms of, plus the optional side registries (reports,
//! risk sets, KPIs, KPI populations and observation categories) that the
//! other search modes address. It is immutable once loaded.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::Sex;
use crate::logic;

/// Default number of search hits returned when the caller gives no limit.
pub const DEFAULT_SEARCH_LIMIT: usize = 25;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("malformed catalog at line {line}, column {column}: {message}")]
    MalformedCatalog {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate concept id `{0}`")]
    DuplicateConceptId(String),
    #[error("invalid concept `{id}`: {reason}")]
    InvalidConcept { id: String, reason: String },
    #[error("invalid registry entry `{id}`: {reason}")]
    InvalidRegistry { id: String, reason: String },
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CatalogError {
    fn malformed(err: serde_json::Error) -> Self {
        CatalogError::MalformedCatalog {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// Event table (or patient table) a concept is evaluated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Conditions,
    Medications,
    Observations,
    Demographics,
}

impl Domain {
    pub fn is_event(self) -> bool {
        !matches!(self, Domain::Demographics)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Conditions => "conditions",
            Domain::Medications => "medications",
            Domain::Observations => "observations",
            Domain::Demographics => "demographics",
        }
    }
}

/// Patient-attribute test carried by demographics concepts instead of codes.
///
/// Textual forms: `active`, `age>=N`, `age<N`, `sex=female`, `sex=male`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Predicate {
    Active,
    AgeAtLeast(u32),
    AgeBelow(u32),
    Sex(Sex),
}

impl FromStr for Predicate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "active" {
            return Ok(Predicate::Active);
        }
        if let Some(n) = s.strip_prefix("age>=") {
            return n
                .parse()
                .map(Predicate::AgeAtLeast)
                .map_err(|_| format!("bad age bound in `{s}`"));
        }
        if let Some(n) = s.strip_prefix("age<") {
            return n
                .parse()
                .map(Predicate::AgeBelow)
                .map_err(|_| format!("bad age bound in `{s}`"));
        }
        match s {
            "sex=female" => Ok(Predicate::Sex(Sex::Female)),
            "sex=male" => Ok(Predicate::Sex(Sex::Male)),
            _ => Err(format!("unknown predicate `{s}`")),
        }
    }
}

impl TryFrom<String> for Predicate {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Predicate> for String {
    fn from(p: Predicate) -> String {
        p.to_string()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Active => write!(f, "active"),
            Predicate::AgeAtLeast(n) => write!(f, "age>={n}"),
            Predicate::AgeBelow(n) => write!(f, "age<{n}"),
            Predicate::Sex(s) => write!(f, "sex={}", s.as_str()),
        }
    }
}

/// A named clinical codeset with a target domain and optional lookback window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub domain: Domain,
    #[serde(default)]
    pub codes: Vec<String>,
    #[serde(default)]
    pub lookback_months: Option<u32>,
    #[serde(default)]
    pub vocab_tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<Predicate>,
}

impl Concept {
    fn check(&self) -> Result<(), CatalogError> {
        let invalid = |reason: &str| CatalogError::InvalidConcept {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if !self
            .id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(invalid("id may only contain letters, digits, '-', '_' and '.'"));
        }
        if logic::is_keyword(&self.id) || self.id.to_ascii_uppercase().starts_with("COHORT") {
            return Err(invalid("id collides with an expression keyword"));
        }
        if self.lookback_months == Some(0) {
            return Err(invalid("lookback_months must be at least 1"));
        }
        if self.domain.is_event() {
            if self.codes.is_empty() {
                return Err(invalid("event-domain concept has no codes"));
            }
            if self.predicate.is_some() {
                return Err(invalid("event-domain concept carries a predicate"));
            }
        } else {
            if self.predicate.is_none() {
                return Err(invalid("demographics concept needs a predicate"));
            }
            if !self.codes.is_empty() {
                return Err(invalid("demographics concept must not carry codes"));
            }
            if self.lookback_months.is_some() {
                return Err(invalid("demographics concept cannot have a lookback"));
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> ConceptSummary {
        ConceptSummary {
            id: self.id.clone(),
            name: self.name.clone(),
            domain: Some(self.domain),
            lookback_months: self.lookback_months,
        }
    }
}

/// Search target. Only `concepts` and `concept_categories` are always backed;
/// the others read optional registries that may be empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Concepts,
    Reports,
    Kpis,
    KpiPopulations,
    Risksets,
    ConceptCategories,
}

impl SearchMode {
    pub const ALL: [SearchMode; 6] = [
        SearchMode::Concepts,
        SearchMode::Reports,
        SearchMode::Kpis,
        SearchMode::KpiPopulations,
        SearchMode::Risksets,
        SearchMode::ConceptCategories,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::Concepts => "concepts",
            SearchMode::Reports => "reports",
            SearchMode::Kpis => "kpis",
            SearchMode::KpiPopulations => "kpi_populations",
            SearchMode::Risksets => "risksets",
            SearchMode::ConceptCategories => "concept_categories",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown search mode `{0}`")]
pub struct UnknownMode(pub String);

impl FromStr for SearchMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SearchMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownMode(s.to_string()))
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Projection of a concept (or registry entry) that is safe to hand to an agent.
/// Never carries codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSummary {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookback_months: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub mode: SearchMode,
    /// Number of entries that matched before the limit was applied.
    pub total: usize,
    pub truncated: bool,
    pub results: Vec<ConceptSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SearchError {
    #[error("EmptyKey: search key is empty")]
    EmptyKey,
    #[error("UnknownMode: {0}")]
    UnknownMode(#[from] UnknownMode),
    #[error("ZeroLimit: limit must be positive")]
    ZeroLimit,
}

/// Observation category used by histogram views (e.g. body weight).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptCategory {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub codes: Vec<String>,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub bin_start: f64,
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
}

fn default_bin_width() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnValue {
    LastDate,
    LastValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportColumn {
    pub name: String,
    pub codes: Vec<String>,
    pub value: ColumnValue,
}

/// Named set of extra clinical columns for the register view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub columns: Vec<ReportColumn>,
}

/// Pre-defined intervention worklist, expressed in the cohort grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Riskset {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kpi {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub numerator: String,
    pub denominator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Practice,
    District,
}

impl Grouping {
    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Practice => "practice",
            Grouping::District => "district",
        }
    }
}

impl FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "practice" => Ok(Grouping::Practice),
            "district" => Ok(Grouping::District),
            other => Err(format!("unknown grouping `{other}`")),
        }
    }
}

/// Location a KPI is broken down over; `filter` restricts to one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KpiPopulation {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub grouping: Grouping,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registries {
    #[serde(default)]
    pub concept_categories: Vec<ConceptCategory>,
    #[serde(default)]
    pub reports: Vec<Report>,
    #[serde(default)]
    pub risksets: Vec<Riskset>,
    #[serde(default)]
    pub kpis: Vec<Kpi>,
    #[serde(default)]
    pub kpi_populations: Vec<KpiPopulation>,
}

trait Searchable {
    fn id(&self) -> &str;
    fn name(&self) -> &str;
    fn description(&self) -> &str;
    fn summary(&self) -> ConceptSummary {
        ConceptSummary {
            id: self.id().to_string(),
            name: self.name().to_string(),
            domain: None,
            lookback_months: None,
        }
    }
}

macro_rules! searchable {
    ($($t:ty),*) => {$(
        impl Searchable for $t {
            fn id(&self) -> &str { &self.id }
            fn name(&self) -> &str { &self.name }
            fn description(&self) -> &str { &self.description }
        }
    )*};
}

searchable!(ConceptCategory, Report, Riskset, Kpi, KpiPopulation);

impl Searchable for Concept {
    fn id(&self) -> &str {
        &self.id
    }
    fn name(&self) -> &str {
        &self.name
    }
    fn description(&self) -> &str {
        &self.description
    }
    fn summary(&self) -> ConceptSummary {
        Concept::summary(self)
    }
}

/// Immutable concept vocabulary plus side registries.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    concepts: Vec<Concept>,
    index: HashMap<String, usize>,
    registries: Registries,
}

impl Catalog {
    pub fn from_concepts(concepts: Vec<Concept>) -> Result<Self, CatalogError> {
        let mut index = HashMap::with_capacity(concepts.len());
        for (i, c) in concepts.iter().enumerate() {
            c.check()?;
            if index.insert(c.id.clone(), i).is_some() {
                return Err(CatalogError::DuplicateConceptId(c.id.clone()));
            }
        }
        Ok(Catalog {
            concepts,
            index,
            registries: Registries::default(),
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, CatalogError> {
        let concepts: Vec<Concept> = serde_json::from_str(text).map_err(CatalogError::malformed)?;
        Self::from_concepts(concepts)
    }

    /// Attach side registries; every expression they carry must parse and
    /// reference only concepts of this catalog.
    pub fn with_registries(mut self, registries: Registries) -> Result<Self, CatalogError> {
        let mut seen = std::collections::HashSet::new();
        let ids = registries
            .concept_categories
            .iter()
            .map(|r| &r.id)
            .chain(registries.reports.iter().map(|r| &r.id))
            .chain(registries.risksets.iter().map(|r| &r.id))
            .chain(registries.kpis.iter().map(|r| &r.id))
            .chain(registries.kpi_populations.iter().map(|r| &r.id));
        for id in ids {
            if !seen.insert(id.clone()) || self.index.contains_key(id) {
                return Err(CatalogError::InvalidRegistry {
                    id: id.clone(),
                    reason: "duplicate id".into(),
                });
            }
        }
        let exprs = registries
            .risksets
            .iter()
            .map(|r| (&r.id, &r.expr))
            .chain(
                registries
                    .kpis
                    .iter()
                    .flat_map(|k| [(&k.id, &k.numerator), (&k.id, &k.denominator)]),
            );
        for (id, text) in exprs {
            let expr = logic::parse_expr(text).map_err(|e| CatalogError::InvalidRegistry {
                id: id.clone(),
                reason: e.to_string(),
            })?;
            for cid in expr.concept_ids() {
                if self.get(cid).is_none() {
                    return Err(CatalogError::InvalidRegistry {
                        id: id.clone(),
                        reason: format!("references unknown concept `{cid}`"),
                    });
                }
            }
            if expr.has_cohort_refs() {
                return Err(CatalogError::InvalidRegistry {
                    id: id.clone(),
                    reason: "registry expressions cannot reference cohorts".into(),
                });
            }
        }
        for cat in &registries.concept_categories {
            if cat.codes.is_empty() || !cat.bin_width.is_finite() || cat.bin_width <= 0.0 {
                return Err(CatalogError::InvalidRegistry {
                    id: cat.id.clone(),
                    reason: "category needs codes and a positive bin width".into(),
                });
            }
        }
        self.registries = registries;
        Ok(self)
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn registries(&self) -> &Registries {
        &self.registries
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Concept> {
        self.index.get(id).map(|&i| &self.concepts[i])
    }

    /// Full concept record including codes. Only the execution layer should
    /// need this.
    pub fn get_concept(&self, id: &str) -> Result<&Concept, CatalogError> {
        self.get(id)
            .ok_or_else(|| CatalogError::UnknownConcept(id.to_string()))
    }

    pub fn category(&self, id: &str) -> Option<&ConceptCategory> {
        self.registries.concept_categories.iter().find(|c| c.id == id)
    }

    pub fn report(&self, id: &str) -> Option<&Report> {
        self.registries.reports.iter().find(|c| c.id == id)
    }

    pub fn riskset(&self, id: &str) -> Option<&Riskset> {
        self.registries.risksets.iter().find(|c| c.id == id)
    }

    pub fn kpi(&self, id: &str) -> Option<&Kpi> {
        self.registries.kpis.iter().find(|c| c.id == id)
    }

    pub fn kpi_population(&self, id: &str) -> Option<&KpiPopulation> {
        self.registries.kpi_populations.iter().find(|c| c.id == id)
    }

    /// Case-insensitive substring search over name and description.
    ///
    /// Hits whose name matches sort before description-only hits; within each
    /// group the earlier match position wins, then the id.
    pub fn search(
        &self,
        key: &str,
        mode: SearchMode,
        limit: usize,
    ) -> Result<SearchOutcome, SearchError> {
        let key = key.trim();
        if key.is_empty() {
            return Err(SearchError::EmptyKey);
        }
        if limit == 0 {
            return Err(SearchError::ZeroLimit);
        }
        let r = &self.registries;
        let hits = match mode {
            SearchMode::Concepts => rank(&self.concepts, key),
            SearchMode::Reports => rank(&r.reports, key),
            SearchMode::Kpis => rank(&r.kpis, key),
            SearchMode::KpiPopulations => rank(&r.kpi_populations, key),
            SearchMode::Risksets => rank(&r.risksets, key),
            SearchMode::ConceptCategories => rank(&r.concept_categories, key),
        };
        let total = hits.len();
        Ok(SearchOutcome {
            mode,
            total,
            truncated: total > limit,
            results: hits.into_iter().take(limit).collect(),
        })
    }

    /// Agent-safe summary of a concept or registry entry by id.
    pub fn summary_of(&self, id: &str) -> Option<ConceptSummary> {
        fn find<T: Searchable>(items: &[T], id: &str) -> Option<ConceptSummary> {
            items.iter().find(|i| i.id() == id).map(|i| i.summary())
        }
        let r = &self.registries;
        self.get(id)
            .map(Concept::summary)
            .or_else(|| find(&r.reports, id))
            .or_else(|| find(&r.kpis, id))
            .or_else(|| find(&r.kpi_populations, id))
            .or_else(|| find(&r.risksets, id))
            .or_else(|| find(&r.concept_categories, id))
    }

    /// Parse `mode` from its wire name and search.
    pub fn search_str(
        &self,
        key: &str,
        mode: &str,
        limit: usize,
    ) -> Result<SearchOutcome, SearchError> {
        let mode: SearchMode = mode.parse()?;
        self.search(key, mode, limit)
    }
}

fn rank<T: Searchable>(items: &[T], key: &str) -> Vec<ConceptSummary> {
    let needle = key.to_lowercase();
    let mut scored: Vec<((u8, usize), &T)> = items
        .iter()
        .filter_map(|item| {
            if let Some(p) = item.name().to_lowercase().find(&needle) {
                Some(((0, p), item))
            } else {
                item.description()
                    .to_lowercase()
                    .find(&needle)
                    .map(|p| ((1, p), item))
            }
        })
        .collect();
    scored.sort_by(|(a, x), (b, y)| a.cmp(b).then_with(|| x.id().cmp(y.id())));
    scored.into_iter().map(|(_, item)| item.summary()).collect()
}

fn read(path: &Path) -> Result<String, CatalogError> {
    std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a catalog file: a JSON array of concept records.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    Catalog::from_json_str(&read(path.as_ref())?)
}

pub fn load_registries(path: impl AsRef<Path>) -> Result<Registries, CatalogError> {
    serde_json::from_str(&read(path.as_ref())?).map_err(CatalogError::malformed)
}
