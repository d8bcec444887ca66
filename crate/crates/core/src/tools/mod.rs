//! The tool surface seen by the agents.
//!
//! Every result produced here is scanned by the [`Firewall`] before it is
//! handed back to the loop, and every fault becomes an `is_error` result.
//! The only hard failure is a call to a tool the caller's profile does not
//! declare.

mod firewall;
mod urls;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::catalog::{ConceptSummary, Grouping, SearchError, DEFAULT_SEARCH_LIMIT};
use crate::ehr::{CohortCreated, ExecError, ExecutionLayer};
use crate::kb::{KbError, KnowledgeBase};

pub use firewall::{firewall_scan, Firewall};
pub use urls::{create_results_url, ResultsLink};

pub const MAX_SHORTLIST: usize = 10;

pub const SEARCH: &str = "search";
pub const RETRIEVE: &str = "retrieve";
pub const CREATE_PATIENT_COHORT: &str = "create_patient_cohort";
pub const CREATE_SINGLE_REGISTER_URL: &str = "create_single_register_url";
pub const CREATE_PROFILE_URL: &str = "create_profile_url";
pub const CREATE_KPI_URL: &str = "create_kpi_url";
pub const CREATE_WORKFLOW_URL: &str = "create_workflow_url";
pub const SEARCH_UMLS: &str = "search_umls";
pub const RETURN_SHORTLIST: &str = "return_shortlist";

pub const ALL_TOOLS: [&str; 9] = [
    SEARCH,
    RETRIEVE,
    CREATE_PATIENT_COHORT,
    CREATE_SINGLE_REGISTER_URL,
    CREATE_PROFILE_URL,
    CREATE_KPI_URL,
    CREATE_WORKFLOW_URL,
    SEARCH_UMLS,
    RETURN_SHORTLIST,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub name: String,
    #[serde(default = "empty_object")]
    pub arguments: Value,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub content: String,
    pub is_error: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentProfile {
    QueryAgent,
    RetrievalAgent,
}

impl AgentProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentProfile::QueryAgent => "query_agent",
            AgentProfile::RetrievalAgent => "retrieval_agent",
        }
    }
}

/// Function-calling schema: `{name, description, parameters}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

/// Switches that decide which tools exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolConfig {
    pub delegation: bool,
    pub kb_enabled: bool,
}

/// Concepts picked by the retrieval agent, with its reasons.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortlist {
    pub concepts: Vec<ConceptSummary>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("UnknownTool: `{name}` is not available to {}", profile.as_str())]
pub struct UnknownTool {
    pub name: String,
    pub profile: AgentProfile,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("InvalidArguments: {0}")]
    InvalidArguments(String),
    #[error("{0}")]
    Search(#[from] SearchError),
    #[error("{0}")]
    Exec(#[from] ExecError),
    #[error("{0}")]
    Kb(#[from] KbError),
    #[error("DelegationFailed: {0}")]
    Delegation(String),
    #[error("FirewallViolation: result withheld because it referenced patient-level data")]
    Firewall,
}

/// Runs a retrieval sub-agent on behalf of a `retrieve` call.
#[async_trait]
pub trait Delegator: Send {
    async fn delegate(&mut self, term: &str, intent: &str) -> Result<Shortlist, String>;
}

/// Side effect of a successful call that the loop needs to know about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    CohortCreated {
        cohort_id: String,
        size: usize,
        expr: String,
    },
    Url {
        url: String,
    },
    Shortlist {
        shortlist: Shortlist,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatched {
    pub result: ToolResult,
    pub effect: Option<Effect>,
}

fn object(properties: Value, required: &[&str]) -> Value {
    json!({
        "type": "object",
        "properties": properties,
        "required": required,
    })
}

fn schema(name: &str, description: &str, parameters: Value) -> ToolSchema {
    ToolSchema {
        name: name.to_string(),
        description: description.to_string(),
        parameters,
    }
}

/// Schema for a single tool by name.
pub fn tool_schema(name: &str) -> Option<ToolSchema> {
    let s = match name {
        SEARCH => schema(
            SEARCH,
            "Case-insensitive substring search over the local catalogue. Returns ids and names only.",
            object(
                json!({
                    "key": {"type": "string", "description": "Text to look for in names and descriptions."},
                    "mode": {
                        "type": "string",
                        "enum": ["concepts", "reports", "concept_categories", "kpis", "kpi_populations", "risksets"],
                        "description": "Which kind of entry to search."
                    },
                    "limit": {"type": "integer", "minimum": 1, "description": "Maximum hits, default 25."}
                }),
                &["key", "mode"],
            ),
        ),
        RETRIEVE => schema(
            RETRIEVE,
            "Hand a single term to a retrieval assistant that searches the catalogue on a clean slate and returns a short list of matching ids with its reasoning.",
            object(
                json!({
                    "term": {"type": "string", "description": "The word or phrase to resolve, as the user wrote it."},
                    "intent": {"type": "string", "description": "One sentence on what the user is trying to achieve."}
                }),
                &["term", "intent"],
            ),
        ),
        CREATE_PATIENT_COHORT => schema(
            CREATE_PATIENT_COHORT,
            "Run a boolean expression over concept ids (AND, OR, NOT, parentheses; COHORT:<id> reuses an earlier cohort). Returns the new cohort id and its size.",
            object(
                json!({
                    "tree": {"type": "string", "description": "Expression, e.g. (C-1 AND (NOT C-2))."}
                }),
                &["tree"],
            ),
        ),
        CREATE_SINGLE_REGISTER_URL => schema(
            CREATE_SINGLE_REGISTER_URL,
            "Link to the patient list for a cohort, optionally with the columns of a report.",
            object(
                json!({
                    "cohort_id": {"type": "string"},
                    "report_id": {"type": "string"}
                }),
                &["cohort_id"],
            ),
        ),
        CREATE_PROFILE_URL => schema(
            CREATE_PROFILE_URL,
            "Link to a cohort profile. Denominator alone gives counts, age and sex; add a concept category for a distribution; add a numerator to compare rates across groups.",
            object(
                json!({
                    "denominator_cohort_id": {"type": "string"},
                    "numerator_cohort_id": {"type": "string"},
                    "concept_category_id": {"type": "string"},
                    "group_by": {"type": "string", "enum": ["practice", "district"]}
                }),
                &["denominator_cohort_id"],
            ),
        ),
        CREATE_KPI_URL => schema(
            CREATE_KPI_URL,
            "Link to a predefined indicator broken down over a location.",
            object(
                json!({
                    "kpi_id": {"type": "string"},
                    "location_id": {"type": "string"}
                }),
                &["kpi_id", "location_id"],
            ),
        ),
        CREATE_WORKFLOW_URL => schema(
            CREATE_WORKFLOW_URL,
            "Link to the worklist for a predefined risk set.",
            object(json!({"riskset_id": {"type": "string"}}), &["riskset_id"]),
        ),
        SEARCH_UMLS => schema(
            SEARCH_UMLS,
            "Look a term up in the external terminology: brand to generic, acronym senses, synonyms.",
            object(json!({"query": {"type": "string"}}), &["query"]),
        ),
        RETURN_SHORTLIST => schema(
            RETURN_SHORTLIST,
            "Finish: return up to ten ids with a short explanation of why they fit.",
            object(
                json!({
                    "concept_ids": {"type": "array", "items": {"type": "string"}, "maxItems": MAX_SHORTLIST},
                    "rationale": {"type": "string"}
                }),
                &["concept_ids", "rationale"],
            ),
        ),
        _ => return None,
    };
    Some(s)
}

/// Tool names declared for a profile, in a fixed order.
pub fn tool_names(profile: AgentProfile, config: &ToolConfig) -> Vec<&'static str> {
    match profile {
        AgentProfile::QueryAgent => {
            let mut names = vec![if config.delegation { RETRIEVE } else { SEARCH }];
            names.extend([
                CREATE_PATIENT_COHORT,
                CREATE_SINGLE_REGISTER_URL,
                CREATE_PROFILE_URL,
                CREATE_KPI_URL,
                CREATE_WORKFLOW_URL,
            ]);
            if config.kb_enabled && !config.delegation {
                names.push(SEARCH_UMLS);
            }
            names
        }
        AgentProfile::RetrievalAgent => {
            let mut names = vec![SEARCH];
            if config.kb_enabled {
                names.push(SEARCH_UMLS);
            }
            names.push(RETURN_SHORTLIST);
            names
        }
    }
}

pub fn list_tools(profile: AgentProfile, config: &ToolConfig) -> Vec<ToolSchema> {
    tool_names(profile, config)
        .into_iter()
        .filter_map(tool_schema)
        .collect()
}

struct Args<'a>(&'a Value);

impl<'a> Args<'a> {
    fn opt_str(&self, name: &str) -> Result<Option<&'a str>, ToolError> {
        match self.0.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(ToolError::InvalidArguments(format!("`{name}` must be a string"))),
        }
    }

    fn str(&self, name: &str) -> Result<&'a str, ToolError> {
        self.opt_str(name)?
            .ok_or_else(|| ToolError::InvalidArguments(format!("missing `{name}`")))
    }

    fn opt_usize(&self, name: &str) -> Result<Option<usize>, ToolError> {
        match self.0.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|n| Some(n as usize))
                .ok_or_else(|| ToolError::InvalidArguments(format!("`{name}` must be a non-negative integer"))),
        }
    }

    fn str_list(&self, name: &str) -> Result<Vec<&'a str>, ToolError> {
        let bad = || ToolError::InvalidArguments(format!("`{name}` must be a list of strings"));
        match self.0.get(name) {
            None | Some(Value::Null) => Err(ToolError::InvalidArguments(format!("missing `{name}`"))),
            Some(Value::Array(items)) => items.iter().map(|v| v.as_str().ok_or_else(bad)).collect(),
            Some(_) => Err(bad()),
        }
    }
}

fn compact(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("tool payloads serialize")
}

/// Routes tool calls to the catalog, the execution layer, the KB and the
/// URL builders.
#[derive(Debug, Clone)]
pub struct ToolGateway {
    exec: Arc<ExecutionLayer>,
    kb: Arc<KnowledgeBase>,
    firewall: Arc<Firewall>,
}

impl ToolGateway {
    pub fn new(exec: Arc<ExecutionLayer>, kb: Arc<KnowledgeBase>) -> Self {
        let firewall = Arc::new(Firewall::new(exec.store()));
        ToolGateway { exec, kb, firewall }
    }

    pub fn exec(&self) -> &Arc<ExecutionLayer> {
        &self.exec
    }

    pub fn kb(&self) -> &Arc<KnowledgeBase> {
        &self.kb
    }

    pub fn firewall(&self) -> &Arc<Firewall> {
        &self.firewall
    }

    /// Execute one call. Anything other than an undeclared tool yields a
    /// result, possibly flagged as an error.
    pub async fn dispatch(
        &self,
        profile: AgentProfile,
        config: &ToolConfig,
        call: &ToolCall,
        session_id: Option<&str>,
        delegator: Option<&mut (dyn Delegator + '_)>,
    ) -> Result<Dispatched, UnknownTool> {
        if !tool_names(profile, config).contains(&call.name.as_str()) {
            return Err(UnknownTool {
                name: call.name.clone(),
                profile,
            });
        }
        let outcome = self.run(call, session_id, delegator).await;
        let (content, effect, is_error) = match outcome {
            Ok((content, effect)) => (content, effect, false),
            Err(e) => (e.to_string(), None, true),
        };
        let (content, effect, is_error) = if self.firewall.check(&content, &call.name) {
            (content, effect, is_error)
        } else {
            (ToolError::Firewall.to_string(), None, true)
        };
        Ok(Dispatched {
            result: ToolResult {
                call_id: call.call_id.clone(),
                content,
                is_error,
            },
            effect,
        })
    }

    async fn run(
        &self,
        call: &ToolCall,
        session_id: Option<&str>,
        delegator: Option<&mut (dyn Delegator + '_)>,
    ) -> Result<(String, Option<Effect>), ToolError> {
        if !call.arguments.is_object() {
            return Err(ToolError::InvalidArguments("arguments must be a JSON object".into()));
        }
        let args = Args(&call.arguments);
        let catalog = self.exec.catalog();
        match call.name.as_str() {
            SEARCH => {
                let limit = args.opt_usize("limit")?.unwrap_or(DEFAULT_SEARCH_LIMIT);
                let out = catalog.search_str(args.str("key")?, args.str("mode")?, limit)?;
                Ok((compact(&out), None))
            }
            RETRIEVE => {
                let term = args.str("term")?;
                if term.trim().is_empty() {
                    return Err(ToolError::InvalidArguments("`term` must not be empty".into()));
                }
                let intent = args.opt_str("intent")?.unwrap_or("");
                let delegator = delegator
                    .ok_or_else(|| ToolError::Delegation("no retrieval agent is attached".into()))?;
                let shortlist = delegator
                    .delegate(term, intent)
                    .await
                    .map_err(ToolError::Delegation)?;
                Ok((compact(&shortlist), Some(Effect::Shortlist { shortlist })))
            }
            CREATE_PATIENT_COHORT => {
                let tree = args.str("tree")?;
                let CohortCreated { cohort_id, size } = self.exec.create_cohort(tree, session_id)?;
                let expr = self.exec.cohort_expr(&cohort_id)?;
                let content = compact(&json!({"cohort_id": cohort_id, "size": size}));
                Ok((
                    content,
                    Some(Effect::CohortCreated {
                        cohort_id,
                        size,
                        expr,
                    }),
                ))
            }
            CREATE_SINGLE_REGISTER_URL => self.url(ResultsLink::SingleRegister {
                cohort: args.str("cohort_id")?.to_string(),
                report: args.opt_str("report_id")?.map(str::to_string),
            }),
            CREATE_PROFILE_URL => {
                let den = args.str("denominator_cohort_id")?.to_string();
                let num = args.opt_str("numerator_cohort_id")?;
                let category = args.opt_str("concept_category_id")?;
                let link = match (num, category) {
                    (Some(_), Some(_)) => {
                        return Err(ToolError::InvalidArguments(
                            "give either numerator_cohort_id or concept_category_id, not both".into(),
                        ))
                    }
                    (Some(num), None) => {
                        let by = match args.opt_str("group_by")? {
                            None => Grouping::District,
                            Some(g) => g.parse().map_err(ToolError::InvalidArguments)?,
                        };
                        ResultsLink::Compare {
                            numerator: num.to_string(),
                            denominator: den,
                            by,
                        }
                    }
                    (None, category) => ResultsLink::Profile {
                        denominator: den,
                        category: category.map(str::to_string),
                    },
                };
                self.url(link)
            }
            CREATE_KPI_URL => self.url(ResultsLink::Kpi {
                kpi: args.str("kpi_id")?.to_string(),
                location: args.str("location_id")?.to_string(),
            }),
            CREATE_WORKFLOW_URL => self.url(ResultsLink::Workflow {
                riskset: args.str("riskset_id")?.to_string(),
            }),
            SEARCH_UMLS => {
                let entries = self.kb.lookup(args.str("query")?).await?;
                Ok((compact(&entries), None))
            }
            RETURN_SHORTLIST => {
                let ids = args.str_list("concept_ids")?;
                if ids.len() > MAX_SHORTLIST {
                    return Err(ToolError::InvalidArguments(format!(
                        "at most {MAX_SHORTLIST} ids may be returned"
                    )));
                }
                let mut concepts = Vec::with_capacity(ids.len());
                for id in ids {
                    let summary = catalog
                        .summary_of(id)
                        .ok_or_else(|| ToolError::InvalidArguments(format!("unknown id `{id}`")))?;
                    if !concepts.contains(&summary) {
                        concepts.push(summary);
                    }
                }
                let shortlist = Shortlist {
                    concepts,
                    rationale: args.str("rationale")?.to_string(),
                };
                Ok((compact(&shortlist), Some(Effect::Shortlist { shortlist })))
            }
            other => unreachable!("tool `{other}` declared without a handler"),
        }
    }

    fn url(&self, link: ResultsLink) -> Result<(String, Option<Effect>), ToolError> {
        let url = create_results_url(&link, &self.exec)?;
        Ok((compact(&json!({"url": url})), Some(Effect::Url { url })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use std::collections::BTreeSet;

    fn gateway() -> ToolGateway {
        ToolGateway::new(
            Arc::new(assets::demo_execution()),
            Arc::new(KnowledgeBase::new(assets::kb(), None)),
        )
    }

    fn call(name: &str, arguments: Value) -> ToolCall {
        ToolCall {
            call_id: "c1".into(),
            name: name.into(),
            arguments,
        }
    }

    const ON: ToolConfig = ToolConfig {
        delegation: true,
        kb_enabled: true,
    };
    const OFF: ToolConfig = ToolConfig {
        delegation: false,
        kb_enabled: false,
    };

    fn names(profile: AgentProfile, config: ToolConfig) -> BTreeSet<String> {
        list_tools(profile, &config).into_iter().map(|s| s.name).collect()
    }

    #[test]
    fn profiles_see_the_right_tools() {
        let q = names(
            AgentProfile::QueryAgent,
            ToolConfig {
                delegation: true,
                kb_enabled: false,
            },
        );
        assert!(q.contains(RETRIEVE));
        assert!(!q.contains(SEARCH));
        assert!(!q.contains(SEARCH_UMLS));

        let r = names(AgentProfile::RetrievalAgent, ON);
        assert_eq!(
            r,
            [SEARCH, SEARCH_UMLS, RETURN_SHORTLIST]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );
        for config in [ON, OFF] {
            let r = names(AgentProfile::RetrievalAgent, config);
            assert!(!r.contains(CREATE_PATIENT_COHORT));
            assert!(r.iter().all(|n| !n.starts_with("create_")));
            let q = names(AgentProfile::QueryAgent, config);
            assert!(q.contains(RETRIEVE) ^ q.contains(SEARCH));
        }
    }

    #[test]
    fn union_of_profiles_is_the_nine_tools() {
        let mut all = BTreeSet::new();
        for delegation in [false, true] {
            for kb_enabled in [false, true] {
                let c = ToolConfig {
                    delegation,
                    kb_enabled,
                };
                all.extend(names(AgentProfile::QueryAgent, c));
                all.extend(names(AgentProfile::RetrievalAgent, c));
            }
        }
        let expected: BTreeSet<String> = ALL_TOOLS.iter().map(|s| s.to_string()).collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn schemas_have_function_calling_shape() {
        for name in ALL_TOOLS {
            let s = serde_json::to_value(tool_schema(name).unwrap()).unwrap();
            assert_eq!(s["name"], name);
            assert!(s["description"].as_str().is_some_and(|d| !d.is_empty()));
            assert_eq!(s["parameters"]["type"], "object");
            let props = s["parameters"]["properties"].as_object().unwrap();
            for req in s["parameters"]["required"].as_array().unwrap() {
                assert!(props.contains_key(req.as_str().unwrap()));
            }
        }
    }

    #[tokio::test]
    async fn create_cohort_returns_id_and_size() {
        let gw = gateway();
        let d = gw
            .dispatch(
                AgentProfile::QueryAgent,
                &OFF,
                &call(CREATE_PATIENT_COHORT, json!({"tree": "(C-DM2 AND C-SEMA-3M)"})),
                None,
                None,
            )
            .await
            .unwrap();
        let expr = crate::logic::parse_expr("(C-DM2 AND C-SEMA-3M)").unwrap();
        let n = gw.exec().evaluate(&expr).unwrap().len();
        assert!(!d.result.is_error);
        assert_eq!(d.result.content, format!("{{\"cohort_id\":\"K1\",\"size\":{n}}}"));
        assert_eq!(
            d.effect,
            Some(Effect::CohortCreated {
                cohort_id: "K1".into(),
                size: n,
                expr: "(C-DM2 AND C-SEMA-3M)".into()
            })
        );
    }

    #[tokio::test]
    async fn empty_search_key_is_a_tool_error() {
        let d = gateway()
            .dispatch(
                AgentProfile::QueryAgent,
                &OFF,
                &call(SEARCH, json!({"key": "", "mode": "concepts"})),
                None,
                None,
            )
            .await
            .unwrap();
        assert!(d.result.is_error);
        assert!(d.result.content.contains("EmptyKey"));
    }

    #[tokio::test]
    async fn retrieval_agent_cannot_create_cohorts() {
        let err = gateway()
            .dispatch(
                AgentProfile::RetrievalAgent,
                &ON,
                &call(CREATE_PATIENT_COHORT, json!({"tree": "C-DM2"})),
                None,
                None,
            )
            .await
            .unwrap_err();
        assert_eq!(err.name, CREATE_PATIENT_COHORT);
    }

    #[tokio::test]
    async fn faults_become_error_results() {
        let gw = gateway();
        let cases = [
            (CREATE_PATIENT_COHORT, json!({"tree": "C-MISSING"}), "ValidationError"),
            (CREATE_PATIENT_COHORT, json!({"tree": "C-1 AND"}), "ParseError"),
            (CREATE_PATIENT_COHORT, json!({}), "InvalidArguments"),
            (CREATE_PATIENT_COHORT, json!({"tree": 3}), "InvalidArguments"),
            (CREATE_SINGLE_REGISTER_URL, json!({"cohort_id": "K9"}), "UnknownCohort"),
            (SEARCH, json!({"key": "x", "mode": "nope"}), "UnknownMode"),
            (SEARCH, json!({"key": "x", "mode": "concepts", "limit": 0}), "ZeroLimit"),
            (CREATE_WORKFLOW_URL, json!({"riskset_id": "RS-NOPE"}), "UnknownRiskset"),
            (CREATE_KPI_URL, json!({"kpi_id": "KPI-SMOKING", "location_id": "LOC-NOPE"}), "UnknownLocation"),
        ];
        for (name, args, expected) in cases {
            let d = gw
                .dispatch(AgentProfile::QueryAgent, &OFF, &call(name, args), None, None)
                .await
                .unwrap();
            assert!(d.result.is_error, "{name}");
            assert!(d.result.content.contains(expected), "{}", d.result.content);
            assert_eq!(d.effect, None);
        }
        assert!(gw.exec().cohorts().is_empty());
    }

    #[tokio::test]
    async fn url_tools() {
        let gw = gateway();
        let q = AgentProfile::QueryAgent;
        gw.dispatch(q, &OFF, &call(CREATE_PATIENT_COHORT, json!({"tree": "C-ACTIVE"})), None, None)
            .await
            .unwrap();
        gw.dispatch(q, &OFF, &call(CREATE_PATIENT_COHORT, json!({"tree": "C-SMOKER"})), None, None)
            .await
            .unwrap();
        let url = |args: Value, name: &str| {
            let gw = gw.clone();
            let name = name.to_string();
            async move {
                let d = gw.dispatch(q, &OFF, &call(&name, args), None, None).await.unwrap();
                assert!(!d.result.is_error, "{}", d.result.content);
                match d.effect {
                    Some(Effect::Url { url }) => url,
                    other => panic!("{other:?}"),
                }
            }
        };
        assert_eq!(
            url(json!({"cohort_id": "K1", "report_id": "R-MEDREVIEW"}), CREATE_SINGLE_REGISTER_URL).await,
            "/results/register?cohort=K1&report=R-MEDREVIEW"
        );
        assert_eq!(
            url(json!({"denominator_cohort_id": "K1"}), CREATE_PROFILE_URL).await,
            "/results/profile?den=K1"
        );
        assert_eq!(
            url(json!({"denominator_cohort_id": "K1", "concept_category_id": "CAT-WEIGHT"}), CREATE_PROFILE_URL).await,
            "/results/profile?den=K1&category=CAT-WEIGHT"
        );
        assert_eq!(
            url(json!({"denominator_cohort_id": "K1", "numerator_cohort_id": "K2"}), CREATE_PROFILE_URL).await,
            "/results/compare?num=K2&den=K1&by=district"
        );
        assert_eq!(
            url(json!({"kpi_id": "KPI-SMOKING", "location_id": "LOC-DISTRICTS"}), CREATE_KPI_URL).await,
            "/results/kpi?kpi=KPI-SMOKING&loc=LOC-DISTRICTS"
        );
        assert_eq!(
            url(json!({"riskset_id": "RS-MEDREVIEW"}), CREATE_WORKFLOW_URL).await,
            "/results/workflow?riskset=RS-MEDREVIEW"
        );
    }

    #[tokio::test]
    async fn search_umls_and_shortlist() {
        let gw = gateway();
        let r = AgentProfile::RetrievalAgent;
        let d = gw
            .dispatch(r, &ON, &call(SEARCH_UMLS, json!({"query": "Ozempic"})), None, None)
            .await
            .unwrap();
        assert!(d.result.content.contains("semaglutide"));
        let d = gw
            .dispatch(r, &OFF, &call(SEARCH_UMLS, json!({"query": "Ozempic"})), None, None)
            .await;
        assert!(d.is_err());

        let d = gw
            .dispatch(
                r,
                &ON,
                &call(RETURN_SHORTLIST, json!({"concept_ids": ["C-SEMA-3M", "C-SEMA-3M"], "rationale": "generic"})),
                None,
                None,
            )
            .await
            .unwrap();
        let Some(Effect::Shortlist { shortlist }) = d.effect else {
            panic!("no shortlist")
        };
        assert_eq!(shortlist.concepts.len(), 1);
        assert_eq!(shortlist.concepts[0].name, "Semaglutide - last 3 months");

        let eleven: Vec<String> = (0..11).map(|_| "C-DM2".to_string()).collect();
        let d = gw
            .dispatch(
                r,
                &ON,
                &call(RETURN_SHORTLIST, json!({"concept_ids": eleven, "rationale": ""})),
                None,
                None,
            )
            .await
            .unwrap();
        assert!(d.result.is_error);
    }

    struct FixedDelegate(Shortlist, usize);

    #[async_trait]
    impl Delegator for FixedDelegate {
        async fn delegate(&mut self, _term: &str, _intent: &str) -> Result<Shortlist, String> {
            self.1 += 1;
            Ok(self.0.clone())
        }
    }

    #[tokio::test]
    async fn retrieve_goes_to_the_delegator() {
        let gw = gateway();
        let sl = Shortlist {
            concepts: vec![assets::catalog().summary_of("C-DM2").unwrap()],
            rationale: "direct hit".into(),
        };
        let mut del = FixedDelegate(sl.clone(), 0);
        let d = gw
            .dispatch(
                AgentProfile::QueryAgent,
                &ON,
                &call(RETRIEVE, json!({"term": "dm2", "intent": "list"})),
                None,
                Some(&mut del),
            )
            .await
            .unwrap();
        assert_eq!(del.1, 1);
        assert_eq!(d.result.content, compact(&sl));
        let d = gw
            .dispatch(
                AgentProfile::QueryAgent,
                &ON,
                &call(RETRIEVE, json!({"term": "dm2", "intent": "list"})),
                None,
                None,
            )
            .await
            .unwrap();
        assert!(d.result.is_error);
    }

    #[tokio::test]
    async fn echoed_ids_are_withheld() {
        let gw = gateway();
        let leaked = gw.exec().store().patients()[0].pat_id.clone();
        let d = gw
            .dispatch(
                AgentProfile::QueryAgent,
                &OFF,
                &call(CREATE_PATIENT_COHORT, json!({"tree": leaked})),
                None,
                None,
            )
            .await
            .unwrap();
        assert!(d.result.is_error);
        assert!(d.result.content.starts_with("FirewallViolation"));
        assert!(gw.firewall().passes(&d.result.content));
        assert_eq!(gw.firewall().incidents(), 1);
    }
}
