//! Benchmark runner and cohort-overlap scoring.

mod export;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, EventSink, PromptError, Trajectory};
use crate::catalog::Catalog;
use crate::ehr::{ExecutionLayer, PatientSet};
use crate::logic::{parse_expr, validate_expr, NoCohorts, ParseError, QueryExpr};

pub use export::{export_report, write_report, ReportFormat, COLUMNS, SEMANTIC_NOTE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortScores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub exact_match: bool,
}

impl CohortScores {
    const ZERO: CohortScores = CohortScores {
        recall: 0.0,
        precision: 0.0,
        f1: 0.0,
        jaccard: 0.0,
        exact_match: false,
    };
}

/// Overlap between a reference and a retrieved cohort.
///
/// Empty sets: both empty scores as a perfect match; an empty reference
/// with a non-empty retrieval gives recall 1 and precision 0; an empty
/// retrieval against a non-empty reference scores zero throughout.
pub fn score_cohorts<T: Ord>(reference: &BTreeSet<T>, retrieved: &BTreeSet<T>) -> CohortScores {
    if reference.is_empty() && retrieved.is_empty() {
        return CohortScores {
            recall: 1.0,
            precision: 1.0,
            f1: 1.0,
            jaccard: 1.0,
            exact_match: true,
        };
    }
    let inter = reference.intersection(retrieved).count() as f64;
    let union = (reference.len() + retrieved.len()) as f64 - inter;
    let recall = if reference.is_empty() {
        1.0
    } else {
        inter / reference.len() as f64
    };
    let precision = if retrieved.is_empty() {
        0.0
    } else {
        inter / retrieved.len() as f64
    };
    let f1 = if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    };
    CohortScores {
        recall,
        precision,
        f1,
        jaccard: inter / union,
        exact_match: reference == retrieved,
    }
}

/// Jaccard over the concept ids mentioned by two expressions.
pub fn score_semantics(generated: &str, reference: &str) -> Result<f64, ParseError> {
    Ok(semantic_jaccard(&parse_expr(generated)?, &parse_expr(reference)?))
}

pub fn semantic_jaccard(generated: &QueryExpr, reference: &QueryExpr) -> f64 {
    let a = generated.concept_ids();
    let b = reference.concept_ids();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Replace cohort references by the expressions that built them.
pub fn expand_cohort_refs(expr: &QueryExpr, exec: &ExecutionLayer) -> QueryExpr {
    match expr {
        QueryExpr::CohortRef(id) => match exec.cohort(id) {
            Ok(record) => expand_cohort_refs(&record.expr, exec),
            Err(_) => expr.clone(),
        },
        QueryExpr::ConceptRef(_) => expr.clone(),
        QueryExpr::Not(c) => QueryExpr::not(expand_cohort_refs(c, exec)),
        QueryExpr::And(cs) => QueryExpr::and(cs.iter().map(|c| expand_cohort_refs(c, exec))),
        QueryExpr::Or(cs) => QueryExpr::or(cs.iter().map(|c| expand_cohort_refs(c, exec))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkItem {
    pub id: String,
    pub question: String,
    pub reference_expr: String,
    #[serde(default)]
    pub allowed_alternates: Vec<String>,
}

impl BenchmarkItem {
    pub fn references(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.reference_expr.as_str()).chain(self.allowed_alternates.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Single,
    Chained,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Single => "single",
            RunMode::Chained => "chained",
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(RunMode::Single),
            "chained" => Ok(RunMode::Chained),
            other => Err(format!("unknown mode `{other}`, expected single or chained")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("BenchmarkLoadError: line {line}: {reason}")]
    BenchmarkLoad { line: usize, reason: String },
    #[error("StoreMissing: {0}")]
    StoreMissing(String),
    #[error("{0}")]
    Prompt(#[from] PromptError),
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
}

fn load_error(line: usize, reason: impl Into<String>) -> EvalError {
    EvalError::BenchmarkLoad {
        line,
        reason: reason.into(),
    }
}

/// Parse a JSON-lines benchmark and check every reference against the
/// catalog. Blank lines are skipped; line numbers are one-based.
pub fn parse_benchmark(text: &str, catalog: &Catalog) -> Result<Vec<BenchmarkItem>, EvalError> {
    let mut items = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem =
            serde_json::from_str(line).map_err(|e| load_error(n, e.to_string()))?;
        if item.question.trim().is_empty() {
            return Err(load_error(n, format!("item `{}` has an empty question", item.id)));
        }
        if !ids.insert(item.id.clone()) {
            return Err(load_error(n, format!("duplicate id `{}`", item.id)));
        }
        for r in item.references() {
            let expr = parse_expr(r).map_err(|e| load_error(n, format!("{r}: {e}")))?;
            let violations = validate_expr(&expr, catalog, &NoCohorts);
            if !violations.is_empty() {
                let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                return Err(load_error(n, format!("{r}: {}", list.join(", "))));
            }
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_benchmark(path: impl AsRef<Path>, catalog: &Catalog) -> Result<Vec<BenchmarkItem>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| load_error(0, format!("{}: {e}", path.display())))?;
    parse_benchmark(&text, catalog)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub item_id: String,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub exact_match: bool,
    pub semantic_jaccard: f64,
    /// Main-agent plus sub-agent tokens.
    pub tokens: u64,
    /// Tools dispatched by the main agent.
    pub tool_calls: usize,
    pub seconds: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    /// Arithmetic mean and standard error (sample deviation over √n).
    pub fn of(values: &[f64]) -> MeanSe {
        let n = values.len();
        if n == 0 {
            return MeanSe::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return MeanSe { mean, se: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        MeanSe {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub recall: MeanSe,
    pub precision: MeanSe,
    pub f1: MeanSe,
    pub jaccard: MeanSe,
    pub exact: MeanSe,
    pub semantic_jaccard: MeanSe,
    pub tokens: MeanSe,
    pub tool_calls: MeanSe,
    pub seconds: MeanSe,
    pub failed: MeanSe,
}

impl Aggregate {
    pub fn of(rows: &[MetricRow]) -> Aggregate {
        let col = |f: &dyn Fn(&MetricRow) -> f64| MeanSe::of(&rows.iter().map(f).collect::<Vec<_>>());
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        Aggregate {
            recall: col(&|r| r.recall),
            precision: col(&|r| r.precision),
            f1: col(&|r| r.f1),
            jaccard: col(&|r| r.jaccard),
            exact: col(&|r| flag(r.exact_match)),
            semantic_jaccard: col(&|r| r.semantic_jaccard),
            tokens: col(&|r| r.tokens as f64),
            tool_calls: col(&|r| r.tool_calls as f64),
            seconds: col(&|r| r.seconds),
            failed: col(&|r| flag(r.failed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: RunMode,
    pub delegation: bool,
    pub kb_enabled: bool,
    pub rows: Vec<MetricRow>,
    pub aggregate: Aggregate,
}

impl Report {
    pub fn new(mode: RunMode, config: &AgentConfig, rows: Vec<MetricRow>) -> Report {
        Report {
            mode,
            delegation: config.delegation,
            kb_enabled: config.kb_enabled,
            aggregate: Aggregate::of(&rows),
            rows,
        }
    }

    pub fn exact_match_rate(&self) -> f64 {
        self.aggregate.exact.mean
    }
}

/// A finished run: the report plus what produced each row.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub report: Report,
    pub trajectories: Vec<Trajectory>,
    pub session_ids: Vec<String>,
}

impl BenchmarkRun {
    /// Cumulative prompt tokens of the main agent over the whole run.
    pub fn main_prompt_tokens(&self) -> u64 {
        self.trajectories.iter().map(|t| t.prompt_tokens).sum()
    }
}

/// Score one item's turn. The retrieved cohort is the last one created; the
/// reference is whichever allowed expression gives the best F1.
pub fn score_item(item: &BenchmarkItem, trajectory: &Trajectory, exec: &ExecutionLayer) -> MetricRow {
    let mut row = MetricRow {
        item_id: item.id.clone(),
        recall: 0.0,
        precision: 0.0,
        f1: 0.0,
        jaccard: 0.0,
        exact_match: false,
        semantic_jaccard: 0.0,
        tokens: trajectory.total_tokens(),
        tool_calls: trajectory.tool_invocations,
        seconds: trajectory.elapsed_seconds,
        failed: true,
    };
    let Some(record) = trajectory
        .last_cohort()
        .and_then(|c| exec.cohort(&c.cohort_id).ok())
    else {
        return row;
    };
    let generated = expand_cohort_refs(&record.expr, exec);
    let mut best: Option<(CohortScores, f64)> = None;
    for text in item.references() {
        let Ok(reference) = parse_expr(text) else { continue };
        let Ok(ref_set): Result<PatientSet, _> = exec.evaluate(&reference) else {
            continue;
        };
        let scores = score_cohorts(&ref_set, &record.patient_ids);
        if best.is_none_or(|(b, _)| scores.f1 > b.f1) {
            best = Some((scores, semantic_jaccard(&generated, &reference)));
        }
    }
    let (scores, semantic) = best.unwrap_or((CohortScores::ZERO, 0.0));
    row.recall = scores.recall;
    row.precision = scores.precision;
    row.f1 = scores.f1;
    row.jaccard = scores.jaccard;
    row.exact_match = scores.exact_match;
    row.semantic_jaccard = semantic;
    row.failed = false;
    row
}

fn session_id(n: usize) -> String {
    format!("eval-{n:04}")
}

/// Drive the agent through a benchmark. Items run sequentially in file
/// order; single mode opens one session per item, chained mode one in total.
pub async fn run_benchmark(
    items: &[BenchmarkItem],
    mode: RunMode,
    agent: &Agent,
    config: &AgentConfig,
) -> Result<BenchmarkRun, EvalError> {
    let exec = agent.gateway().exec().clone();
    let sink = EventSink::discard();
    let mut rows = Vec::with_capacity(items.len());
    let mut trajectories = Vec::with_capacity(items.len());
    let mut session_ids = Vec::with_capacity(items.len());
    let mut chained = match mode {
        RunMode::Chained => Some(agent.new_session(session_id(1), config.clone())?),
        RunMode::Single => None,
    };
    for (i, item) in items.iter().enumerate() {
        let mut single;
        let session = match chained.as_mut() {
            Some(s) => s,
            None => {
                single = agent.new_session(session_id(i + 1), config.clone())?;
                &mut single
            }
        };
        session_ids.push(session.id.clone());
        let trajectory = match agent.run_turn(session, &item.question, &sink).await {
            Ok(t) => t,
            Err(e) => return Err(load_error(0, format!("item {}: {e}", item.id))),
        };
        tracing::debug!(item = %item.id, outcome = %trajectory.outcome.describe(), "item finished");
        rows.push(score_item(item, &trajectory, &exec));
        trajectories.push(trajectory);
    }
    Ok(BenchmarkRun {
        report: Report::new(mode, config, rows),
        trajectories,
        session_ids,
    })
}
