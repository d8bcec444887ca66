use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::sql::{execute_sql, SqlError};
use super::views::{self, BinSpec, CohortSummary, GroupRate, HistogramBin, PatientTable};
use super::{EhrStore, PatientSet};
use crate::catalog::{Catalog, Grouping};
use crate::logic::{
    compile_to_sql, format_expr, parse_expr, validate_expr, AsOf, CohortLookup, CompileError,
    ParseError, QueryExpr, Violation,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("ParseError: {0}")]
    Parse(#[from] ParseError),
    #[error("ValidationError: {}", crate::logic::display_violations(.0))]
    Validation(Vec<Violation>),
    #[error("UnknownCohort: {0}")]
    UnknownCohort(String),
    #[error("UnknownCategory: {0}")]
    UnknownCategory(String),
    #[error("UnknownReport: {0}")]
    UnknownReport(String),
    #[error("UnknownRiskset: {0}")]
    UnknownRiskset(String),
    #[error("UnknownKpi: {0}")]
    UnknownKpi(String),
    #[error("UnknownLocation: {0}")]
    UnknownLocation(String),
    #[error("query execution failed: {0}")]
    Sql(#[from] SqlError),
}

impl From<CompileError> for ExecError {
    fn from(e: CompileError) -> Self {
        match e {
            CompileError::UnvalidatedExpr(v) => ExecError::Validation(v),
        }
    }
}

/// A cached cohort. `patient_ids` never leaves the execution layer.
#[derive(Debug, Clone)]
pub struct CohortRecord {
    pub cohort_id: String,
    pub expr: QueryExpr,
    pub patient_ids: PatientSet,
    pub size: usize,
    pub created_at: DateTime<Utc>,
    pub as_of: AsOf,
    pub session_id: Option<String>,
}

/// What the agent is told about a new cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortCreated {
    pub cohort_id: String,
    pub size: usize,
}

/// Process-lifetime cohort cache. Ids are `K1`, `K2`, ... in creation order.
#[derive(Debug, Default)]
pub struct CohortRegistry {
    records: RwLock<HashMap<String, Arc<CohortRecord>>>,
    next: AtomicU64,
}

impl CohortRegistry {
    pub fn fresh_id(&self) -> String {
        format!("K{}", self.next.fetch_add(1, Ordering::SeqCst) + 1)
    }

    pub fn insert(&self, record: CohortRecord) -> Arc<CohortRecord> {
        let record = Arc::new(record);
        self.records
            .write()
            .expect("cohort cache poisoned")
            .insert(record.cohort_id.clone(), record.clone());
        record
    }

    pub fn get(&self, id: &str) -> Option<Arc<CohortRecord>> {
        self.records
            .read()
            .expect("cohort cache poisoned")
            .get(id)
            .cloned()
    }

    pub fn snapshot(&self) -> Vec<Arc<CohortRecord>> {
        let mut all: Vec<_> = self
            .records
            .read()
            .expect("cohort cache poisoned")
            .values()
            .cloned()
            .collect();
        all.sort_by(|a, b| a.cohort_id.cmp(&b.cohort_id));
        all
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("cohort cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CohortLookup for CohortRegistry {
    fn cohort_exists(&self, id: &str) -> bool {
        self.get(id).is_some()
    }
}

/// Catalog + store + cohort cache: the whole execution side of the firewall.
#[derive(Debug)]
pub struct ExecutionLayer {
    catalog: Arc<Catalog>,
    store: Arc<EhrStore>,
    cohorts: CohortRegistry,
    as_of: AsOf,
    workflow_cohorts: Mutex<HashMap<String, String>>,
}

/// Work list behind a riskset: aggregates plus a link to the register.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkflowView {
    pub riskset_id: String,
    pub name: String,
    pub description: String,
    pub expr: String,
    pub cohort_id: String,
    pub summary: CohortSummary,
    /// Riskset members over registered patients, per practice.
    pub by_practice: Vec<GroupRate>,
    pub register_url: String,
}

impl ExecutionLayer {
    pub fn new(catalog: Arc<Catalog>, store: Arc<EhrStore>, as_of: AsOf) -> Self {
        ExecutionLayer {
            catalog,
            store,
            cohorts: CohortRegistry::default(),
            as_of,
            workflow_cohorts: Mutex::new(HashMap::new()),
        }
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn store(&self) -> &Arc<EhrStore> {
        &self.store
    }

    pub fn cohorts(&self) -> &CohortRegistry {
        &self.cohorts
    }

    pub fn as_of(&self) -> AsOf {
        self.as_of
    }

    /// Compile, execute and cache. Returns only the id and the size.
    pub fn create_cohort(
        &self,
        expr_text: &str,
        session_id: Option<&str>,
    ) -> Result<CohortCreated, ExecError> {
        let expr = parse_expr(expr_text)?;
        self.create_cohort_from_expr(expr, session_id)
    }

    pub fn create_cohort_from_expr(
        &self,
        expr: QueryExpr,
        session_id: Option<&str>,
    ) -> Result<CohortCreated, ExecError> {
        let patient_ids = self.run_expr(&expr)?;
        let record = CohortRecord {
            cohort_id: self.cohorts.fresh_id(),
            size: patient_ids.len(),
            expr,
            patient_ids,
            created_at: Utc::now(),
            as_of: self.as_of,
            session_id: session_id.map(str::to_string),
        };
        let record = self.cohorts.insert(record);
        tracing::debug!(cohort = %record.cohort_id, size = record.size, "cohort created");
        Ok(CohortCreated {
            cohort_id: record.cohort_id.clone(),
            size: record.size,
        })
    }

    /// Members of `expr` via the SQL path, without caching.
    pub fn run_expr(&self, expr: &QueryExpr) -> Result<PatientSet, ExecError> {
        let violations = validate_expr(expr, &self.catalog, &self.cohorts);
        if !violations.is_empty() {
            return Err(ExecError::Validation(violations));
        }
        let sql = compile_to_sql(expr, &self.catalog, &self.cohorts, self.as_of)?;
        Ok(execute_sql(&sql, &self.store, &self.cohorts)?)
    }

    pub fn sql_for(&self, expr: &QueryExpr) -> Result<String, ExecError> {
        Ok(compile_to_sql(expr, &self.catalog, &self.cohorts, self.as_of)?)
    }

    /// Reference-evaluator result for `expr`.
    pub fn evaluate(&self, expr: &QueryExpr) -> Result<PatientSet, ExecError> {
        Ok(crate::logic::evaluate_expr(
            expr,
            &self.catalog,
            &self.store,
            &self.cohorts,
            self.as_of,
        )?)
    }

    pub fn cohort(&self, id: &str) -> Result<Arc<CohortRecord>, ExecError> {
        self.cohorts
            .get(id)
            .ok_or_else(|| ExecError::UnknownCohort(id.to_string()))
    }

    /// Canonical expression text of a cached cohort.
    pub fn cohort_expr(&self, id: &str) -> Result<String, ExecError> {
        Ok(format_expr(&self.cohort(id)?.expr))
    }

    pub fn summarise_cohort(&self, id: &str, as_of: AsOf) -> Result<CohortSummary, ExecError> {
        let c = self.cohort(id)?;
        Ok(views::summarise(&self.store, &c.patient_ids, as_of))
    }

    /// Latest observation per member within `category`; `bins` defaults to
    /// the category's own bin layout.
    pub fn histogram(
        &self,
        id: &str,
        category: &str,
        bins: Option<BinSpec>,
    ) -> Result<Vec<HistogramBin>, ExecError> {
        let c = self.cohort(id)?;
        let cat = self
            .catalog
            .category(category)
            .ok_or_else(|| ExecError::UnknownCategory(category.to_string()))?;
        let bins = bins.unwrap_or(BinSpec {
            start: cat.bin_start,
            width: cat.bin_width,
        });
        Ok(views::histogram(&self.store, &c.patient_ids, &cat.codes, bins))
    }

    pub fn prevalence_by_group(
        &self,
        numerator: &str,
        denominator: &str,
        grouping: Grouping,
    ) -> Result<Vec<GroupRate>, ExecError> {
        let num = self.cohort(numerator)?;
        let den = self.cohort(denominator)?;
        Ok(views::group_rates(
            &self.store,
            &num.patient_ids,
            &den.patient_ids,
            grouping,
            None,
        ))
    }

    /// KPI broken down over a location; the KPI's expressions are run
    /// directly and not cached.
    pub fn kpi_rates(&self, kpi: &str, location: Option<&str>) -> Result<Vec<GroupRate>, ExecError> {
        let k = self
            .catalog
            .kpi(kpi)
            .ok_or_else(|| ExecError::UnknownKpi(kpi.to_string()))?;
        let (grouping, only) = match location {
            None => (Grouping::District, None),
            Some(loc) => {
                let p = self
                    .catalog
                    .kpi_population(loc)
                    .ok_or_else(|| ExecError::UnknownLocation(loc.to_string()))?;
                (p.grouping, p.filter.as_deref())
            }
        };
        let num = self.run_expr(&parse_expr(&k.numerator)?)?;
        let den = self.run_expr(&parse_expr(&k.denominator)?)?;
        Ok(views::group_rates(&self.store, &num, &den, grouping, only))
    }

    /// Riskset work list. The riskset's cohort is created once and reused.
    pub fn workflow(&self, riskset: &str) -> Result<WorkflowView, ExecError> {
        let rs = self
            .catalog
            .riskset(riskset)
            .ok_or_else(|| ExecError::UnknownRiskset(riskset.to_string()))?;
        let cohort_id = {
            let mut memo = self.workflow_cohorts.lock().expect("workflow memo poisoned");
            match memo.get(riskset) {
                Some(id) => id.clone(),
                None => {
                    let id = self.create_cohort(&rs.expr, None)?.cohort_id;
                    memo.insert(riskset.to_string(), id.clone());
                    id
                }
            }
        };
        let record = self.cohort(&cohort_id)?;
        let everyone = self.store.universe();
        Ok(WorkflowView {
            riskset_id: rs.id.clone(),
            name: rs.name.clone(),
            description: rs.description.clone(),
            expr: format_expr(&record.expr),
            summary: views::summarise(&self.store, &record.patient_ids, self.as_of),
            by_practice: views::group_rates(&self.store, &record.patient_ids, &everyone, Grouping::Practice, None),
            register_url: format!("/results/register?cohort={cohort_id}"),
            cohort_id,
        })
    }

    /// Patient-level register. Reachable only from the results HTTP route.
    pub fn list_cohort(&self, id: &str, report: Option<&str>) -> Result<PatientTable, ExecError> {
        let c = self.cohort(id)?;
        let report = match report {
            Some(r) => Some(
                self.catalog
                    .report(r)
                    .ok_or_else(|| ExecError::UnknownReport(r.to_string()))?,
            ),
            None => None,
        };
        Ok(views::patient_table(&self.store, &c.patient_ids, report, self.as_of))
    }
}
