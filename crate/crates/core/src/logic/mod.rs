//! Boolean cohort-expression language.
//!
//! Expressions are AND/OR/NOT trees over concept references and cached
//! cohort references. The textual form is the wire format the agent uses
//! when it asks for a cohort, and the form clinicians read back when they
//! audit the query:
//!
//! ```text
//! expr := term (("AND" | "OR") term)*      AND binds tighter than OR
//! term := "NOT" term | "(" expr ")" | IDENT
//! ```
//!
//! An `IDENT` of the form `COHORT:<id>` refers to a cached cohort, anything
//! else to a concept id. Keywords are case-insensitive.

mod compile;
mod evaluate;
mod parser;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;

pub use compile::{compile_to_sql, CompileError};
pub(crate) use compile::display_violations;
pub use evaluate::evaluate_expr;
pub use parser::{is_keyword, parse_expr, ParseError};

/// Deepest tree accepted from the wire; a lone reference has depth 1.
pub const MAX_DEPTH: usize = 32;
/// Longest accepted expression text, in characters.
pub const MAX_EXPR_CHARS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum QueryExpr {
    ConceptRef(String),
    CohortRef(String),
    And(Vec<QueryExpr>),
    Or(Vec<QueryExpr>),
    Not(Box<QueryExpr>),
}

impl QueryExpr {
    pub fn concept(id: impl Into<String>) -> Self {
        QueryExpr::ConceptRef(id.into())
    }

    pub fn cohort(id: impl Into<String>) -> Self {
        QueryExpr::CohortRef(id.into())
    }

    pub fn and(children: impl IntoIterator<Item = QueryExpr>) -> Self {
        QueryExpr::And(children.into_iter().collect())
    }

    pub fn or(children: impl IntoIterator<Item = QueryExpr>) -> Self {
        QueryExpr::Or(children.into_iter().collect())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(child: QueryExpr) -> Self {
        QueryExpr::Not(Box::new(child))
    }

    pub fn depth(&self) -> usize {
        match self {
            QueryExpr::ConceptRef(_) | QueryExpr::CohortRef(_) => 1,
            QueryExpr::Not(c) => 1 + c.depth(),
            QueryExpr::And(cs) | QueryExpr::Or(cs) => {
                1 + cs.iter().map(QueryExpr::depth).max().unwrap_or(0)
            }
        }
    }

    /// Distinct concept ids, in sorted order.
    pub fn concept_ids(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let QueryExpr::ConceptRef(id) = e {
                out.insert(id.as_str());
            }
        });
        out
    }

    pub fn cohort_ids(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let QueryExpr::CohortRef(id) = e {
                out.insert(id.as_str());
            }
        });
        out
    }

    pub fn has_cohort_refs(&self) -> bool {
        !self.cohort_ids().is_empty()
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a QueryExpr)) {
        f(self);
        match self {
            QueryExpr::And(cs) | QueryExpr::Or(cs) => cs.iter().for_each(|c| c.walk(f)),
            QueryExpr::Not(c) => c.walk(f),
            _ => {}
        }
    }
}

impl FromStr for QueryExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

/// Canonical fully-parenthesised text. `parse_expr(&format_expr(e)) == e`.
pub fn format_expr(expr: &QueryExpr) -> String {
    let mut out = String::new();
    write_expr(expr, &mut out);
    out
}

fn write_expr(expr: &QueryExpr, out: &mut String) {
    match expr {
        QueryExpr::ConceptRef(id) => out.push_str(id),
        QueryExpr::CohortRef(id) => {
            out.push_str("COHORT:");
            out.push_str(id);
        }
        QueryExpr::Not(c) => {
            out.push_str("(NOT ");
            write_expr(c, out);
            out.push(')');
        }
        QueryExpr::And(cs) | QueryExpr::Or(cs) => {
            let op = if matches!(expr, QueryExpr::And(_)) {
                " AND "
            } else {
                " OR "
            };
            if cs.len() == 1 {
                return write_expr(&cs[0], out);
            }
            out.push('(');
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    out.push_str(op);
                }
                write_expr(c, out);
            }
            out.push(')');
        }
    }
}

impl fmt::Display for QueryExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_expr(self))
    }
}

/// Something that knows which cohort ids exist.
pub trait CohortLookup {
    fn cohort_exists(&self, id: &str) -> bool;
}

/// Lookup for contexts with no cohort cache; every cohort ref is unknown.
pub struct NoCohorts;

impl CohortLookup for NoCohorts {
    fn cohort_exists(&self, _id: &str) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "kind", content = "detail")]
pub enum Violation {
    #[error("UnknownConcept({0})")]
    UnknownConcept(String),
    #[error("UnknownCohort({0})")]
    UnknownCohort(String),
    #[error("operator with fewer than two operands")]
    Arity,
    #[error("expression deeper than {MAX_DEPTH}")]
    TooDeep,
}

/// Every unresolved reference (in first-occurrence order) plus structural
/// problems. Empty iff the expression can be compiled.
pub fn validate_expr(
    expr: &QueryExpr,
    catalog: &Catalog,
    cohorts: &dyn CohortLookup,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if expr.depth() > MAX_DEPTH {
        out.push(Violation::TooDeep);
    }
    let mut arity_reported = false;
    expr.walk(&mut |e| match e {
        QueryExpr::ConceptRef(id) => {
            let v = Violation::UnknownConcept(id.clone());
            if catalog.get(id).is_none() && !out.contains(&v) {
                out.push(v);
            }
        }
        QueryExpr::CohortRef(id) => {
            let v = Violation::UnknownCohort(id.clone());
            if !cohorts.cohort_exists(id) && !out.contains(&v) {
                out.push(v);
            }
        }
        QueryExpr::And(cs) | QueryExpr::Or(cs) if cs.len() < 2 && !arity_reported => {
            arity_reported = true;
            out.push(Violation::Arity);
        }
        _ => {}
    });
    out
}

/// The evaluation "now" for lookback windows and ages. Always passed
/// explicitly; core logic never reads the wall clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AsOf(pub NaiveDate);

impl AsOf {
    pub fn new(date: NaiveDate) -> Self {
        AsOf(date)
    }

    pub fn ymd(y: i32, m: u32, d: u32) -> Self {
        AsOf(NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date"))
    }

    pub fn date(self) -> NaiveDate {
        self.0
    }

    /// Calendar-month subtraction clamped to month end (May 31 - 3 = Feb 28/29).
    pub fn minus_months(self, months: u32) -> NaiveDate {
        self.0
            .checked_sub_months(Months::new(months))
            .expect("date within chrono range")
    }

    /// Latest birth date for which the age at `self` is at least `years`.
    pub fn birth_cutoff(self, years: u32) -> NaiveDate {
        self.minus_months(years * 12)
    }

    /// Completed years between `birth` and this date.
    pub fn age_of(self, birth: NaiveDate) -> u32 {
        let mut years = self.0.year() - birth.year();
        if (self.0.month(), self.0.day()) < (birth.month(), birth.day()) {
            years -= 1;
        }
        years.max(0) as u32
    }
}

impl FromStr for AsOf {
    type Err = chrono::ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map(AsOf)
    }
}

impl fmt::Display for AsOf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d"))
    }
}
