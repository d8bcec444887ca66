//! Expression → SQL over the synthetic schema.
//!
//! Schema targeted:
//!
//! ```text
//! Patient(pat_id, birth_date, sex, practice_id, district, active)
//! Conditions | Medications | Observations (pat_id, code, event_date, value)
//! Cohort(cohort_id, pat_id)          -- materialised cohort cache
//! ```

use thiserror::Error;

use super::{validate_expr, AsOf, CohortLookup, QueryExpr, Violation};
use crate::catalog::{Catalog, Concept, Domain, Predicate};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("expression does not validate: {}", display_violations(.0))]
    UnvalidatedExpr(Vec<Violation>),
}

pub(crate) fn display_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

pub(crate) fn table_for(domain: Domain) -> &'static str {
    match domain {
        Domain::Conditions => "Conditions",
        Domain::Medications => "Medications",
        Domain::Observations => "Observations",
        Domain::Demographics => "Patient",
    }
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

/// Compile a validated expression to a query returning distinct `pat_id`s.
/// Output text is a pure function of the inputs.
pub fn compile_to_sql(
    expr: &QueryExpr,
    catalog: &Catalog,
    cohorts: &dyn CohortLookup,
    as_of: AsOf,
) -> Result<String, CompileError> {
    let violations = validate_expr(expr, catalog, cohorts);
    if !violations.is_empty() {
        return Err(CompileError::UnvalidatedExpr(violations));
    }
    let mut out = String::new();
    emit(expr, catalog, as_of, &mut out);
    Ok(out)
}

fn emit(expr: &QueryExpr, catalog: &Catalog, as_of: AsOf, out: &mut String) {
    match expr {
        QueryExpr::ConceptRef(id) => {
            let concept = catalog.get(id).expect("validated");
            emit_concept(concept, as_of, out);
        }
        QueryExpr::CohortRef(id) => {
            out.push_str("SELECT pat_id FROM Cohort WHERE cohort_id = ");
            out.push_str(&quote(id));
        }
        QueryExpr::Not(child) => {
            out.push_str("SELECT pat_id FROM Patient EXCEPT (");
            emit(child, catalog, as_of, out);
            out.push(')');
        }
        QueryExpr::And(cs) | QueryExpr::Or(cs) => {
            let op = if matches!(expr, QueryExpr::And(_)) {
                " INTERSECT "
            } else {
                " UNION "
            };
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    out.push_str(op);
                }
                out.push('(');
                emit(c, catalog, as_of, out);
                out.push(')');
            }
        }
    }
}

fn emit_concept(concept: &Concept, as_of: AsOf, out: &mut String) {
    if let Some(pred) = concept.predicate {
        out.push_str("SELECT pat_id FROM Patient WHERE ");
        match pred {
            Predicate::Active => out.push_str("active = TRUE"),
            Predicate::AgeAtLeast(n) => {
                out.push_str("birth_date <= ");
                out.push_str(&quote(&as_of.birth_cutoff(n).to_string()));
            }
            Predicate::AgeBelow(n) => {
                out.push_str("birth_date > ");
                out.push_str(&quote(&as_of.birth_cutoff(n).to_string()));
            }
            Predicate::Sex(s) => {
                out.push_str("sex = ");
                out.push_str(&quote(s.as_str()));
            }
        }
        return;
    }
    out.push_str("SELECT DISTINCT pat_id FROM ");
    out.push_str(table_for(concept.domain));
    out.push_str(" WHERE code IN (");
    let codes: Vec<String> = concept.codes.iter().map(|c| quote(c)).collect();
    out.push_str(&codes.join(","));
    out.push(')');
    if let Some(m) = concept.lookback_months {
        out.push_str(" AND event_date >= ");
        out.push_str(&quote(&as_of.minus_months(m).to_string()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::logic::{parse_expr, NoCohorts};

    fn sql(text: &str) -> String {
        let cat = assets::catalog();
        compile_to_sql(
            &parse_expr(text).unwrap(),
            &cat,
            &NoCohorts,
            AsOf::ymd(2025, 6, 30),
        )
        .unwrap()
    }

    #[test]
    fn lookback_concept() {
        let s = sql("C-SEMA-3M");
        assert!(s.contains("code IN ('777514008','782102009'"), "{s}");
        assert!(s.contains("event_date >= '2025-03-30'"), "{s}");
        assert!(s.contains("FROM Medications"));
    }

    #[test]
    fn complement_structure() {
        let s = sql("NOT C-ACTIVE");
        assert!(s.starts_with("SELECT pat_id FROM Patient EXCEPT ("), "{s}");
        assert!(s.ends_with(')'));
    }

    #[test]
    fn conjunction_uses_intersect() {
        assert_eq!(
            sql("C-DM2 AND C-ACTIVE"),
            "(SELECT DISTINCT pat_id FROM Conditions WHERE code IN ('44054006','472969004','443694000')) \
             INTERSECT (SELECT pat_id FROM Patient WHERE active = TRUE)"
        );
    }

    #[test]
    fn deterministic_text() {
        let a = sql("(C-DM2 OR C-HTN) AND NOT C-AGE-75PLUS");
        let b = sql("(C-DM2 OR C-HTN) AND NOT C-AGE-75PLUS");
        assert_eq!(a, b);
        assert!(a.contains("birth_date <= '1950-06-30'"));
    }

    #[test]
    fn unvalidated_rejected() {
        let cat = assets::catalog();
        let err = compile_to_sql(
            &parse_expr("C-DM2 AND C-NOPE").unwrap(),
            &cat,
            &NoCohorts,
            AsOf::ymd(2025, 6, 30),
        )
        .unwrap_err();
        assert_eq!(
            err,
            CompileError::UnvalidatedExpr(vec![Violation::UnknownConcept("C-NOPE".into())])
        );
    }
}
