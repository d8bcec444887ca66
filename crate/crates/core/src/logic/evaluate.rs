//! Reference evaluator: per-patient brute force over raw rows.
//!
//! Deliberately shares nothing with the SQL path beyond the catalog and the
//! store, so the two can check each other.

use super::compile::CompileError;
use super::{validate_expr, AsOf, QueryExpr};
use crate::catalog::{Catalog, Concept, Domain, Predicate};
use crate::ehr::{CohortRegistry, EhrStore, EventTable, PatientRow, PatientSet};

pub fn evaluate_expr(
    expr: &QueryExpr,
    catalog: &Catalog,
    store: &EhrStore,
    cohorts: &CohortRegistry,
    as_of: AsOf,
) -> Result<PatientSet, CompileError> {
    let violations = validate_expr(expr, catalog, cohorts);
    if !violations.is_empty() {
        return Err(CompileError::UnvalidatedExpr(violations));
    }
    Ok(store
        .patients()
        .iter()
        .filter(|p| holds(expr, p, catalog, store, cohorts, as_of))
        .map(|p| p.pat_id.clone())
        .collect())
}

fn holds(
    expr: &QueryExpr,
    patient: &PatientRow,
    catalog: &Catalog,
    store: &EhrStore,
    cohorts: &CohortRegistry,
    as_of: AsOf,
) -> bool {
    match expr {
        QueryExpr::ConceptRef(id) => {
            concept_holds(catalog.get(id).expect("validated"), patient, store, as_of)
        }
        QueryExpr::CohortRef(id) => cohorts
            .get(id)
            .is_some_and(|c| c.patient_ids.contains(&patient.pat_id)),
        QueryExpr::Not(c) => !holds(c, patient, catalog, store, cohorts, as_of),
        QueryExpr::And(cs) => cs
            .iter()
            .all(|c| holds(c, patient, catalog, store, cohorts, as_of)),
        QueryExpr::Or(cs) => cs
            .iter()
            .any(|c| holds(c, patient, catalog, store, cohorts, as_of)),
    }
}

fn concept_holds(concept: &Concept, patient: &PatientRow, store: &EhrStore, as_of: AsOf) -> bool {
    if let Some(pred) = concept.predicate {
        let age = as_of.age_of(patient.birth_date);
        return match pred {
            Predicate::Active => patient.active,
            Predicate::AgeAtLeast(n) => age >= n,
            Predicate::AgeBelow(n) => age < n,
            Predicate::Sex(s) => patient.sex == s,
        };
    }
    let table = match concept.domain {
        Domain::Conditions => EventTable::Conditions,
        Domain::Medications => EventTable::Medications,
        Domain::Observations => EventTable::Observations,
        Domain::Demographics => unreachable!("demographics carry predicates"),
    };
    let cutoff = concept.lookback_months.map(|m| as_of.minus_months(m));
    store.events_of(&patient.pat_id).any(|e| {
        e.table == table
            && concept.codes.contains(&e.code)
            && cutoff.is_none_or(|d| e.event_date >= d)
    })
}
