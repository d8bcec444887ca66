//! The execution layer behind the firewall.
//!
//! Holds the synthetic patient database, runs compiled SQL against it,
//! caches cohorts, and computes the aggregate views. Nothing outside this
//! module reads patient rows; everything that leaves it through the tool
//! surface is an id, a count or an aggregate.

mod cohorts;
mod generate;
mod io;
pub mod sql;
mod views;

use std::collections::{BTreeSet, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::logic::AsOf;

pub use cohorts::{CohortCreated, CohortRecord, CohortRegistry, ExecError, ExecutionLayer, WorkflowView};
pub use generate::{generate, BoostRule, GenerateError, GeneratorConfig, ObservationSpec};
pub use io::{load_store, write_store, StoreIoError, EVENT_COLUMNS, PATIENT_COLUMNS};
pub use views::{
    BinSpec, CohortSummary, GroupRate, HistogramBin, PatientTable, SexCounts,
};

pub type PatientSet = BTreeSet<String>;

/// Prefix of every generated patient id. Distinctive so the firewall can
/// scan for leaked ids mechanically.
pub const PAT_ID_PREFIX: &str = "PT-";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventTable {
    Conditions,
    Medications,
    Observations,
}

impl EventTable {
    pub fn as_str(self) -> &'static str {
        match self {
            EventTable::Conditions => "conditions",
            EventTable::Medications => "medications",
            EventTable::Observations => "observations",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRow {
    pub pat_id: String,
    pub birth_date: NaiveDate,
    pub sex: Sex,
    pub practice_id: String,
    pub district: String,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub pat_id: String,
    pub table: EventTable,
    pub code: String,
    pub event_date: NaiveDate,
    #[serde(default)]
    pub value: Option<f64>,
}

/// Immutable patient database. Patients are kept sorted by `pat_id`.
#[derive(Debug, Clone, Default)]
pub struct EhrStore {
    patients: Vec<PatientRow>,
    events: Vec<EventRow>,
    patient_index: HashMap<String, usize>,
    events_by_patient: HashMap<String, Vec<usize>>,
    as_of: Option<AsOf>,
}

impl EhrStore {
    pub fn new(
        mut patients: Vec<PatientRow>,
        events: Vec<EventRow>,
        as_of: Option<AsOf>,
    ) -> Result<Self, String> {
        patients.sort_by(|a, b| a.pat_id.cmp(&b.pat_id));
        let mut patient_index = HashMap::with_capacity(patients.len());
        for (i, p) in patients.iter().enumerate() {
            if patient_index.insert(p.pat_id.clone(), i).is_some() {
                return Err(format!("duplicate pat_id {}", p.pat_id));
            }
        }
        let mut events_by_patient: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in events.iter().enumerate() {
            if !patient_index.contains_key(&e.pat_id) {
                return Err(format!("event references unknown patient {}", e.pat_id));
            }
            events_by_patient.entry(e.pat_id.clone()).or_default().push(i);
        }
        Ok(EhrStore {
            patients,
            events,
            patient_index,
            events_by_patient,
            as_of,
        })
    }

    pub fn patients(&self) -> &[PatientRow] {
        &self.patients
    }

    pub fn events(&self) -> &[EventRow] {
        &self.events
    }

    pub fn patient(&self, pat_id: &str) -> Option<&PatientRow> {
        self.patient_index.get(pat_id).map(|&i| &self.patients[i])
    }

    pub fn events_of<'a>(&'a self, pat_id: &str) -> impl Iterator<Item = &'a EventRow> + 'a {
        self.events_by_patient
            .get(pat_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(move |&i| &self.events[i])
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Generation date, when known.
    pub fn as_of(&self) -> Option<AsOf> {
        self.as_of
    }

    pub fn universe(&self) -> PatientSet {
        self.patients.iter().map(|p| p.pat_id.clone()).collect()
    }

    pub fn pat_ids(&self) -> impl Iterator<Item = &str> {
        self.patients.iter().map(|p| p.pat_id.as_str())
    }
}
