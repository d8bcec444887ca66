//! Aggregate views over cohorts. Only `patient_table` emits patient rows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EhrStore, EventRow, PatientSet};
use crate::catalog::{ColumnValue, Grouping, Report};
use crate::logic::AsOf;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SexCounts {
    pub female: usize,
    pub male: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub count: usize,
    /// Mean completed age in years; absent for an empty cohort.
    pub mean_age: Option<f64>,
    pub sex_counts: SexCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub start: f64,
    pub width: f64,
}

/// Half-open bin `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub group: String,
    pub numerator: usize,
    pub denominator: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub(crate) fn summarise(store: &EhrStore, members: &PatientSet, as_of: AsOf) -> CohortSummary {
    let mut sex_counts = SexCounts::default();
    let mut age_sum = 0u64;
    let mut count = 0usize;
    for p in members.iter().filter_map(|id| store.patient(id)) {
        count += 1;
        age_sum += u64::from(as_of.age_of(p.birth_date));
        match p.sex {
            super::Sex::Female => sex_counts.female += 1,
            super::Sex::Male => sex_counts.male += 1,
        }
    }
    CohortSummary {
        count,
        mean_age: (count > 0).then(|| age_sum as f64 / count as f64),
        sex_counts,
    }
}

fn latest<'a>(store: &'a EhrStore, pat_id: &str, codes: &[String], need_value: bool) -> Option<&'a EventRow> {
    store
        .events_of(pat_id)
        .filter(|e| codes.contains(&e.code) && (!need_value || e.value.is_some()))
        .fold(None, |best: Option<&EventRow>, e| match best {
            Some(b) if b.event_date > e.event_date => Some(b),
            _ => Some(e),
        })
}

/// Histogram of each member's latest observation value among `codes`.
/// Members without an observation are left out. Bins run contiguously from
/// the lowest to the highest non-empty bin.
pub(crate) fn histogram(
    store: &EhrStore,
    members: &PatientSet,
    codes: &[String],
    bins: BinSpec,
) -> Vec<HistogramBin> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for id in members {
        if let Some(v) = latest(store, id, codes, true).and_then(|e| e.value) {
            let idx = ((v - bins.start) / bins.width).floor() as i64;
            *counts.entry(idx).or_default() += 1;
        }
    }
    let (Some(&lo), Some(&hi)) = (counts.keys().next(), counts.keys().next_back()) else {
        return Vec::new();
    };
    (lo..=hi)
        .map(|i| HistogramBin {
            lo: bins.start + i as f64 * bins.width,
            hi: bins.start + (i + 1) as f64 * bins.width,
            count: counts.get(&i).copied().unwrap_or(0),
        })
        .collect()
}

/// Rates per group over the denominator; the numerator is intersected with
/// the denominator so rates stay within [0, 1]. Every group present in the
/// store is reported, zero-denominator groups with no rate.
pub(crate) fn group_rates(
    store: &EhrStore,
    numerator: &PatientSet,
    denominator: &PatientSet,
    grouping: Grouping,
    only: Option<&str>,
) -> Vec<GroupRate> {
    let key = |p: &super::PatientRow| match grouping {
        Grouping::Practice => p.practice_id.clone(),
        Grouping::District => p.district.clone(),
    };
    let mut groups: BTreeMap<String, (usize, usize)> = store
        .patients()
        .iter()
        .map(|p| (key(p), (0, 0)))
        .collect();
    for id in denominator {
        if let Some(p) = store.patient(id) {
            let g = groups.entry(key(p)).or_default();
            g.1 += 1;
            if numerator.contains(id) {
                g.0 += 1;
            }
        }
    }
    groups
        .into_iter()
        .filter(|(g, _)| only.is_none_or(|o| o == g))
        .map(|(group, (numerator, denominator))| GroupRate {
            group,
            numerator,
            denominator,
            rate: (denominator > 0).then(|| numerator as f64 / denominator as f64),
        })
        .collect()
}

pub(crate) fn patient_table(
    store: &EhrStore,
    members: &PatientSet,
    report: Option<&Report>,
    as_of: AsOf,
) -> PatientTable {
    let mut columns: Vec<String> = ["pat_id", "age", "sex", "practice_id"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let extra = report.map(|r| r.columns.as_slice()).unwrap_or(&[]);
    columns.extend(extra.iter().map(|c| c.name.clone()));
    let rows = members
        .iter()
        .filter_map(|id| store.patient(id))
        .map(|p| {
            let mut row = vec![
                p.pat_id.clone(),
                as_of.age_of(p.birth_date).to_string(),
                p.sex.as_str().to_string(),
                p.practice_id.clone(),
            ];
            for col in extra {
                let cell = match col.value {
                    ColumnValue::LastDate => latest(store, &p.pat_id, &col.codes, false)
                        .map(|e| e.event_date.to_string()),
                    ColumnValue::LastValue => latest(store, &p.pat_id, &col.codes, true)
                        .and_then(|e| e.value)
                        .map(|v| v.to_string()),
                };
                row.push(cell.unwrap_or_default());
            }
            row
        })
        .collect();
    PatientTable { columns, rows }
}
