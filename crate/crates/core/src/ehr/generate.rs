//! Seeded synthetic patient generator.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EhrStore, EventRow, EventTable, PatientRow, Sex, PAT_ID_PREFIX};
use crate::catalog::{Catalog, Domain};
use crate::logic::AsOf;

/// Oldest generated event, in months before the generation date.
const HISTORY_MONTHS: u32 = 24;
const MAX_AGE_YEARS: i64 = 105;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid generator config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> GenerateError {
    GenerateError::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Raises the chance of `then` for patients who were already given `given`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostRule {
    pub given: String,
    pub then: String,
    pub multiplier: f64,
}

/// Numeric observation stream (e.g. body weight) drawn from a clamped normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub code: String,
    pub rate: f64,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub n_practices: usize,
    pub districts: Vec<String>,
    #[serde(default)]
    pub concept_prevalence: BTreeMap<String, f64>,
    #[serde(default)]
    pub co_occurrence_boost: Vec<BoostRule>,
    #[serde(default)]
    pub observations: Vec<ObservationSpec>,
    #[serde(default = "default_active_rate")]
    pub active_rate: f64,
    pub seed: u64,
    pub as_of: AsOf,
}

fn default_active_rate() -> f64 {
    0.92
}

impl GeneratorConfig {
    fn check(&self, catalog: &Catalog) -> Result<(), GenerateError> {
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if self.n_practices == 0 {
            return Err(invalid("n_practices", "must be positive"));
        }
        if self.districts.is_empty() {
            return Err(invalid("districts", "at least one district is required"));
        }
        if !prob(self.active_rate) {
            return Err(invalid("active_rate", "must be a probability"));
        }
        for (id, &p) in &self.concept_prevalence {
            if !prob(p) {
                return Err(invalid(
                    "concept_prevalence",
                    format!("{id}: {p} is not a probability"),
                ));
            }
            match catalog.get(id) {
                None => return Err(invalid("concept_prevalence", format!("unknown concept {id}"))),
                Some(c) if !c.domain.is_event() => {
                    return Err(invalid(
                        "concept_prevalence",
                        format!("{id} is a demographics concept"),
                    ))
                }
                _ => {}
            }
        }
        let givens: HashSet<&str> = self
            .co_occurrence_boost
            .iter()
            .map(|b| b.given.as_str())
            .collect();
        for b in &self.co_occurrence_boost {
            if !(b.multiplier >= 0.0 && b.multiplier.is_finite()) {
                return Err(invalid("co_occurrence_boost", "multiplier must be >= 0"));
            }
            for id in [&b.given, &b.then] {
                if !self.concept_prevalence.contains_key(id) {
                    return Err(invalid(
                        "co_occurrence_boost",
                        format!("{id} has no prevalence"),
                    ));
                }
            }
            if b.given == b.then || givens.contains(b.then.as_str()) {
                return Err(invalid(
                    "co_occurrence_boost",
                    format!("{} cannot be both boosted and a boost source", b.then),
                ));
            }
        }
        for o in &self.observations {
            if !prob(o.rate) || o.sd.is_nan() || o.sd < 0.0 || o.min > o.max {
                return Err(invalid("observations", format!("bad spec for {}", o.code)));
            }
        }
        Ok(())
    }
}

fn table_of(domain: Domain) -> EventTable {
    match domain {
        Domain::Conditions => EventTable::Conditions,
        Domain::Medications => EventTable::Medications,
        _ => EventTable::Observations,
    }
}

/// Generate a store. A pure function of `(config, catalog)`.
///
/// Each concept with prevalence `p` gives a patient one qualifying event with
/// probability `p` (times any applicable boosts). Event dates are uniform over
/// the concept's lookback window, or the 24 months before `as_of` when the
/// concept has none, so the event always qualifies.
pub fn generate(config: &GeneratorConfig, catalog: &Catalog) -> Result<EhrStore, GenerateError> {
    config.check(catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let as_of = config.as_of;

    let practices: Vec<(String, String)> = (0..config.n_practices)
        .map(|j| {
            (
                format!("P{:03}", j + 1),
                config.districts[j % config.districts.len()].clone(),
            )
        })
        .collect();

    let targets: BTreeSet<&str> = config
        .co_occurrence_boost
        .iter()
        .map(|b| b.then.as_str())
        .collect();
    let order: Vec<(&str, f64)> = config
        .concept_prevalence
        .iter()
        .filter(|(id, _)| !targets.contains(id.as_str()))
        .chain(
            config
                .concept_prevalence
                .iter()
                .filter(|(id, _)| targets.contains(id.as_str())),
        )
        .map(|(id, &p)| (id.as_str(), p))
        .collect();

    let normals: Vec<Normal<f64>> = config
        .observations
        .iter()
        .map(|o| Normal::new(o.mean, o.sd).expect("sd checked"))
        .collect();

    let max_age_days = MAX_AGE_YEARS * 365;
    let history_start = as_of.minus_months(HISTORY_MONTHS);
    let mut seen_ids = HashSet::with_capacity(config.n_patients);
    let mut patients = Vec::with_capacity(config.n_patients);
    let mut events = Vec::new();

    for _ in 0..config.n_patients {
        let pat_id = loop {
            let id = format!("{PAT_ID_PREFIX}{:012x}", rng.random::<u64>() & 0xffff_ffff_ffff);
            if seen_ids.insert(id.clone()) {
                break id;
            }
        };
        let birth_date = as_of.date() - Duration::days(rng.random_range(0..max_age_days));
        let sex = if rng.random::<bool>() {
            Sex::Female
        } else {
            Sex::Male
        };
        let (practice_id, district) = practices[rng.random_range(0..practices.len())].clone();
        let active = rng.random::<f64>() < config.active_rate;

        let mut given: HashSet<&str> = HashSet::new();
        for &(id, p) in &order {
            let boost: f64 = config
                .co_occurrence_boost
                .iter()
                .filter(|b| b.then == id && given.contains(b.given.as_str()))
                .map(|b| b.multiplier)
                .product();
            let prob = (p * boost).min(1.0);
            if rng.random::<f64>() >= prob {
                continue;
            }
            given.insert(id);
            let concept = catalog.get(id).expect("checked");
            let code = concept.codes[rng.random_range(0..concept.codes.len())].clone();
            let window = concept.lookback_months.unwrap_or(HISTORY_MONTHS).min(HISTORY_MONTHS);
            let start = as_of.minus_months(window);
            let span = (as_of.date() - start).num_days();
            let event_date = as_of.date() - Duration::days(rng.random_range(0..=span));
            events.push(EventRow {
                pat_id: pat_id.clone(),
                table: table_of(concept.domain),
                code,
                event_date,
                value: None,
            });
        }

        let history_span = (as_of.date() - history_start).num_days();
        for (spec, normal) in config.observations.iter().zip(&normals) {
            if rng.random::<f64>() >= spec.rate {
                continue;
            }
            let readings = rng.random_range(1..=3);
            for _ in 0..readings {
                let event_date = as_of.date() - Duration::days(rng.random_range(0..=history_span));
                let raw = normal.sample(&mut rng).clamp(spec.min, spec.max);
                events.push(EventRow {
                    pat_id: pat_id.clone(),
                    table: EventTable::Observations,
                    code: spec.code.clone(),
                    event_date,
                    value: Some((raw * 10.0).round() / 10.0),
                });
            }
        }

        patients.push(PatientRow {
            pat_id,
            birth_date,
            sex,
            practice_id,
            district,
            active,
        });
    }

    Ok(EhrStore::new(patients, events, Some(as_of)).expect("generated rows are consistent"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;

    fn config(n: usize, seed: u64, prevalence: &[(&str, f64)]) -> GeneratorConfig {
        GeneratorConfig {
            n_patients: n,
            n_practices: 4,
            districts: vec!["North".into(), "South".into()],
            concept_prevalence: prevalence
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            co_occurrence_boost: vec![],
            observations: vec![],
            active_rate: 0.9,
            seed,
            as_of: AsOf::ymd(2025, 6, 30),
        }
    }

    #[test]
    fn zero_patients_is_empty() {
        let store = generate(&config(0, 1, &[("C-DM2", 0.5)]), &assets::catalog()).unwrap();
        assert!(store.is_empty());
        assert!(store.events().is_empty());
    }

    #[test]
    fn same_seed_same_store() {
        let cat = assets::catalog();
        let cfg = assets::demo_config();
        let a = generate(&cfg, &cat).unwrap();
        let b = generate(&cfg, &cat).unwrap();
        assert_eq!(a.patients(), b.patients());
        assert_eq!(a.events(), b.events());
    }

    #[test]
    fn prevalence_within_three_sigma() {
        // n = 10000, p = 0.08: sigma = sqrt(p(1-p)/n) = 0.002713, 3 sigma = 0.00814
        let cat = assets::catalog();
        let store = generate(&config(10_000, 7, &[("C-DM2", 0.08)]), &cat).unwrap();
        let codes = &cat.get("C-DM2").unwrap().codes;
        let coded: HashSet<&str> = store
            .events()
            .iter()
            .filter(|e| codes.contains(&e.code))
            .map(|e| e.pat_id.as_str())
            .collect();
        let frac = coded.len() as f64 / 10_000.0;
        assert!((0.072..=0.088).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn rows_respect_invariants() {
        let cat = assets::catalog();
        let cfg = assets::demo_config();
        let store = generate(&cfg, &cat).unwrap();
        assert_eq!(store.len(), cfg.n_patients);
        for p in store.patients() {
            assert!(p.pat_id.starts_with(PAT_ID_PREFIX) && p.pat_id.len() == 15);
            assert!(cfg.as_of.age_of(p.birth_date) <= 105);
            assert!(p.birth_date <= cfg.as_of.date());
        }
        for e in store.events() {
            assert!(e.event_date <= cfg.as_of.date());
            assert!(e.event_date >= cfg.as_of.minus_months(24));
            assert!(store.patient(&e.pat_id).is_some());
        }
    }

    #[test]
    fn practices_spread_over_districts() {
        let cat = assets::catalog();
        let store = generate(&config(400, 3, &[]), &cat).unwrap();
        for p in store.patients() {
            let n: usize = p.practice_id[1..].parse().unwrap();
            let expected = if (n - 1).is_multiple_of(2) { "North" } else { "South" };
            assert_eq!(p.district, expected);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let cat = assets::catalog();
        let bad_p = config(10, 1, &[("C-DM2", 1.5)]);
        assert!(matches!(
            generate(&bad_p, &cat),
            Err(GenerateError::InvalidConfig { field, .. }) if field == "concept_prevalence"
        ));
        let demo = config(10, 1, &[("C-ACTIVE", 0.5)]);
        assert!(generate(&demo, &cat).is_err());
        let mut chain = config(10, 1, &[("C-DM2", 0.1), ("C-HTN", 0.1), ("C-AF", 0.1)]);
        chain.co_occurrence_boost = vec![
            BoostRule { given: "C-DM2".into(), then: "C-HTN".into(), multiplier: 2.0 },
            BoostRule { given: "C-HTN".into(), then: "C-AF".into(), multiplier: 2.0 },
        ];
        assert!(generate(&chain, &cat).is_err());
        let mut none = config(10, 1, &[]);
        none.districts.clear();
        assert!(generate(&none, &cat).is_err());
    }

    #[test]
    fn boosts_raise_co_occurrence() {
        let cat = assets::catalog();
        let mut cfg = config(4000, 11, &[("C-DM2", 0.2), ("C-METFORMIN-3M", 0.05)]);
        cfg.co_occurrence_boost = vec![BoostRule {
            given: "C-DM2".into(),
            then: "C-METFORMIN-3M".into(),
            multiplier: 20.0,
        }];
        let store = generate(&cfg, &cat).unwrap();
        let with = |code_of: &str| -> HashSet<String> {
            let codes = &cat.get(code_of).unwrap().codes;
            store
                .events()
                .iter()
                .filter(|e| codes.contains(&e.code))
                .map(|e| e.pat_id.clone())
                .collect()
        };
        let dm = with("C-DM2");
        let met = with("C-METFORMIN-3M");
        let both = dm.intersection(&met).count() as f64 / dm.len() as f64;
        assert!(both > 0.9, "conditional rate {both}");
    }
}
