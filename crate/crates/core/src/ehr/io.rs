//! On-disk store layout:
//!
//! ```text
//! <dir>/patient.csv   pat_id,birth_date,sex,practice_id,district,active
//! <dir>/events.csv    pat_id,table,code,event_date,value
//! <dir>/meta.json     {"as_of": ..., "n_patients": ..., "n_events": ..., "config": ...}
//! ```
//!
//! Rows are written in store order, so regenerating from the same config
//! yields byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EhrStore, EventRow, GeneratorConfig, PatientRow};
use crate::logic::AsOf;

pub const PATIENT_COLUMNS: [&str; 6] = ["pat_id", "birth_date", "sex", "practice_id", "district", "active"];
pub const EVENT_COLUMNS: [&str; 5] = ["pat_id", "table", "code", "event_date", "value"];

#[derive(Debug, Error)]
pub enum StoreIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("inconsistent store: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    as_of: Option<AsOf>,
    n_patients: usize,
    n_events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<GeneratorConfig>,
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> StoreIoError + '_ {
    move |source| StoreIoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_store(
    store: &EhrStore,
    dir: impl AsRef<Path>,
    config: Option<&GeneratorConfig>,
) -> Result<(), StoreIoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| StoreIoError::Io {
        path: dir.to_path_buf(),
        source,
    })?;

    let path = dir.join("patient.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for p in store.patients() {
        w.serialize(p).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|source| StoreIoError::Io {
        path: path.clone(),
        source,
    })?;

    let path = dir.join("events.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for e in store.events() {
        w.serialize(e).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|source| StoreIoError::Io {
        path: path.clone(),
        source,
    })?;

    let path = dir.join("meta.json");
    let meta = Meta {
        as_of: store.as_of(),
        n_patients: store.len(),
        n_events: store.events().len(),
        config: config.cloned(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|source| StoreIoError::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text + "\n").map_err(|source| StoreIoError::Io { path, source })
}

pub fn load_store(dir: impl AsRef<Path>) -> Result<EhrStore, StoreIoError> {
    let dir = dir.as_ref();

    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|source| StoreIoError::Io {
        path: path.clone(),
        source,
    })?;
    let meta: Meta = serde_json::from_str(&text).map_err(|source| StoreIoError::Json { path, source })?;

    let path = dir.join("patient.csv");
    let patients = csv::Reader::from_path(&path)
        .map_err(csv_err(&path))?
        .deserialize::<PatientRow>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(csv_err(&path))?;

    let path = dir.join("events.csv");
    let events = csv::Reader::from_path(&path)
        .map_err(csv_err(&path))?
        .deserialize::<EventRow>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(csv_err(&path))?;

    if patients.len() != meta.n_patients || events.len() != meta.n_events {
        return Err(StoreIoError::Inconsistent(format!(
            "meta.json expects {} patients / {} events, found {} / {}",
            meta.n_patients,
            meta.n_events,
            patients.len(),
            events.len()
        )));
    }
    EhrStore::new(patients, events, meta.as_of).map_err(StoreIoError::Inconsistent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::ehr::generate;

    #[test]
    fn round_trip_is_lossless_and_stable() {
        let mut config = assets::demo_config();
        config.n_patients = 200;
        let store = generate(&config, &assets::catalog()).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_store(&store, a.path(), Some(&config)).unwrap();
        let back = load_store(a.path()).unwrap();
        assert_eq!(back.patients(), store.patients());
        assert_eq!(back.events(), store.events());
        assert_eq!(back.as_of(), store.as_of());
        write_store(&back, b.path(), Some(&config)).unwrap();
        for f in ["patient.csv", "events.csv", "meta.json"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn headers_follow_documented_order() {
        let mut config = assets::demo_config();
        config.n_patients = 5;
        let store = generate(&config, &assets::catalog()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_store(&store, dir.path(), None).unwrap();
        let first = |f: &str| {
            fs::read_to_string(dir.path().join(f))
                .unwrap()
                .lines()
                .next()
                .unwrap()
                .to_string()
        };
        assert_eq!(first("patient.csv"), PATIENT_COLUMNS.join(","));
        assert_eq!(first("events.csv"), EVENT_COLUMNS.join(","));
    }

    #[test]
    fn missing_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_store(dir.path().join("nope")),
            Err(StoreIoError::Io { .. })
        ));
    }
}
