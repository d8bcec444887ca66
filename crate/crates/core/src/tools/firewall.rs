//! Substring scan for patient ids in anything bound for the model.

use std::collections::{BTreeSet, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::ehr::{EhrStore, PAT_ID_PREFIX};

/// Knows every pat_id in a store and reports whether a string contains one.
#[derive(Debug, Default)]
pub struct Firewall {
    ids: HashSet<String>,
    lengths: BTreeSet<usize>,
    prefixed: bool,
    incidents: AtomicUsize,
}

impl Firewall {
    pub fn new(store: &EhrStore) -> Self {
        Firewall::from_ids(store.pat_ids().map(str::to_string))
    }

    pub fn from_ids(ids: impl IntoIterator<Item = String>) -> Self {
        let ids: HashSet<String> = ids.into_iter().filter(|id| !id.is_empty()).collect();
        let lengths = ids.iter().map(|id| id.len()).collect();
        let prefixed = ids.iter().all(|id| id.starts_with(PAT_ID_PREFIX));
        Firewall {
            ids,
            lengths,
            prefixed,
            incidents: AtomicUsize::new(0),
        }
    }

    /// First pat_id found in `content`, if any.
    pub fn find_leak<'a>(&self, content: &'a str) -> Option<&'a str> {
        if self.ids.is_empty() {
            return None;
        }
        if !self.prefixed {
            return self
                .ids
                .iter()
                .find_map(|id| content.find(id.as_str()).map(|at| &content[at..at + id.len()]));
        }
        for (at, _) in content.match_indices(PAT_ID_PREFIX) {
            for &len in &self.lengths {
                if let Some(candidate) = content.get(at..at + len) {
                    if self.ids.contains(candidate) {
                        return Some(candidate);
                    }
                }
            }
        }
        None
    }

    /// True when `content` is free of patient ids.
    pub fn passes(&self, content: &str) -> bool {
        self.find_leak(content).is_none()
    }

    /// Like [`Firewall::passes`], but counts and logs a violation.
    pub fn check(&self, content: &str, context: &str) -> bool {
        match self.find_leak(content) {
            None => true,
            Some(_) => {
                self.incidents.fetch_add(1, Ordering::SeqCst);
                tracing::error!(context, "firewall blocked a tool result containing a patient id");
                false
            }
        }
    }

    pub fn incidents(&self) -> usize {
        self.incidents.load(Ordering::SeqCst)
    }
}

/// One-shot scan: does `content` avoid every pat_id in `store`?
pub fn firewall_scan(content: &str, store: &EhrStore) -> bool {
    Firewall::new(store).passes(content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use proptest::prelude::*;

    #[test]
    fn counts_pass() {
        let store = assets::demo_store();
        assert!(firewall_scan("cohort K1 has 37 members", &store));
    }

    #[test]
    fn real_id_is_caught() {
        let store = assets::demo_store();
        let id = store.patients()[17].pat_id.clone();
        let fw = Firewall::new(&store);
        assert!(!fw.passes(&format!("rows: [\"{id}\"]")));
        assert_eq!(fw.find_leak(&format!("x{id}y")), Some(id.as_str()));
        assert!(!fw.check(&id, "test"));
        assert_eq!(fw.incidents(), 1);
    }

    #[test]
    fn unprefixed_ids_use_naive_scan() {
        let fw = Firewall::from_ids(["alpha".to_string(), "beta".to_string()]);
        assert!(!fw.passes("the beta cohort"));
        assert!(fw.passes("gamma"));
    }

    #[test]
    fn unknown_prefixed_string_passes() {
        let fw = Firewall::from_ids(["PT-000000000001".to_string()]);
        assert!(fw.passes("PT-000000000002 and PT-"));
        assert!(!fw.passes("PT-PT-000000000001"));
    }

    proptest! {
        #[test]
        fn agrees_with_naive_contains(
            ids in proptest::collection::vec("PT-[0-9a-f]{3}", 1..8),
            noise in "[PT0-9a-f\\- ]{0,40}",
            pick in any::<prop::sample::Index>(),
            insert in any::<bool>(),
        ) {
            let fw = Firewall::from_ids(ids.clone());
            let content = if insert {
                format!("{noise}{}{noise}", pick.get(&ids))
            } else {
                noise.clone()
            };
            let naive = ids.iter().any(|id| content.contains(id.as_str()));
            prop_assert_eq!(fw.passes(&content), !naive);
        }
    }
}
