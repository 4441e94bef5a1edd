//! Indexes always target base records; an index entry never points at a
//! tail rid. Secondary entries for superseded values stay until no active
//! query's snapshot can observe them (removal rides the epoch reclaimer),
//! so lookups re-evaluate the predicate against the visible version.

use std::collections::BTreeMap;
use std::ops::Bound;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::rid::{is_tail_rid, Rid};

/// Secondary index on one data column: an ordered (value, base rid) set.
pub struct SecondaryIndex {
    pub column: u32,
    map: RwLock<BTreeMap<(u64, Rid), ()>>,
}

impl SecondaryIndex {
    pub fn new(column: u32) -> Arc<SecondaryIndex> {
        Arc::new(SecondaryIndex {
            column,
            map: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn insert(&self, value: u64, rid: Rid) {
        debug_assert!(!is_tail_rid(rid), "index entries must target base rids");
        self.map.write().insert((value, rid), ());
    }

    pub fn remove(&self, value: u64, rid: Rid) {
        self.map.write().remove(&(value, rid));
    }

    /// Candidate base rids for `value`; callers must re-check the predicate
    /// on the version visible to them.
    pub fn lookup(&self, value: u64) -> Vec<Rid> {
        self.map
            .read()
            .range((value, 0)..=(value, u64::MAX))
            .map(|((_, rid), _)| *rid)
            .collect()
    }

    pub fn contains(&self, value: u64, rid: Rid) -> bool {
        self.map.read().contains_key(&(value, rid))
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.read().is_empty()
    }

    /// Every target rid is a base rid (index-purity check).
    pub fn assert_base_targets(&self) {
        for (_, rid) in self.map.read().keys() {
            assert!(!is_tail_rid(*rid));
        }
    }
}

/// Primary key index: key -> base rid of the live record for the key.
pub struct PrimaryIndex {
    map: RwLock<BTreeMap<u64, Rid>>,
}

impl PrimaryIndex {
    pub fn new() -> Self {
        PrimaryIndex {
            map: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn get(&self, key: u64) -> Option<Rid> {
        self.map.read().get(&key).copied()
    }

    pub fn write_lock(&self) -> parking_lot::RwLockWriteGuard<'_, BTreeMap<u64, Rid>> {
        self.map.write()
    }

    pub fn remove_if(&self, key: u64, rid: Rid) {
        let mut m = self.map.write();
        if m.get(&key) == Some(&rid) {
            m.remove(&key);
        }
    }

    pub fn range_keys(&self, lo: Bound<u64>, hi: Bound<u64>) -> Vec<(u64, Rid)> {
        self.map
            .read()
            .range((lo, hi))
            .map(|(k, v)| (*k, *v))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.map.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.read().is_empty()
    }
}

impl Default for PrimaryIndex {
    fn default() -> Self {
        Self::new()
    }
}
