//! Page directory: maps (column, range, page index) to the current physical
//! page. Each entry is an independently replaceable handle; a swap is atomic
//! per entry, so a concurrent lookup observes either the old or the new
//! handle, never a torn state. Generation stamps let tests assert that.

use std::hash::{BuildHasherDefault, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use dashmap::DashMap;

use crate::error::{Error, Result};
use crate::page::Page;

/// Multiply-xor hasher for the small fixed-width keys used on hot paths
/// (page keys, transaction ids).
#[derive(Default)]
pub struct FastHasher(u64);

impl Hasher for FastHasher {
    #[inline]
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100000001b3);
        }
    }

    #[inline]
    fn write_u8(&mut self, v: u8) {
        self.write_u64(v as u64);
    }

    #[inline]
    fn write_u32(&mut self, v: u32) {
        self.write_u64(v as u64);
    }

    #[inline]
    fn write_u64(&mut self, v: u64) {
        let mut x = self.0 ^ v;
        x = x.wrapping_mul(0xff51afd7ed558ccd);
        x ^= x >> 33;
        self.0 = x;
    }

    #[inline]
    fn write_usize(&mut self, v: usize) {
        self.write_u64(v as u64);
    }

    #[inline]
    fn finish(&self) -> u64 {
        self.0
    }
}

pub type FastState = BuildHasherDefault<FastHasher>;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum PageKey {
    /// Base/merged pages of an update range.
    Base { column: u32, range_id: u64, idx: u32 },
    /// Tail pages of an update range.
    Tail { column: u32, range_id: u64, idx: u32 },
    /// Table-level tail pages of an insert range.
    TableTail { column: u32, ir_id: u64, idx: u32 },
}

#[derive(Clone)]
pub struct DirEntry {
    pub page: Arc<Page>,
    pub generation: u64,
}

pub struct PageDirectory {
    entries: DashMap<PageKey, DirEntry, FastState>,
    generation: AtomicU64,
}

impl PageDirectory {
    pub fn new() -> Self {
        PageDirectory {
            entries: DashMap::with_hasher(FastState::default()),
            generation: AtomicU64::new(0),
        }
    }

    fn next_gen(&self) -> u64 {
        self.generation.fetch_add(1, Ordering::Relaxed) + 1
    }

    pub fn get(&self, key: PageKey) -> Option<Arc<Page>> {
        self.entries.get(&key).map(|e| Arc::clone(&e.page))
    }

    pub fn get_entry(&self, key: PageKey) -> Option<DirEntry> {
        self.entries.get(&key).map(|e| e.clone())
    }

    pub fn insert(&self, key: PageKey, page: Arc<Page>) {
        let generation = self.next_gen();
        self.entries.insert(key, DirEntry { page, generation });
    }

    pub fn get_or_insert_with(&self, key: PageKey, f: impl FnOnce() -> Arc<Page>) -> Arc<Page> {
        if let Some(e) = self.entries.get(&key) {
            return Arc::clone(&e.page);
        }
        let generation = self.next_gen();
        let entry = self
            .entries
            .entry(key)
            .or_insert_with(|| DirEntry { page: f(), generation });
        Arc::clone(&entry.page)
    }

    /// Swap an existing entry to `new_page`, returning the displaced handle
    /// for epoch reclamation. Swapping in the identical handle is a no-op.
    pub fn swap(&self, key: PageKey, new_page: Arc<Page>) -> Result<Arc<Page>> {
        let mut entry = self
            .entries
            .get_mut(&key)
            .ok_or(Error::UnknownDirectoryEntry)?;
        if Arc::ptr_eq(&entry.page, &new_page) {
            return Ok(new_page);
        }
        let old = std::mem::replace(&mut entry.page, new_page);
        entry.generation = self.generation.fetch_add(1, Ordering::Relaxed) + 1;
        Ok(old)
    }

    pub fn contains(&self, key: PageKey) -> bool {
        self.entries.contains_key(&key)
    }

    pub fn remove(&self, key: PageKey) -> Option<Arc<Page>> {
        self.entries.remove(&key).map(|(_, e)| e.page)
    }

    /// Snapshot of all entries (recovery/flush walks).
    pub fn iter_entries(&self) -> Vec<(PageKey, Arc<Page>)> {
        self.entries
            .iter()
            .map(|e| (*e.key(), Arc::clone(&e.value().page)))
            .collect()
    }
}

impl Default for PageDirectory {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::page::PageKind;

    fn page(col: u32) -> Arc<Page> {
        Arc::new(Page::new(PageKind::Base, col, 0, 16, 0))
    }

    #[test]
    fn swap_returns_old_handle() {
        let d = PageDirectory::new();
        let key = PageKey::Base { column: 0, range_id: 0, idx: 0 };
        let p1 = page(0);
        d.insert(key, Arc::clone(&p1));
        let p2 = page(0);
        let old = d.swap(key, Arc::clone(&p2)).unwrap();
        assert!(Arc::ptr_eq(&old, &p1));
        assert!(Arc::ptr_eq(&d.get(key).unwrap(), &p2));
    }

    #[test]
    fn self_swap_is_noop() {
        let d = PageDirectory::new();
        let key = PageKey::Base { column: 0, range_id: 0, idx: 0 };
        let p = page(0);
        d.insert(key, Arc::clone(&p));
        let g = d.get_entry(key).unwrap().generation;
        let back = d.swap(key, Arc::clone(&p)).unwrap();
        assert!(Arc::ptr_eq(&back, &p));
        assert_eq!(d.get_entry(key).unwrap().generation, g);
    }

    #[test]
    fn unknown_entry_errors() {
        let d = PageDirectory::new();
        let key = PageKey::Tail { column: 1, range_id: 2, idx: 3 };
        assert!(matches!(d.swap(key, page(1)), Err(Error::UnknownDirectoryEntry)));
    }

    #[test]
    fn concurrent_lookups_see_exactly_one_generation() {
        use std::sync::atomic::AtomicBool;
        let d = Arc::new(PageDirectory::new());
        let key = PageKey::Base { column: 0, range_id: 0, idx: 0 };
        d.insert(key, page(0));
        let stop = Arc::new(AtomicBool::new(false));
        let mut readers = Vec::new();
        for _ in 0..4 {
            let d = Arc::clone(&d);
            let stop = Arc::clone(&stop);
            readers.push(std::thread::spawn(move || {
                let mut last_gen = 0;
                while !stop.load(Ordering::Relaxed) {
                    let e = d.get_entry(key).unwrap();
                    // generations only move forward
                    assert!(e.generation >= last_gen);
                    last_gen = e.generation;
                }
            }));
        }
        for _ in 0..1000 {
            d.swap(key, page(0)).unwrap();
        }
        stop.store(true, Ordering::Relaxed);
        for r in readers {
            r.join().unwrap();
        }
    }
}
