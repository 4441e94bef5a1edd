use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Record identifier. Base and tail records share one 64-bit key space:
/// base RIDs ascend from 0, tail RIDs descend from `u64::MAX`.
pub type Rid = u64;

/// RIDs at or above this value are tail RIDs.
pub const TAIL_FLOOR: Rid = 1 << 63;

#[inline]
pub fn is_tail_rid(rid: Rid) -> bool {
    rid >= TAIL_FLOOR
}

/// Allocates base RIDs monotonically increasing from 0 and tail RIDs
/// monotonically decreasing from 2^64 - 1. A RID is never reused.
#[derive(Debug)]
pub struct RidAllocator {
    next_base: AtomicU64,
    // Next tail rid to hand out, descending from 2^64 - 1.
    next_tail: AtomicU64,
}

impl RidAllocator {
    pub fn new() -> Self {
        RidAllocator {
            next_base: AtomicU64::new(0),
            next_tail: AtomicU64::new(u64::MAX),
        }
    }

    /// Restore allocator positions (recovery).
    pub fn restore(&self, next_base: u64, next_tail: u64) {
        self.next_base.store(next_base, Ordering::SeqCst);
        self.next_tail.store(next_tail, Ordering::SeqCst);
    }

    pub fn next_base_hint(&self) -> u64 {
        self.next_base.load(Ordering::SeqCst)
    }

    pub fn next_tail_hint(&self) -> u64 {
        self.next_tail.load(Ordering::SeqCst)
    }

    /// Reserve a contiguous ascending span of base RIDs, returning its start.
    pub fn allocate_base_span(&self, len: u64) -> Result<Rid> {
        let start = self.next_base.fetch_add(len, Ordering::SeqCst);
        if start.checked_add(len).is_none() || start + len > TAIL_FLOOR {
            return Err(Error::TailSpaceExhausted);
        }
        Ok(start)
    }

    /// Reserve a contiguous descending block of tail RIDs. Returns the
    /// highest rid of the block; the block covers `first`, `first - 1`, ...,
    /// `first - (len - 1)`.
    pub fn allocate_tail_block(&self, len: u64) -> Result<Rid> {
        debug_assert!(len >= 1);
        let first = self
            .next_tail
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |cur| {
                let lowest = cur.checked_sub(len - 1)?;
                if lowest < TAIL_FLOOR {
                    None
                } else {
                    Some(cur - len)
                }
            })
            .map_err(|_| Error::TailSpaceExhausted)?;
        Ok(first)
    }
}

impl Default for RidAllocator {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_test_by_floor() {
        assert!(!is_tail_rid(0));
        assert!(!is_tail_rid(TAIL_FLOOR - 1));
        assert!(is_tail_rid(TAIL_FLOOR));
        assert!(is_tail_rid(u64::MAX));
    }

    #[test]
    fn first_tail_block_starts_at_ceiling() {
        let a = RidAllocator::new();
        let first = a.allocate_tail_block(4096).unwrap();
        assert_eq!(first, u64::MAX);
        // covers 2^64-1 .. 2^64-4096
        let second = a.allocate_tail_block(16).unwrap();
        assert_eq!(second, u64::MAX - 4096);
    }

    #[test]
    fn base_spans_disjoint_adjacent() {
        let a = RidAllocator::new();
        let s1 = a.allocate_base_span(4096).unwrap();
        let s2 = a.allocate_base_span(4096).unwrap();
        assert_eq!(s1, 0);
        assert_eq!(s2, 4096);
    }

    #[test]
    fn tail_exhaustion_at_floor() {
        let a = RidAllocator::new();
        a.next_tail.store(TAIL_FLOOR + 9, Ordering::SeqCst);
        assert!(a.allocate_tail_block(10).is_ok());
        assert!(matches!(
            a.allocate_tail_block(1),
            Err(Error::TailSpaceExhausted)
        ));
    }

    #[test]
    fn no_rid_reuse_across_threads() {
        use std::sync::Arc;
        let a = Arc::new(RidAllocator::new());
        let mut handles = Vec::new();
        for _ in 0..4 {
            let a = Arc::clone(&a);
            handles.push(std::thread::spawn(move || {
                let mut seen = Vec::new();
                for _ in 0..500 {
                    let first = a.allocate_tail_block(3).unwrap();
                    seen.push(first);
                    seen.push(first - 1);
                    seen.push(first - 2);
                }
                seen
            }));
        }
        let mut all: Vec<u64> = handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
    }
}
