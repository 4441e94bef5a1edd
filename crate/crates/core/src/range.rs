//! Update ranges and insert ranges.
//!
//! An update range is a disjoint span of base RIDs that shares a set of tail
//! pages; tail records are addressed by a per-range logical sequence number
//! (1, 2, 3, ...) so lineage comparisons use one ordering engine-wide even
//! though tail RIDs descend. An insert range is a pre-allocated span at the
//! end of the table whose rows live in table-level tail pages until merged.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::error::Result;
use crate::historic::HistoricPage;
use crate::rid::{Rid, RidAllocator};

/// A descending block of pre-allocated tail RIDs bound to one range.
/// `first_rid` is the highest rid; seq `first_seq + k` maps to
/// `first_rid - k`.
#[derive(Clone, Copy, Debug)]
pub struct TailBlock {
    pub first_rid: Rid,
    pub len: u64,
    pub first_seq: u64,
}

impl TailBlock {
    pub fn contains_rid(&self, rid: Rid) -> bool {
        rid <= self.first_rid && self.first_rid - rid < self.len
    }

    pub fn seq_of(&self, rid: Rid) -> u64 {
        debug_assert!(self.contains_rid(rid));
        self.first_seq + (self.first_rid - rid)
    }

    pub fn rid_of(&self, seq: u64) -> Rid {
        debug_assert!(seq >= self.first_seq && seq < self.first_seq + self.len);
        self.first_rid - (seq - self.first_seq)
    }

    pub fn last_seq(&self) -> u64 {
        self.first_seq + self.len - 1
    }
}

#[derive(Default)]
struct ResolveState {
    /// Resolved (committed or aborted) seqs above the watermark.
    out_of_order: BTreeSet<u64>,
}

/// Backing marker for update ranges whose rows still live in an insert
/// range's table-level tail pages.
#[derive(Clone, Copy, Debug)]
pub struct InsertBacking {
    pub ir_id: u64,
}

pub struct UpdateRange {
    pub range_id: u64,
    pub base_lo: Rid,
    pub base_hi: Rid,
    next_seq: AtomicU64,
    blocks: RwLock<Vec<TailBlock>>,
    resolve: Mutex<ResolveState>,
    /// Highest seq such that every seq at or below it is committed/aborted.
    watermark: AtomicU64,
    aborted: RwLock<BTreeSet<u64>>,
    /// Highest seq handed to the merge queue (spans are contiguous).
    pub enqueued_upto: AtomicU64,
    /// TPS published by the last full-column merge; cumulation resets here.
    pub published_tps: AtomicU64,
    /// Merges completed on this range (drives historic-compression cadence).
    pub merges_done: AtomicU64,
    /// Seqs at or below this are re-encoded in historic pages.
    pub compressed_upto: AtomicU64,
    pub historic: RwLock<Vec<Arc<HistoricPage>>>,
    /// Insert-range id + 1 while this range's rows still live in
    /// table-level tail pages; 0 once consolidated.
    insert_backing: AtomicU64,
    /// Bumped on every directory change affecting this range's base pages.
    pub page_generation: AtomicU64,
    /// Read-mostly snapshot of the current base-page handles, keyed by
    /// `page_generation` (readers on a stale snapshot reconcile per column
    /// like any cross-generation read).
    pub(crate) page_cache: RwLock<Option<Arc<crate::table::CachedRangePages>>>,
    /// Tail-page handles by [column][page index]. Tail pages are created
    /// once and never replaced, so the cache is append-only and always
    /// valid; the directory stays the authority for persistence walks.
    pub(crate) tail_cache: RwLock<Vec<Vec<Option<Arc<crate::page::Page>>>>>,
}

impl UpdateRange {
    pub fn new(range_id: u64, base_lo: Rid, base_hi: Rid, backing: Option<InsertBacking>) -> Self {
        UpdateRange {
            range_id,
            base_lo,
            base_hi,
            next_seq: AtomicU64::new(0),
            blocks: RwLock::new(Vec::new()),
            resolve: Mutex::new(ResolveState::default()),
            watermark: AtomicU64::new(0),
            aborted: RwLock::new(BTreeSet::new()),
            enqueued_upto: AtomicU64::new(0),
            published_tps: AtomicU64::new(0),
            merges_done: AtomicU64::new(0),
            compressed_upto: AtomicU64::new(0),
            historic: RwLock::new(Vec::new()),
            insert_backing: AtomicU64::new(match backing {
                Some(b) => b.ir_id + 1,
                None => 0,
            }),
            page_generation: AtomicU64::new(0),
            page_cache: RwLock::new(None),
            tail_cache: RwLock::new(Vec::new()),
        }
    }

    pub fn insert_backing(&self) -> Option<InsertBacking> {
        match self.insert_backing.load(Ordering::Acquire) {
            0 => None,
            v => Some(InsertBacking { ir_id: v - 1 }),
        }
    }

    pub fn clear_insert_backing(&self) {
        self.insert_backing.store(0, Ordering::Release);
        self.page_generation.fetch_add(1, Ordering::Release);
    }

    pub fn span(&self) -> u64 {
        self.base_hi - self.base_lo
    }

    pub fn slot_of(&self, rid: Rid) -> u32 {
        debug_assert!(rid >= self.base_lo && rid < self.base_hi);
        (rid - self.base_lo) as u32
    }

    /// Allocate `n` consecutive seqs (and their rids) for one logical write.
    /// The rids come from this range's blocks, extending them on demand; any
    /// freshly reserved blocks are returned so the caller can log them.
    #[allow(clippy::type_complexity)]
    pub fn allocate_tail(
        &self,
        n: u64,
        alloc: &RidAllocator,
        block_rids: u64,
    ) -> Result<(Vec<(u64, Rid)>, Vec<TailBlock>)> {
        let first = self.next_seq.fetch_add(n, Ordering::SeqCst) + 1;
        let need_upto = first + n - 1;
        let mut out = Vec::with_capacity(n as usize);
        let mut fresh = Vec::new();
        // fast path: the span is already covered by existing blocks
        {
            let blocks = self.blocks.read();
            if blocks.last().map(|b| b.last_seq()).unwrap_or(0) >= need_upto {
                for k in 0..n {
                    let seq = first + k;
                    let i = blocks.partition_point(|b| b.first_seq <= seq);
                    out.push((seq, blocks[i - 1].rid_of(seq)));
                }
                return Ok((out, fresh));
            }
        }
        {
            let mut blocks = self.blocks.write();
            let covered = blocks.last().map(|b| b.last_seq()).unwrap_or(0);
            let mut next_first_seq = covered + 1;
            while next_first_seq <= need_upto {
                let len = block_rids.max(n);
                let first_rid = alloc.allocate_tail_block(len)?;
                let block = TailBlock {
                    first_rid,
                    len,
                    first_seq: next_first_seq,
                };
                blocks.push(block);
                fresh.push(block);
                next_first_seq += len;
            }
            for k in 0..n {
                let seq = first + k;
                let i = blocks.partition_point(|b| b.first_seq <= seq);
                out.push((seq, blocks[i - 1].rid_of(seq)));
            }
        }
        Ok((out, fresh))
    }

    /// Reserve a fresh descending rid block bound to this range without
    /// consuming sequence numbers; later appends draw from it.
    pub fn preallocate_tail_block(
        &self,
        count: u64,
        alloc: &RidAllocator,
    ) -> Result<TailBlock> {
        if count == 0 {
            return Err(crate::error::Error::InvalidParameter(
                "count must be at least 1".into(),
            ));
        }
        let mut blocks = self.blocks.write();
        let first_seq = blocks.last().map(|b| b.last_seq()).unwrap_or(0) + 1;
        let first_rid = alloc.allocate_tail_block(count)?;
        let block = TailBlock {
            first_rid,
            len: count,
            first_seq,
        };
        blocks.push(block);
        Ok(block)
    }

    /// Install a block during recovery replay.
    pub fn restore_block(&self, block: TailBlock) {
        let mut blocks = self.blocks.write();
        blocks.push(block);
        blocks.sort_by_key(|b| b.first_seq);
    }

    pub fn restore_next_seq(&self, next: u64) {
        self.next_seq.fetch_max(next, Ordering::SeqCst);
    }

    pub fn blocks_snapshot(&self) -> Vec<TailBlock> {
        self.blocks.read().clone()
    }

    pub fn seq_of_rid(&self, rid: Rid) -> Option<u64> {
        // blocks are appended with descending rid spans: binary search the
        // first block whose first_rid is at or above `rid`
        let blocks = self.blocks.read();
        let i = blocks.partition_point(|b| b.first_rid > rid);
        let b = if i < blocks.len() && blocks[i].first_rid == rid {
            &blocks[i]
        } else if i > 0 {
            &blocks[i - 1]
        } else {
            return None;
        };
        if b.contains_rid(rid) {
            Some(b.seq_of(rid))
        } else {
            None
        }
    }

    pub fn rid_of_seq(&self, seq: u64) -> Option<Rid> {
        let blocks = self.blocks.read();
        let i = blocks.partition_point(|b| b.first_seq <= seq);
        if i == 0 {
            return None;
        }
        let b = &blocks[i - 1];
        if seq <= b.last_seq() {
            Some(b.rid_of(seq))
        } else {
            None
        }
    }

    pub fn last_allocated_seq(&self) -> u64 {
        self.next_seq.load(Ordering::SeqCst)
    }

    /// All seqs at or below the watermark are committed or aborted; the
    /// merge only consumes records below this line.
    pub fn resolved_watermark(&self) -> u64 {
        self.watermark.load(Ordering::SeqCst)
    }

    /// Mark one seq resolved; advances the watermark over any contiguous
    /// prefix that became complete. Returns the new watermark.
    pub fn mark_resolved(&self, seq: u64, aborted: bool) -> u64 {
        if aborted {
            self.aborted.write().insert(seq);
        }
        let mut st = self.resolve.lock();
        let mut wm = self.watermark.load(Ordering::SeqCst);
        if seq == wm + 1 && st.out_of_order.is_empty() {
            // in-order resolution: pure watermark bump
            self.watermark.store(seq, Ordering::SeqCst);
            return seq;
        }
        st.out_of_order.insert(seq);
        while st.out_of_order.remove(&(wm + 1)) {
            wm += 1;
        }
        self.watermark.store(wm, Ordering::SeqCst);
        wm
    }

    pub fn is_aborted_seq(&self, seq: u64) -> bool {
        self.aborted.read().contains(&seq)
    }

    /// Unmerged committed backlog (merge trigger input).
    pub fn unmerged_resolved(&self) -> u64 {
        let wm = self.resolved_watermark();
        let q = self.enqueued_upto.load(Ordering::SeqCst);
        wm.saturating_sub(q)
    }
}

pub struct InsertRange {
    pub ir_id: u64,
    pub base_lo: Rid,
    pub base_hi: Rid,
    /// Aligned descending table-level tail rids: slot i holds rid
    /// `tt_first_rid - i`.
    pub tt_first_rid: Rid,
    next_slot: AtomicU64,
    resolved_slots: AtomicU64,
    closed: AtomicBool,
    issued_at_close: AtomicU64,
}

impl InsertRange {
    pub fn new(ir_id: u64, base_lo: Rid, base_hi: Rid, tt_first_rid: Rid) -> Self {
        InsertRange {
            ir_id,
            base_lo,
            base_hi,
            tt_first_rid,
            next_slot: AtomicU64::new(0),
            resolved_slots: AtomicU64::new(0),
            closed: AtomicBool::new(false),
            issued_at_close: AtomicU64::new(0),
        }
    }

    pub fn span(&self) -> u64 {
        self.base_hi - self.base_lo
    }

    /// Reserve the next aligned (base rid, table-level tail rid) pair.
    /// Returns `None` when the range is full or closed.
    pub fn reserve_slot(&self) -> Option<(u64, Rid, Rid)> {
        if self.closed.load(Ordering::Acquire) {
            return None;
        }
        let slot = self
            .next_slot
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |cur| {
                if cur >= self.span() {
                    None
                } else {
                    Some(cur + 1)
                }
            })
            .ok()?;
        Some((slot, self.base_lo + slot, self.tt_first_rid - slot))
    }

    pub fn issued(&self) -> u64 {
        if self.closed.load(Ordering::Acquire) {
            self.issued_at_close.load(Ordering::Acquire)
        } else {
            self.next_slot.load(Ordering::SeqCst).min(self.span())
        }
    }

    pub fn slot_of_rid(&self, base_rid: Rid) -> u32 {
        debug_assert!(base_rid >= self.base_lo && base_rid < self.base_hi);
        (base_rid - self.base_lo) as u32
    }

    pub fn slot_of_tt_rid(&self, tt_rid: Rid) -> u64 {
        debug_assert!(self.tt_first_rid - tt_rid < self.span());
        self.tt_first_rid - tt_rid
    }

    pub fn contains_tt_rid(&self, tt_rid: Rid) -> bool {
        tt_rid <= self.tt_first_rid && self.tt_first_rid - tt_rid < self.span()
    }

    pub fn mark_slot_resolved(&self) -> u64 {
        self.resolved_slots.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn restore_slots(&self, issued: u64, resolved: u64) {
        self.next_slot.fetch_max(issued, Ordering::SeqCst);
        self.resolved_slots.store(resolved, Ordering::SeqCst);
        // a close replayed before issuance was known captured too little
        if self.closed.load(Ordering::Acquire) {
            self.issued_at_close.fetch_max(issued, Ordering::SeqCst);
        }
    }

    pub fn resolved(&self) -> u64 {
        self.resolved_slots.load(Ordering::SeqCst)
    }

    pub fn close(&self) {
        if !self.closed.swap(true, Ordering::AcqRel) {
            self.issued_at_close
                .store(self.next_slot.load(Ordering::SeqCst).min(self.span()), Ordering::Release);
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }

    pub fn is_full(&self) -> bool {
        self.next_slot.load(Ordering::SeqCst) >= self.span()
    }

    /// Eligible for the simplified merge: closed (or full) with every issued
    /// record resolved.
    pub fn merge_eligible(&self) -> bool {
        (self.is_closed() || self.is_full()) && self.resolved() >= self.issued()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seq_rid_mapping_descends() {
        let alloc = RidAllocator::new();
        let r = UpdateRange::new(0, 0, 4096, None);
        let (pair, fresh) = r.allocate_tail(2, &alloc, 512).unwrap();
        assert_eq!(fresh.len(), 1);
        assert_eq!(pair[0].0, 1);
        assert_eq!(pair[0].1, u64::MAX);
        assert_eq!(pair[1].0, 2);
        assert_eq!(pair[1].1, u64::MAX - 1);
        assert_eq!(r.seq_of_rid(u64::MAX - 1), Some(2));
        assert_eq!(r.rid_of_seq(1), Some(u64::MAX));
    }

    #[test]
    fn exhausting_block_allocates_fresh_one() {
        let alloc = RidAllocator::new();
        let r = UpdateRange::new(0, 0, 4096, None);
        for _ in 0..5 {
            r.allocate_tail(1, &alloc, 4).unwrap();
        }
        let blocks = r.blocks_snapshot();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[1].first_seq, 5);
        // second block strictly below the first
        assert!(blocks[1].first_rid < blocks[0].first_rid - blocks[0].len + 1);
    }

    #[test]
    fn watermark_advances_over_contiguous_prefix() {
        let r = UpdateRange::new(0, 0, 4096, None);
        assert_eq!(r.mark_resolved(2, false), 0);
        assert_eq!(r.mark_resolved(1, false), 2);
        assert_eq!(r.mark_resolved(4, true), 2);
        assert_eq!(r.mark_resolved(3, false), 4);
        assert!(r.is_aborted_seq(4));
        assert!(!r.is_aborted_seq(3));
    }

    #[test]
    fn insert_range_slots_align() {
        let ir = InsertRange::new(0, 0, 1024, u64::MAX);
        let (s0, b0, t0) = ir.reserve_slot().unwrap();
        assert_eq!((s0, b0, t0), (0, 0, u64::MAX));
        let (s1, b1, t1) = ir.reserve_slot().unwrap();
        assert_eq!((s1, b1, t1), (1, 1, u64::MAX - 1));
        assert_eq!(ir.slot_of_tt_rid(t1), 1);
        ir.close();
        assert!(ir.reserve_slot().is_none());
        assert_eq!(ir.issued(), 2);
        assert!(!ir.merge_eligible());
        ir.mark_slot_resolved();
        ir.mark_slot_resolved();
        assert!(ir.merge_eligible());
    }

    #[test]
    fn full_insert_range_stops_issuing() {
        let ir = InsertRange::new(0, 0, 4, u64::MAX);
        for _ in 0..4 {
            ir.reserve_slot().unwrap();
        }
        assert!(ir.reserve_slot().is_none());
        assert!(ir.is_full());
    }
}
