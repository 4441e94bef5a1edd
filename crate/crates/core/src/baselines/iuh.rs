//! In-place update + history backend. The main table always holds the
//! latest version, mutated in place under exclusive per-range page latches
//! (readers take shared latches); displaced versions append to a history
//! table (updated columns only, backward-linked) before the in-place write
//! becomes visible, and aborts restore from history.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::clock::LogicalClock;
use crate::error::{Error, Result};
use crate::index::PrimaryIndex;
use crate::page::{Page, PageKind};
use crate::schema::{start_is_pending, start_pending, start_pending_txn, TableSchema};
use crate::txn::{Isolation, TxnState, TxnTable};

use super::{Backend, BackendTxn};

const FLAG_DELETED: u64 = 1;
const NO_LINK: u64 = u64::MAX;

const RANGE: u64 = 4096;

/// Meta column ids appended after the data columns.
struct Meta;
impl Meta {
    const START: u32 = 0;
    const LINK: u32 = 1;
    const FLAGS: u32 = 2;
    const COUNT: u32 = 3;
}

struct RangePages {
    /// one latch per column page; acquired in ascending column order
    latches: Vec<RwLock<()>>,
    /// data columns then meta columns, one page per column
    cols: Vec<Arc<Page>>,
}

impl RangePages {
    /// Shared latches on the given columns plus the meta pages.
    fn latch_shared(&self, cols: &[u32]) -> Vec<parking_lot::RwLockReadGuard<'_, ()>> {
        cols.iter().map(|c| self.latches[*c as usize].read()).collect()
    }

    /// Exclusive latches on the given columns plus the meta pages.
    fn latch_exclusive(&self, cols: &[u32]) -> Vec<parking_lot::RwLockWriteGuard<'_, ()>> {
        cols.iter().map(|c| self.latches[*c as usize].write()).collect()
    }
}

/// Columnar append-only store of displaced versions.
struct HistoryStore {
    next: AtomicU64,
    /// per column (data + mask + start + flags + prev), page list
    cols: RwLock<Vec<Vec<Arc<Page>>>>,
    ncols: u32,
}

struct HistMeta;
impl HistMeta {
    const MASK: u32 = 0;
    const START: u32 = 1;
    const FLAGS: u32 = 2;
    const PREV: u32 = 3;
    const COUNT: u32 = 4;
}

impl HistoryStore {
    fn new(ncols: u32) -> Self {
        HistoryStore {
            next: AtomicU64::new(0),
            cols: RwLock::new(vec![Vec::new(); (ncols + HistMeta::COUNT) as usize]),
            ncols,
        }
    }

    fn page(&self, col: u32, seq: u64) -> Arc<Page> {
        let idx = (seq / RANGE) as usize;
        {
            let cols = self.cols.read();
            if let Some(p) = cols[col as usize].get(idx) {
                return Arc::clone(p);
            }
        }
        let mut cols = self.cols.write();
        while cols[col as usize].len() <= idx {
            cols[col as usize].push(Arc::new(Page::new(
                PageKind::Tail,
                col,
                idx as u64,
                RANGE as u32,
                0,
            )));
        }
        Arc::clone(&cols[col as usize][idx])
    }

    fn append(
        &self,
        mask: u64,
        values: &[(u32, u64)],
        start: u64,
        flags: u64,
        prev: u64,
    ) -> u64 {
        let seq = self.next.fetch_add(1, Ordering::SeqCst);
        let off = (seq % RANGE) as u32;
        for (c, v) in values {
            let _ = self.page(*c, seq).write_slot(off, *v);
        }
        let m = self.ncols;
        let _ = self.page(m + HistMeta::MASK, seq).write_slot(off, mask);
        let _ = self.page(m + HistMeta::START, seq).write_slot(off, start);
        let _ = self.page(m + HistMeta::FLAGS, seq).write_slot(off, flags);
        let _ = self.page(m + HistMeta::PREV, seq).write_slot(off, prev);
        seq
    }

    fn read(&self, seq: u64) -> (u64, u64, u64, u64) {
        let off = (seq % RANGE) as u32;
        let m = self.ncols;
        let mask = self.page(m + HistMeta::MASK, seq).read_slot(off).unwrap_or(0);
        let start = self.page(m + HistMeta::START, seq).read_slot(off).unwrap_or(0);
        let flags = self.page(m + HistMeta::FLAGS, seq).read_slot(off).unwrap_or(0);
        let prev = self
            .page(m + HistMeta::PREV, seq)
            .read_slot(off)
            .unwrap_or(NO_LINK);
        (mask, start, flags, prev)
    }

    fn value(&self, seq: u64, col: u32) -> Option<u64> {
        self.page(col, seq).read_slot((seq % RANGE) as u32)
    }
}

enum IuhWrite {
    Insert { rid: u64, key: u64 },
    Update { rid: u64, hist: u64 },
}

pub struct IuhTxn {
    pub id: u64,
    pub begin: u64,
    state: TxnState,
    writes: Vec<IuhWrite>,
}

pub struct IuhEngine {
    schema: TableSchema,
    clock: LogicalClock,
    txns: TxnTable,
    next_rid: AtomicU64,
    ranges: RwLock<Vec<Arc<RangePages>>>,
    history: HistoryStore,
    primary: PrimaryIndex,
}

impl IuhEngine {
    pub fn new(num_data_columns: u32, key_column: u32) -> Result<Arc<IuhEngine>> {
        let schema = TableSchema::new(0, num_data_columns, key_column)?;
        Ok(Arc::new(IuhEngine {
            schema,
            clock: LogicalClock::new(),
            txns: TxnTable::new(),
            next_rid: AtomicU64::new(0),
            ranges: RwLock::new(Vec::new()),
            history: HistoryStore::new(num_data_columns),
            primary: PrimaryIndex::new(),
        }))
    }

    fn range_for(&self, rid: u64) -> Arc<RangePages> {
        let idx = (rid / RANGE) as usize;
        {
            let r = self.ranges.read();
            if let Some(p) = r.get(idx) {
                return Arc::clone(p);
            }
        }
        let mut r = self.ranges.write();
        while r.len() <= idx {
            let n = self.schema.num_data_columns + Meta::COUNT;
            let cols = (0..n)
                .map(|c| Arc::new(Page::new(PageKind::Base, c, r.len() as u64, RANGE as u32, 0)))
                .collect();
            r.push(Arc::new(RangePages {
                latches: (0..n).map(|_| RwLock::new(())).collect(),
                cols,
            }));
        }
        Arc::clone(&r[idx])
    }

    fn meta_col(&self, m: u32) -> usize {
        (self.schema.num_data_columns + m) as usize
    }

    /// Columns a statement touches: explicit data columns plus every meta
    /// page, ascending (the deadlock-free latch order).
    fn latch_cols(&self, data_mask: u64) -> Vec<u32> {
        let mut cols = Vec::new();
        let mut bits = data_mask;
        let mut c = 0u32;
        while bits != 0 {
            if bits & 1 != 0 {
                cols.push(c);
            }
            bits >>= 1;
            c += 1;
        }
        for m in 0..Meta::COUNT {
            cols.push(self.schema.num_data_columns + m);
        }
        cols
    }

    /// Reconstruct the version of `rid` visible at `begin` (or to `own`).
    /// The caller holds at least a shared latch on the row's range.
    fn visible_row(
        &self,
        pages: &RangePages,
        rid: u64,
        begin: u64,
        own: Option<u64>,
    ) -> Option<Vec<u64>> {
        let off = (rid % RANGE) as u32;
        let n = self.schema.num_data_columns as usize;
        let mut vals: Vec<u64> = (0..n)
            .map(|c| pages.cols[c].read_slot(off).unwrap_or(0))
            .collect();
        let mut start = pages.cols[self.meta_col(Meta::START)].read_slot(off)?;
        let mut flags = pages.cols[self.meta_col(Meta::FLAGS)]
            .read_slot(off)
            .unwrap_or(0);
        let mut link = pages.cols[self.meta_col(Meta::LINK)]
            .read_slot(off)
            .unwrap_or(NO_LINK);
        loop {
            let visible = if start_is_pending(start) {
                let tid = start_pending_txn(start);
                if own == Some(tid) {
                    true
                } else {
                    match self.txns.status(tid) {
                        Some(st) if st.state == TxnState::Committed => st.commit < begin,
                        _ => false,
                    }
                }
            } else {
                start < begin
            };
            if visible {
                if flags & FLAG_DELETED != 0 {
                    return None;
                }
                return Some(vals);
            }
            if link == NO_LINK {
                return None;
            }
            // revert to the displaced version
            let (mask, old_start, old_flags, prev) = self.history.read(link);
            let mut bits = mask;
            let mut c = 0u32;
            while bits != 0 {
                if bits & 1 != 0 {
                    if let Some(v) = self.history.value(link, c) {
                        vals[c as usize] = v;
                    }
                }
                bits >>= 1;
                c += 1;
            }
            start = old_start;
            flags = old_flags;
            link = prev;
        }
    }

    fn write_in_place(
        &self,
        txn: &mut IuhTxn,
        rid: u64,
        updates: &[(u32, u64)],
        delete: bool,
    ) -> Result<()> {
        if txn.state != TxnState::Active {
            return Err(Error::TxnNotActive(txn.id));
        }
        let pages = self.range_for(rid);
        let touch_mask = if delete {
            self.schema.all_data_bits()
        } else {
            updates.iter().fold(0u64, |m, (c, _)| m | (1 << c))
        };
        let _x = pages.latch_exclusive(&self.latch_cols(touch_mask));
        let off = (rid % RANGE) as u32;
        let start_cell = pages.cols[self.meta_col(Meta::START)]
            .read_slot(off)
            .ok_or(Error::UnknownRid(rid))?;
        if start_is_pending(start_cell) {
            let tid = start_pending_txn(start_cell);
            if tid != txn.id {
                match self.txns.status(tid).map(|s| s.state) {
                    Some(TxnState::Committed) => {
                        // lazily finalize
                        if let Some(st) = self.txns.status(tid) {
                            pages.cols[self.meta_col(Meta::START)].store(off, st.commit);
                        }
                    }
                    Some(TxnState::Aborted) => {}
                    _ => {
                        drop(_x);
                        self.abort_inner(txn);
                        return Err(Error::WriteWriteConflict(rid));
                    }
                }
            }
        }
        let flags = pages.cols[self.meta_col(Meta::FLAGS)]
            .read_slot(off)
            .unwrap_or(0);
        if flags & FLAG_DELETED != 0 {
            drop(_x);
            self.abort_inner(txn);
            return Err(Error::WriteWriteConflict(rid));
        }

        // displaced version (updated columns only) goes to history first
        let (mask, cols): (u64, Vec<(u32, u64)>) = if delete {
            let all = self.schema.all_data_bits();
            let vals = (0..self.schema.num_data_columns)
                .map(|c| (c, pages.cols[c as usize].read_slot(off).unwrap_or(0)))
                .collect();
            (all, vals)
        } else {
            let mut mask = 0u64;
            let mut vals = Vec::new();
            for (c, _) in updates {
                if *c >= self.schema.num_data_columns {
                    return Err(Error::InvalidParameter(format!("no such column {c}")));
                }
                mask |= 1 << c;
                vals.push((*c, pages.cols[*c as usize].read_slot(off).unwrap_or(0)));
            }
            (mask, vals)
        };
        let cur_start = pages.cols[self.meta_col(Meta::START)]
            .read_slot(off)
            .unwrap();
        let cur_link = pages.cols[self.meta_col(Meta::LINK)]
            .read_slot(off)
            .unwrap_or(NO_LINK);
        let hist = self.history.append(mask, &cols, cur_start, flags, cur_link);

        // then mutate in place
        if delete {
            pages.cols[self.meta_col(Meta::FLAGS)].store(off, flags | FLAG_DELETED);
        } else {
            for (c, v) in updates {
                pages.cols[*c as usize].store(off, *v);
            }
        }
        pages.cols[self.meta_col(Meta::START)].store(off, start_pending(txn.id));
        pages.cols[self.meta_col(Meta::LINK)].store(off, hist);
        txn.writes.push(IuhWrite::Update { rid, hist });
        Ok(())
    }

    fn abort_inner(&self, txn: &mut IuhTxn) {
        if !matches!(txn.state, TxnState::Active | TxnState::PreCommit) {
            return;
        }
        self.txns.set_aborted(txn.id);
        txn.state = TxnState::Aborted;
        for w in txn.writes.iter().rev() {
            match w {
                IuhWrite::Update { rid, hist } => {
                    let pages = self.range_for(*rid);
                    let (mask, _, _, _) = self.history.read(*hist);
                    let _x = pages.latch_exclusive(&self.latch_cols(mask));
                    let off = (*rid % RANGE) as u32;
                    let (mask, old_start, old_flags, prev) = self.history.read(*hist);
                    let mut bits = mask;
                    let mut c = 0u32;
                    while bits != 0 {
                        if bits & 1 != 0 {
                            if let Some(v) = self.history.value(*hist, c) {
                                pages.cols[c as usize].store(off, v);
                            }
                        }
                        bits >>= 1;
                        c += 1;
                    }
                    pages.cols[self.meta_col(Meta::START)].store(off, old_start);
                    pages.cols[self.meta_col(Meta::FLAGS)].store(off, old_flags);
                    pages.cols[self.meta_col(Meta::LINK)].store(off, prev);
                }
                IuhWrite::Insert { rid, key } => {
                    // an aborted insert stays invisible; free the key
                    self.primary.remove_if(*key, *rid);
                }
            }
        }
    }
}

impl Backend for Arc<IuhEngine> {
    fn name(&self) -> &'static str {
        "iuh"
    }

    fn begin(&self, _isolation: Isolation) -> BackendTxn {
        let t = self.clock.next();
        self.txns.register(t, t);
        BackendTxn::Iuh(IuhTxn {
            id: t,
            begin: t,
            state: TxnState::Active,
            writes: Vec::new(),
        })
    }

    fn insert(&self, txn: &mut BackendTxn, values: &[u64]) -> Result<u64> {
        let txn = as_iuh(txn)?;
        if values.len() != self.schema.num_data_columns as usize {
            return Err(Error::InvalidParameter("wrong column count".into()));
        }
        let key = values[self.schema.key_column as usize];
        let mut primary = self.primary.write_lock();
        if primary.contains_key(&key) {
            return Err(Error::DuplicateKey(key));
        }
        let rid = self.next_rid.fetch_add(1, Ordering::SeqCst);
        primary.insert(key, rid);
        drop(primary);
        let pages = self.range_for(rid);
        let _x = pages.latch_exclusive(&self.latch_cols(self.schema.all_data_bits()));
        let off = (rid % RANGE) as u32;
        for (c, v) in values.iter().enumerate() {
            pages.cols[c].store(off, *v);
        }
        pages.cols[self.meta_col(Meta::START)].store(off, start_pending(txn.id));
        pages.cols[self.meta_col(Meta::LINK)].store(off, NO_LINK);
        pages.cols[self.meta_col(Meta::FLAGS)].store(off, 0);
        txn.writes.push(IuhWrite::Insert { rid, key });
        Ok(rid)
    }

    fn update(&self, txn: &mut BackendTxn, key: u64, updates: &[(u32, u64)]) -> Result<()> {
        let rid = self.primary.get(key).ok_or(Error::UnknownRid(key))?;
        let txn = as_iuh(txn)?;
        self.write_in_place(txn, rid, updates, false)
    }

    fn delete(&self, txn: &mut BackendTxn, key: u64) -> Result<()> {
        let rid = self.primary.get(key).ok_or(Error::UnknownRid(key))?;
        let txn = as_iuh(txn)?;
        self.write_in_place(txn, rid, &[], true)
    }

    fn select(
        &self,
        txn: &mut BackendTxn,
        key: u64,
        mask: u64,
    ) -> Result<Option<Vec<Option<u64>>>> {
        let txn = as_iuh(txn)?;
        let rid = match self.primary.get(key) {
            Some(r) => r,
            None => return Ok(None),
        };
        let pages = self.range_for(rid);
        let _s = pages.latch_shared(&self.latch_cols(mask & self.schema.all_data_bits()));
        Ok(self
            .visible_row(&pages, rid, txn.begin, Some(txn.id))
            .map(|vals| {
                vals.into_iter()
                    .enumerate()
                    .map(|(c, v)| if mask & (1 << c) != 0 { Some(v) } else { None })
                    .collect()
            }))
    }

    fn scan_sum(&self, txn: &mut BackendTxn, column: u32, limit: u64) -> Result<u128> {
        let txn = as_iuh(txn)?;
        let mut sum: u128 = 0;
        let upper = limit.min(self.next_rid.load(Ordering::SeqCst));
        let nranges = upper.div_ceil(RANGE);
        for ridx in 0..nranges {
            let pages = self.range_for(ridx * RANGE);
            let _s = pages.latch_shared(&self.latch_cols(1 << column));
            let hi = ((ridx + 1) * RANGE).min(upper);
            for rid in ridx * RANGE..hi {
                if let Some(vals) = self.visible_row(&pages, rid, txn.begin, Some(txn.id)) {
                    sum += vals[column as usize] as u128;
                }
            }
        }
        Ok(sum)
    }

    fn commit(&self, txn: &mut BackendTxn) -> Result<u64> {
        let txn = as_iuh(txn)?;
        if txn.state != TxnState::Active {
            return Err(Error::IllegalTxnState);
        }
        let ct = self.clock.next();
        if !self.txns.set_precommit(txn.id, ct) {
            return Err(Error::IllegalTxnState);
        }
        self.txns.set_committed(txn.id);
        txn.state = TxnState::Committed;
        Ok(ct)
    }

    fn abort(&self, txn: &mut BackendTxn) {
        if let Ok(t) = as_iuh(txn) {
            self.abort_inner(t);
        }
    }

    fn state_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        let bound = self.clock.now() + 1;
        for (key, rid) in self
            .primary
            .range_keys(std::ops::Bound::Unbounded, std::ops::Bound::Unbounded)
        {
            let pages = self.range_for(rid);
            let _s = pages.latch_shared(&self.latch_cols(self.schema.all_data_bits()));
            if let Some(vals) = self.visible_row(&pages, rid, bound, None) {
                mix(key);
                for v in vals {
                    mix(v.wrapping_add(1));
                }
            }
        }
        h
    }
}

fn as_iuh(txn: &mut BackendTxn) -> Result<&mut IuhTxn> {
    match txn {
        BackendTxn::Iuh(t) => Ok(t),
        _ => Err(Error::IllegalTxnState),
    }
}
