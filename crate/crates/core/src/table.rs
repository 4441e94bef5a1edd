//! Logical record layer: schema, meta-data columns, insert/update/delete and
//! multi-version reads, index maintenance, and the write-write conflict
//! protocol over indirection cells.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::Sender;
use parking_lot::{Mutex, RwLock};

use crate::directory::{PageDirectory, PageKey};
use crate::error::{Error, Result};
use crate::index::{PrimaryIndex, SecondaryIndex};
use crate::indirection::{encode, IndirectionCell, Link};
use crate::page::{Page, PageKind};
use crate::range::{InsertBacking, InsertRange, UpdateRange};
use crate::rid::{is_tail_rid, Rid, RidAllocator};
use crate::schema::{
    start_is_pending, start_pending, SchemaEncoding, TableSchema, START_TOMBSTONE,
};
use crate::shared::Shared;
use crate::txn::{ObservedVersion, Txn, TxnState, Visibility, WriteRec};
use crate::wal::LogPayload;

/// Messages to a table's background merge worker.
pub(crate) enum MergeMsg {
    Range(crate::merge::MergeBatch),
    InsertRange(u64),
    Stop,
}

/// Snapshot of a range's current base-page handles, rebuilt when the
/// range's page generation moves (merge publishes, insert consolidation).
pub(crate) struct CachedRangePages {
    pub generation: u64,
    per: u32,
    pages: Vec<Option<Arc<Page>>>,
}

impl CachedRangePages {
    #[inline]
    pub fn page(&self, col: u32, idx: u32) -> Option<&Arc<Page>> {
        self.pages
            .get((col * self.per + idx) as usize)
            .and_then(|p| p.as_ref())
    }
}

/// One materialized record version returned by reads.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordVersion {
    pub base_rid: Rid,
    /// Resolved start time of the visible version.
    pub start_time: u64,
    /// Per data column; `None` for columns outside the requested mask.
    pub values: Vec<Option<u64>>,
}

pub(crate) struct ReadOutcome {
    pub observed: ObservedVersion,
    pub speculative_writer: Option<u64>,
    pub values: Option<Vec<Option<u64>>>,
    pub locations: u64,
}

enum StartRes {
    Committed(u64),
    Own,
    PreCommit,
    InFlight,
    Aborted,
    Tombstone,
}

pub struct Table {
    pub table_id: u32,
    pub schema: TableSchema,
    pub(crate) shared: Arc<Shared>,
    pub(crate) dir: PageDirectory,
    pub(crate) rids: RidAllocator,
    pub(crate) ranges: RwLock<Vec<Arc<UpdateRange>>>,
    pub(crate) insert_ranges: RwLock<Vec<Arc<InsertRange>>>,
    active_ir: AtomicU64,
    rotate_lock: Mutex<()>,
    pub(crate) primary: PrimaryIndex,
    pub(crate) secondaries: RwLock<BTreeMap<u32, Arc<SecondaryIndex>>>,
    pub(crate) merge_tx: Mutex<Option<Sender<MergeMsg>>>,
    pub(crate) merge_paused: Arc<AtomicBool>,
    pub range_size: u64,
}

impl Table {
    pub(crate) fn create(
        shared: Arc<Shared>,
        table_id: u32,
        num_data_columns: u32,
        key_column: u32,
        range_size: u64,
    ) -> Result<Arc<Table>> {
        let t = Self::create_raw(shared, table_id, num_data_columns, key_column, range_size)?;
        t.open_insert_range()?;
        Ok(t)
    }

    /// Table shell without a pre-allocated insert range (recovery installs
    /// ranges from the log).
    pub(crate) fn create_raw(
        shared: Arc<Shared>,
        table_id: u32,
        num_data_columns: u32,
        key_column: u32,
        range_size: u64,
    ) -> Result<Arc<Table>> {
        if !range_size.is_power_of_two() || !(1 << 8..=1 << 20).contains(&range_size) {
            return Err(Error::InvalidParameter(format!(
                "range_size must be a power of two in [2^8, 2^20], got {range_size}"
            )));
        }
        let schema = TableSchema::new(table_id, num_data_columns, key_column)?;
        let table = Arc::new(Table {
            table_id,
            schema,
            shared,
            dir: PageDirectory::new(),
            rids: RidAllocator::new(),
            ranges: RwLock::new(Vec::new()),
            insert_ranges: RwLock::new(Vec::new()),
            active_ir: AtomicU64::new(0),
            rotate_lock: Mutex::new(()),
            primary: PrimaryIndex::new(),
            secondaries: RwLock::new(BTreeMap::new()),
            merge_tx: Mutex::new(None),
            merge_paused: Arc::new(AtomicBool::new(false)),
            range_size,
        });
        Ok(table)
    }

    // ---- layout helpers -------------------------------------------------

    pub(crate) fn base_cap(&self) -> u32 {
        (self.shared.config.base_page_slots as u64).min(self.range_size) as u32
    }

    fn tail_cap(&self) -> u32 {
        self.shared.config.tail_page_slots
    }

    fn base_loc(&self, slot: u32) -> (u32, u32) {
        let cap = self.base_cap();
        (slot / cap, slot % cap)
    }

    fn tail_loc(&self, seq: u64) -> (u32, u32) {
        let cap = self.tail_cap() as u64;
        (((seq - 1) / cap) as u32, ((seq - 1) % cap) as u32)
    }

    pub(crate) fn range_of(&self, base_rid: Rid) -> Result<Arc<UpdateRange>> {
        if is_tail_rid(base_rid) {
            return Err(Error::UnknownRid(base_rid));
        }
        let idx = (base_rid / self.range_size) as usize;
        let r = self
            .ranges
            .read()
            .get(idx)
            .cloned()
            .ok_or(Error::UnknownRid(base_rid))?;
        // issued check for rids inside an unmerged insert chunk
        if let Some(b) = r.insert_backing() {
            let irs = self.insert_ranges.read();
            let ir = irs.get(b.ir_id as usize).ok_or(Error::UnknownRid(base_rid))?;
            if base_rid >= ir.base_lo + ir.issued() {
                return Err(Error::UnknownRid(base_rid));
            }
        } else if base_rid >= self.rids.next_base_hint() {
            return Err(Error::UnknownRid(base_rid));
        }
        Ok(r)
    }

    pub(crate) fn range_by_id(&self, range_id: u64) -> Option<Arc<UpdateRange>> {
        self.ranges.read().get(range_id as usize).cloned()
    }

    pub(crate) fn insert_range_by_id(&self, ir_id: u64) -> Option<Arc<InsertRange>> {
        self.insert_ranges.read().get(ir_id as usize).cloned()
    }

    pub(crate) fn base_page(&self, column: u32, range_id: u64, idx: u32) -> Option<Arc<Page>> {
        self.dir.get(PageKey::Base { column, range_id, idx })
    }

    /// Current base-page snapshot for a range; one lock plus one clone on
    /// the hot path, rebuilt only when the page generation moves.
    pub(crate) fn cached_pages(&self, range: &UpdateRange) -> Arc<CachedRangePages> {
        let gen = range.page_generation.load(Ordering::Acquire);
        {
            let c = range.page_cache.read();
            if let Some(c) = &*c {
                if c.generation == gen {
                    return Arc::clone(c);
                }
            }
        }
        let per = (self.range_size / self.base_cap() as u64) as u32;
        let total = self.schema.total_columns();
        let mut pages = Vec::with_capacity((total * per) as usize);
        for col in 0..total {
            for idx in 0..per {
                pages.push(self.base_page(col, range.range_id, idx));
            }
        }
        let built = Arc::new(CachedRangePages {
            generation: gen,
            per,
            pages,
        });
        *range.page_cache.write() = Some(Arc::clone(&built));
        built
    }

    fn tail_cache_get(&self, range: &UpdateRange, column: u32, idx: u32) -> Option<Arc<Page>> {
        let cache = range.tail_cache.read();
        cache
            .get(column as usize)?
            .get(idx as usize)?
            .as_ref()
            .cloned()
    }

    fn tail_cache_put(&self, range: &UpdateRange, column: u32, idx: u32, page: Arc<Page>) {
        let mut cache = range.tail_cache.write();
        let col = column as usize;
        if cache.len() <= col {
            cache.resize_with(col + 1, Vec::new);
        }
        if cache[col].len() <= idx as usize {
            cache[col].resize_with(idx as usize + 1, || None);
        }
        cache[col][idx as usize] = Some(page);
    }

    fn tail_page_mut(&self, range: &UpdateRange, column: u32, seq: u64) -> Arc<Page> {
        let (idx, _) = self.tail_loc(seq);
        if let Some(p) = self.tail_cache_get(range, column, idx) {
            return p;
        }
        let cap = self.tail_cap();
        let range_id = range.range_id;
        let page = self.dir.get_or_insert_with(
            PageKey::Tail { column, range_id, idx },
            || Arc::new(Page::new(PageKind::Tail, column, range_id, cap, 0)),
        );
        self.tail_cache_put(range, column, idx, Arc::clone(&page));
        page
    }

    /// All pages a tail record touches (data columns of `values` plus the
    /// meta columns), fetched under one cache-lock pass.
    fn tail_record_pages(
        &self,
        range: &UpdateRange,
        seq: u64,
        values: &[(u32, u64)],
        out: &mut Vec<Arc<Page>>,
    ) {
        let (idx, _) = self.tail_loc(seq);
        out.clear();
        let metas = [
            self.schema.indirection_col(),
            self.schema.schema_col(),
            self.schema.start_col(),
            self.schema.base_rid_col(),
        ];
        let mut missing = false;
        {
            let cache = range.tail_cache.read();
            let fetch = |col: u32| -> Option<Arc<Page>> {
                cache
                    .get(col as usize)?
                    .get(idx as usize)?
                    .as_ref()
                    .cloned()
            };
            for (c, _) in values {
                match fetch(*c) {
                    Some(p) => out.push(p),
                    None => {
                        missing = true;
                        break;
                    }
                }
            }
            if !missing {
                for m in metas {
                    match fetch(m) {
                        Some(p) => out.push(p),
                        None => {
                            missing = true;
                            break;
                        }
                    }
                }
            }
        }
        if missing {
            out.clear();
            for (c, _) in values {
                out.push(self.tail_page_mut(range, *c, seq));
            }
            for m in metas {
                out.push(self.tail_page_mut(range, m, seq));
            }
        }
    }

    pub(crate) fn tail_page(&self, range: &UpdateRange, column: u32, seq: u64) -> Option<Arc<Page>> {
        let (idx, _) = self.tail_loc(seq);
        if let Some(p) = self.tail_cache_get(range, column, idx) {
            return Some(p);
        }
        let page = self.dir.get(PageKey::Tail {
            column,
            range_id: range.range_id,
            idx,
        })?;
        self.tail_cache_put(range, column, idx, Arc::clone(&page));
        Some(page)
    }

    fn tt_page_mut(&self, column: u32, ir_id: u64, slot: u64) -> Arc<Page> {
        let cap = self.tail_cap();
        let idx = (slot / cap as u64) as u32;
        self.dir.get_or_insert_with(
            PageKey::TableTail { column, ir_id, idx },
            || Arc::new(Page::new(PageKind::Tail, column, ir_id, cap, 0)),
        )
    }

    pub(crate) fn tt_page(&self, column: u32, ir_id: u64, slot: u64) -> Option<Arc<Page>> {
        let idx = (slot / self.tail_cap() as u64) as u32;
        self.dir.get(PageKey::TableTail { column, ir_id, idx })
    }

    /// The indirection cell of a base record lives in a pre-allocated base
    /// page that is never replaced, only CAS-updated.
    pub(crate) fn ind_cell_loc(&self, range: &UpdateRange, base_rid: Rid) -> (Arc<Page>, u32) {
        let (idx, off) = self.base_loc(range.slot_of(base_rid));
        let page = self
            .cached_pages(range)
            .page(self.schema.indirection_col(), idx)
            .cloned()
            .expect("indirection page exists for every range");
        (page, off)
    }

    /// Read a base-record cell, honoring insert-range backing.
    pub(crate) fn base_cell(&self, range: &UpdateRange, column: u32, base_rid: Rid) -> Option<u64> {
        if let Some(b) = range.insert_backing() {
            let ir = self.insert_range_by_id(b.ir_id)?;
            let slot = base_rid - ir.base_lo;
            let page = self.tt_page(column, b.ir_id, slot)?;
            page.assert_live();
            page.read_slot((slot % self.tail_cap() as u64) as u32)
        } else {
            let (idx, off) = self.base_loc(range.slot_of(base_rid));
            let cache = self.cached_pages(range);
            let page = cache.page(column, idx)?;
            page.assert_live();
            page.read_slot(off)
        }
    }

    /// Location of the base record's start-time cell (page + offset), for
    /// resolution plus lazy finalization.
    fn base_start_loc(&self, range: &UpdateRange, base_rid: Rid) -> Option<(Arc<Page>, u32)> {
        if let Some(b) = range.insert_backing() {
            let ir = self.insert_range_by_id(b.ir_id)?;
            let slot = base_rid - ir.base_lo;
            let page = self.tt_page(self.schema.start_col(), b.ir_id, slot)?;
            Some((page, (slot % self.tail_cap() as u64) as u32))
        } else {
            let (idx, off) = self.base_loc(range.slot_of(base_rid));
            let page = self.base_page(self.schema.start_col(), range.range_id, idx)?;
            Some((page, off))
        }
    }

    fn resolve_start(&self, page: &Page, off: u32, own: Option<u64>) -> StartRes {
        let cell = match page.read_slot(off) {
            Some(c) => c,
            None => return StartRes::Tombstone,
        };
        if cell == START_TOMBSTONE {
            return StartRes::Tombstone;
        }
        if !start_is_pending(cell) {
            return StartRes::Committed(cell);
        }
        let tid = crate::schema::start_pending_txn(cell);
        if own == Some(tid) {
            return StartRes::Own;
        }
        match self.shared.txns.status(tid) {
            Some(st) => match st.state {
                TxnState::Committed => {
                    // lazy swap: first post-commit reader persists commit time
                    page.cas_cell(off, cell, st.commit);
                    StartRes::Committed(st.commit)
                }
                TxnState::PreCommit => StartRes::PreCommit,
                TxnState::Active => StartRes::InFlight,
                TxnState::Aborted => StartRes::Aborted,
            },
            None => StartRes::InFlight,
        }
    }

    // ---- insert ranges --------------------------------------------------

    fn open_insert_range(&self) -> Result<Arc<InsertRange>> {
        let chunks = (self.shared.config.insert_range_size / self.range_size).max(1);
        let span = chunks * self.range_size;
        let base_lo = self.rids.allocate_base_span(span)?;
        let tt_first = self.rids.allocate_tail_block(span)?;
        let ir = self.install_insert_range(base_lo, base_lo + span, tt_first);
        if self.shared.logging_active() {
            if let Some(wal) = &self.shared.wal {
                wal.append(&LogPayload::DirectoryOp(
                    crate::wal::DirectoryOp::InsertRangeOpened {
                        table: self.table_id,
                        ir_id: ir.ir_id,
                        base_lo: ir.base_lo,
                        base_hi: ir.base_hi,
                        tt_first_rid: ir.tt_first_rid,
                    },
                ))?;
            }
        }
        Ok(ir)
    }

    /// Materialize an insert range plus the update-range structs and
    /// indirection pages covering its span (also the recovery replay path).
    pub(crate) fn install_insert_range(
        &self,
        base_lo: Rid,
        base_hi: Rid,
        tt_first: Rid,
    ) -> Arc<InsertRange> {
        let ir_id = {
            let mut irs = self.insert_ranges.write();
            let ir_id = irs.len() as u64;
            irs.push(Arc::new(InsertRange::new(ir_id, base_lo, base_hi, tt_first)));
            ir_id
        };
        {
            let mut ranges = self.ranges.write();
            let first_range = base_lo / self.range_size;
            let chunks = (base_hi - base_lo) / self.range_size;
            for k in 0..chunks {
                let range_id = first_range + k;
                debug_assert_eq!(ranges.len() as u64, range_id);
                let lo = range_id * self.range_size;
                ranges.push(Arc::new(UpdateRange::new(
                    range_id,
                    lo,
                    lo + self.range_size,
                    Some(InsertBacking { ir_id }),
                )));
                self.create_indirection_pages(range_id);
            }
        }
        self.active_ir.store(ir_id, Ordering::SeqCst);
        self.insert_range_by_id(ir_id).unwrap()
    }

    fn create_indirection_pages(&self, range_id: u64) {
        let cap = self.base_cap();
        let pages = (self.range_size / cap as u64) as u32;
        for idx in 0..pages {
            self.dir.insert(
                PageKey::Base {
                    column: self.schema.indirection_col(),
                    range_id,
                    idx,
                },
                Arc::new(Page::new_prefilled(
                    self.schema.indirection_col(),
                    range_id,
                    cap,
                    encode(Link::Null),
                )),
            );
        }
    }

    pub(crate) fn active_insert_range(&self) -> Arc<InsertRange> {
        let id = self.active_ir.load(Ordering::SeqCst);
        self.insert_range_by_id(id).expect("active insert range")
    }

    /// Allocate a fresh, empty update range: base-page entries only, no
    /// tail pages (those appear lazily on the first update). The span must
    /// match the table's configured range size.
    pub fn allocate_update_range(&self, span: u64) -> Result<Arc<UpdateRange>> {
        if !span.is_power_of_two() || !(1 << 8..=1 << 20).contains(&span) {
            return Err(Error::InvalidParameter(format!(
                "span must be a power of two in [2^8, 2^20], got {span}"
            )));
        }
        if span != self.range_size {
            return Err(Error::InvalidParameter(format!(
                "span {span} must match the table's range size {}",
                self.range_size
            )));
        }
        let base_lo = self.rids.allocate_base_span(span)?;
        let range_id = base_lo / span;
        let cap = self.base_cap();
        let pages = (span / cap as u64) as u32;
        {
            let mut ranges = self.ranges.write();
            debug_assert_eq!(ranges.len() as u64, range_id);
            ranges.push(Arc::new(UpdateRange::new(range_id, base_lo, base_lo + span, None)));
        }
        self.create_indirection_pages(range_id);
        for col in (0..self.schema.num_data_columns)
            .chain([self.schema.schema_col(), self.schema.start_col(), self.schema.last_updated_col()])
        {
            for idx in 0..pages {
                self.dir.insert(
                    PageKey::Base { column: col, range_id, idx },
                    Arc::new(Page::new(PageKind::Base, col, range_id, cap, 0)),
                );
            }
        }
        Ok(self.range_by_id(range_id).unwrap())
    }

    /// Pre-allocate a block of descending tail rids bound to a range.
    pub fn allocate_tail_rids(&self, range_id: u64, count: u64) -> Result<crate::range::TailBlock> {
        let range = self
            .range_by_id(range_id)
            .ok_or(Error::UnknownRid(range_id))?;
        range.preallocate_tail_block(count, &self.rids)
    }

    /// Close the active insert range and open a fresh one. Used when the
    /// range fills and by tests that consolidate a partially-filled range.
    pub fn rotate_insert_range(&self) -> Result<()> {
        let _g = self.rotate_lock.lock();
        let cur = self.active_insert_range();
        if !cur.is_closed() {
            cur.close();
            if self.shared.logging_active() {
                if let Some(wal) = &self.shared.wal {
                    wal.append(&LogPayload::DirectoryOp(
                        crate::wal::DirectoryOp::InsertRangeRotated {
                            table: self.table_id,
                            ir_id: cur.ir_id,
                        },
                    ))?;
                }
            }
            self.open_insert_range()?;
            self.request_insert_merge(&cur);
        }
        Ok(())
    }

    pub(crate) fn request_insert_merge(&self, ir: &InsertRange) {
        if !ir.merge_eligible() || self.shared.replaying.load(Ordering::Acquire) {
            return;
        }
        if let Some(tx) = self.merge_tx.lock().as_ref() {
            let _ = tx.send(MergeMsg::InsertRange(ir.ir_id));
        }
    }

    // ---- write paths ----------------------------------------------------

    /// Insert a full record. The row lives in table-level tail pages at the
    /// tail rid aligned with its reserved base rid until the insert range is
    /// consolidated.
    pub fn insert(&self, txn: &mut Txn, values: &[u64]) -> Result<Rid> {
        if !txn.is_active() {
            return Err(Error::TxnNotActive(txn.id));
        }
        if values.len() != self.schema.num_data_columns as usize {
            return Err(Error::InvalidParameter(format!(
                "expected {} column values, got {}",
                self.schema.num_data_columns,
                values.len()
            )));
        }
        let key = values[self.schema.key_column as usize];

        let (ir, base_rid, tt_rid, slot) = {
            let mut primary = self.primary.write_lock();
            if let Some(&existing) = primary.get(&key) {
                if self.key_target_live(existing) {
                    return Err(Error::DuplicateKey(key));
                }
            }
            let (ir, s, b, t) = loop {
                let ir = self.active_insert_range();
                match ir.reserve_slot() {
                    Some((s, b, t)) => break (ir, s, b, t),
                    None => self.rotate_insert_range()?,
                }
            };
            primary.insert(key, b);
            (ir, b, t, s)
        };

        let cap = self.tail_cap() as u64;
        let off = (slot % cap) as u32;
        let start_cell = start_pending(txn.id);
        let ind_cell = encode(Link::Base(base_rid));

        // all data columns plus meta columns, left to right
        let mut written_pages = Vec::new();
        for col in 0..self.schema.num_data_columns {
            let p = self.tt_page_mut(col, ir.ir_id, slot);
            p.write_slot(off, values[col as usize])?;
            written_pages.push(p);
        }
        let metas = [
            (self.schema.indirection_col(), ind_cell),
            (self.schema.schema_col(), SchemaEncoding::new(0).cell()),
            (self.schema.start_col(), start_cell),
            (self.schema.base_rid_col(), base_rid),
        ];
        for (col, v) in metas {
            let p = self.tt_page_mut(col, ir.ir_id, slot);
            p.write_slot(off, v)?;
            written_pages.push(p);
        }

        let _ = self.log_tail_append(
            txn,
            base_rid,
            tt_rid,
            slot + 1,
            true,
            SchemaEncoding::new(0),
            start_cell,
            ind_cell,
            (0..self.schema.num_data_columns)
                .map(|c| (c, values[c as usize]))
                .collect(),
            &written_pages,
            (slot / cap) as u32,
        )?;

        txn.writeset.push(WriteRec::Insert {
            table: self.table_id,
            base_rid,
            ir_id: ir.ir_id,
            key,
        });
        if ir.is_full() {
            // opportunistic rotation so the next insert starts cleanly
            let _ = self.rotate_insert_range();
        }
        Ok(base_rid)
    }

    /// Whether the record a primary entry targets is still something a new
    /// insert of the same key must respect (live, in-flight, or pre-commit).
    fn key_target_live(&self, base_rid: Rid) -> bool {
        let range = match self.range_of(base_rid) {
            Ok(r) => r,
            Err(_) => return false,
        };
        // base record state
        let (spage, soff) = match self.base_start_loc(&range, base_rid) {
            Some(x) => x,
            None => return false,
        };
        match self.resolve_start(&spage, soff, None) {
            StartRes::Aborted | StartRes::Tombstone => return false,
            StartRes::InFlight | StartRes::PreCommit | StartRes::Own => return true,
            StartRes::Committed(_) => {}
        }
        // committed: live unless the latest committed version is a delete
        let (ipage, ioff) = self.ind_cell_loc(&range, base_rid);
        let mut link = IndirectionCell(ipage.cell(ioff)).load();
        loop {
            match link {
                Link::Null | Link::Base(_) => return true,
                Link::Tail(trid) => {
                    let seq = match range.seq_of_rid(trid) {
                        Some(s) => s,
                        None => return true,
                    };
                    if seq <= range.compressed_upto.load(Ordering::Acquire) {
                        let hist = range.historic.read();
                        for hp in hist.iter().rev() {
                            if let Some(rec) = hp.find(base_rid) {
                                if let Some(i) = rec.version_at(u64::MAX) {
                                    return !rec.version_deleted(i);
                                }
                            }
                        }
                        return true;
                    }
                    if range.is_aborted_seq(seq) {
                        link = self.tail_backlink(&range, seq);
                        continue;
                    }
                    let rec = self.tail_meta(&range, seq);
                    match self.resolve_start_cell_value(rec.start_cell, None) {
                        StartRes::Committed(_) => {
                            return !rec.enc.is_delete_record();
                        }
                        StartRes::Aborted => {
                            link = rec.backlink;
                            continue;
                        }
                        // an in-flight writer holds the head: treat as live
                        _ => return true,
                    }
                }
            }
        }
    }

    fn resolve_start_cell_value(&self, cell: u64, own: Option<u64>) -> StartRes {
        if cell == START_TOMBSTONE {
            return StartRes::Tombstone;
        }
        if !start_is_pending(cell) {
            return StartRes::Committed(cell);
        }
        let tid = crate::schema::start_pending_txn(cell);
        if own == Some(tid) {
            return StartRes::Own;
        }
        match self.shared.txns.status(tid) {
            Some(st) => match st.state {
                TxnState::Committed => StartRes::Committed(st.commit),
                TxnState::PreCommit => StartRes::PreCommit,
                TxnState::Active => StartRes::InFlight,
                TxnState::Aborted => StartRes::Aborted,
            },
            None => StartRes::InFlight,
        }
    }

    /// Update a subset of data columns. Appends a snapshot tail record with
    /// the pre-update originals for columns updated for the first time, then
    /// one value record (cumulative when enabled), and publishes the new
    /// head into the indirection cell.
    pub fn update(&self, txn: &mut Txn, base_rid: Rid, updates: &[(u32, u64)]) -> Result<Rid> {
        if updates.is_empty() {
            return Err(Error::InvalidParameter("empty update".into()));
        }
        let mut mask = 0u64;
        for (c, _) in updates {
            if *c >= self.schema.num_data_columns {
                return Err(Error::InvalidParameter(format!("no such column {c}")));
            }
            if *c == self.schema.key_column {
                return Err(Error::InvalidParameter(
                    "primary key column cannot be updated".into(),
                ));
            }
            mask |= 1 << c;
        }
        self.write_record(txn, base_rid, Some((mask, updates)))
    }

    /// Delete a record: an update whose tail record carries the all-clear
    /// column bitmap and no explicit values.
    pub fn delete(&self, txn: &mut Txn, base_rid: Rid) -> Result<Rid> {
        self.write_record(txn, base_rid, None)
    }

    fn write_record(
        &self,
        txn: &mut Txn,
        base_rid: Rid,
        update: Option<(u64, &[(u32, u64)])>,
    ) -> Result<Rid> {
        if !txn.is_active() {
            return Err(Error::TxnNotActive(txn.id));
        }
        let range = self.range_of(base_rid)?;

        // two-step write-write conflict detection: latch bit first. The
        // latch is short-lived mutual exclusion, so a bounded wait rides out
        // a descheduled holder before calling it a conflict.
        let (ipage, ioff) = self.ind_cell_loc(&range, base_rid);
        let cell = IndirectionCell(ipage.cell(ioff));
        let mut latched = cell.try_latch();
        let mut spins = 0;
        while latched.is_none() && spins < 64 {
            std::thread::yield_now();
            latched = cell.try_latch();
            spins += 1;
        }
        let prev = match latched {
            Some(p) => p,
            None => {
                self.conflict_abort(txn)?;
                return Err(Error::WriteWriteConflict(base_rid));
            }
        };
        let unlatch_guard = LatchGuard { cell: ipage.cell(ioff), armed: true };

        // head state: a competing uncommitted writer aborts us; a committed
        // delete means the record is gone. The same walk yields the chain's
        // updated-column union and the cumulative carry in one pass.
        let analysis = match self.analyze_head(txn, &range, base_rid, prev) {
            HeadAnalysis::Ok(info) => info,
            HeadAnalysis::Conflict => {
                drop(unlatch_guard);
                self.conflict_abort(txn)?;
                return Err(Error::WriteWriteConflict(base_rid));
            }
            HeadAnalysis::Unknown => {
                drop(unlatch_guard);
                return Err(Error::UnknownRid(base_rid));
            }
        };

        // (encoding, explicit cells, snapshot record to prepend)
        type SnapshotRec = Option<(SchemaEncoding, Vec<(u32, u64)>, u64)>;
        let (enc_new, explicit, snapshot): (SchemaEncoding, Vec<(u32, u64)>, SnapshotRec) =
            match update {
                Some((mask, updates)) => {
                    let union = if self.shared.config.cumulative_updates {
                        analysis.union_bits
                            | self
                                .base_cell(&range, self.schema.schema_col(), base_rid)
                                .map(|c| SchemaEncoding::from_cell(c).bits())
                                .unwrap_or(0)
                    } else {
                        self.updated_union(&range, base_rid, prev)
                    };
                    let first_time = mask & !union;
                    let snapshot = if first_time != 0 {
                        let mut originals = Vec::new();
                        let mut bits = first_time;
                        let mut c = 0u32;
                        while bits != 0 {
                            if bits & 1 != 0 {
                                let v = self
                                    .base_cell(&range, c, base_rid)
                                    .ok_or(Error::UnknownRid(base_rid))?;
                                originals.push((c, v));
                            }
                            bits >>= 1;
                            c += 1;
                        }
                        let orig_start = self.base_original_start(&range, base_rid)?;
                        Some((SchemaEncoding::snapshot(first_time), originals, orig_start))
                    } else {
                        None
                    };
                    // cumulative value record carries columns updated since
                    // the last cumulation reset
                    let mut cells: Vec<(u32, u64)> = updates.to_vec();
                    let mut bits = mask;
                    for (c, v) in &analysis.carry {
                        if bits & (1 << c) == 0 {
                            cells.push((*c, *v));
                            bits |= 1 << c;
                        }
                    }
                    cells.sort_unstable_by_key(|(c, _)| *c);
                    (SchemaEncoding::new(bits), cells, snapshot)
                }
                None => (SchemaEncoding::new(0), Vec::new(), None),
            };

        // deferred index maintenance bookkeeping
        let mut index_old = Vec::new();
        let mut index_new = Vec::new();
        if let Some((mask, updates)) = update {
            let secondaries = self.secondaries.read();
            if !secondaries.is_empty() {
                for (c, v) in updates {
                    if let Some(idx) = secondaries.get(c) {
                        if let Some(old) =
                            self.committed_col_value(&range, base_rid, prev, *c)
                        {
                            index_old.push((*c, old));
                        }
                        idx.insert(*v, base_rid);
                        index_new.push((*c, *v));
                    }
                }
            }
            let _ = mask;
        }

        // allocate adjacent sequence numbers for the snapshot/value pair
        let n = 1 + snapshot.is_some() as u64;
        let (seqs, fresh_blocks) =
            range.allocate_tail(n, &self.rids, self.shared.config.tail_block_rids)?;
        if self.shared.logging_active() {
            if let Some(wal) = &self.shared.wal {
                for b in &fresh_blocks {
                    wal.append(&LogPayload::DirectoryOp(
                        crate::wal::DirectoryOp::TailBlockAllocated {
                            table: self.table_id,
                            range_id: range.range_id,
                            first_rid: b.first_rid,
                            len: b.len,
                            first_seq: b.first_seq,
                        },
                    ))?;
                }
            }
        }
        let mut written_pages = Vec::new();
        let mut all_seqs = [0u64; 2];
        let mut nseqs = 0u8;

        // the first tail record of a chain points back at its base record
        let mut backlink = match prev {
            Link::Null => Link::Base(base_rid),
            other => other,
        };
        if let Some((senc, svals, stime)) = &snapshot {
            let (seq, rid) = seqs[0];
            self.write_tail_record(
                txn,
                &range,
                seq,
                rid,
                base_rid,
                *senc,
                *stime,
                backlink,
                svals,
                &mut written_pages,
            )?;
            all_seqs[nseqs as usize] = seq;
            nseqs += 1;
            backlink = Link::Tail(rid);
        }
        let (vseq, vrid) = *seqs.last().unwrap();
        let last_lsn = self.write_tail_record(
            txn,
            &range,
            vseq,
            vrid,
            base_rid,
            enc_new,
            start_pending(txn.id),
            backlink,
            &explicit,
            &mut written_pages,
        )?;
        all_seqs[nseqs as usize] = vseq;
        nseqs += 1;

        // publish the new head and release the latch in one store; with
        // logging on, the indirection page's pageLSN is maintained by the
        // ownership-relaying protocol under a compatible shared latch
        if let Some(lsn) = last_lsn {
            let theta = self.shared.config.theta_s;
            ipage.or.acquire_shared(theta);
            cell.publish_and_unlatch(Link::Tail(vrid));
            std::mem::forget(unlatch_guard);
            ipage.or.record_write(lsn, |owner| ipage.set_page_lsn(owner));
            let slot_idx = range.slot_of(base_rid) / self.base_cap();
            ipage.or.try_force_drain(theta, || {
                if let Some(path) = self.shared.page_image_path(
                    self.table_id,
                    "i",
                    self.schema.indirection_col(),
                    range.range_id,
                    slot_idx,
                ) {
                    let _ = self.shared.persist_page(&path, &ipage);
                }
            });
        } else {
            cell.publish_and_unlatch(Link::Tail(vrid));
            std::mem::forget(unlatch_guard);
        }

        txn.writeset.push(WriteRec::Update {
            table: self.table_id,
            base_rid,
            range_id: range.range_id,
            seqs: all_seqs,
            nseqs,
            new_head: vrid,
            prev_link: prev,
            index_old,
            index_new,
        });
        Ok(vrid)
    }

    #[allow(clippy::too_many_arguments)]
    fn write_tail_record(
        &self,
        txn: &Txn,
        range: &UpdateRange,
        seq: u64,
        tail_rid: Rid,
        base_rid: Rid,
        enc: SchemaEncoding,
        start_cell: u64,
        backlink: Link,
        values: &[(u32, u64)],
        written_pages: &mut Vec<Arc<Page>>,
    ) -> Result<Option<u64>> {
        let logging = self.shared.logging_active();
        let (_, off) = self.tail_loc(seq);
        let mut pages = Vec::with_capacity(values.len() + 4);
        self.tail_record_pages(range, seq, values, &mut pages);
        let ind_cell = encode(backlink);
        for (i, (_, v)) in values.iter().enumerate() {
            pages[i].write_slot(off, *v)?;
        }
        let meta_vals = [ind_cell, enc.cell(), start_cell, base_rid];
        for (k, v) in meta_vals.iter().enumerate() {
            pages[values.len() + k].write_slot(off, *v)?;
        }
        if !logging {
            return Ok(None);
        }
        let lsn = self.log_tail_append(
            txn,
            base_rid,
            tail_rid,
            seq,
            false,
            enc,
            start_cell,
            ind_cell,
            values.to_vec(),
            &pages,
            self.tail_loc(seq).0,
        )?;
        written_pages.extend(pages);
        Ok(lsn)
    }

    /// Redo logging plus the ownership-relaying pageLSN protocol over the
    /// pages an append touched (acquired in column order by the callers).
    #[allow(clippy::too_many_arguments)]
    fn log_tail_append(
        &self,
        txn: &Txn,
        base_rid: Rid,
        tail_rid: Rid,
        seq: u64,
        table_level: bool,
        enc: SchemaEncoding,
        start_cell: u64,
        indirection_cell: u64,
        cols: Vec<(u32, u64)>,
        pages: &[Arc<Page>],
        page_idx: u32,
    ) -> Result<Option<u64>> {
        if !self.shared.logging_active() {
            return Ok(None);
        }
        let wal = self.shared.wal.as_ref().unwrap();
        for p in pages {
            p.or.acquire_shared(0);
        }
        let lsn = wal.append(&LogPayload::TailAppend {
            table: self.table_id,
            txn: txn.id,
            base_rid,
            tail_rid,
            seq,
            table_level,
            enc: enc.cell(),
            start_cell,
            indirection_cell,
            cols,
        })?;
        for p in pages {
            p.or.record_write(lsn, |owner| p.set_page_lsn(owner));
            if p.is_full() {
                self.flush_full_tail_page(p, table_level, page_idx);
            }
        }
        Ok(Some(lsn))
    }

    /// A full tail page naturally drains its writers; flush its image.
    fn flush_full_tail_page(&self, page: &Arc<Page>, table_level: bool, page_idx: u32) {
        let tag = if table_level { "tt" } else { "t" };
        if let Some(path) = self.shared.page_image_path(
            self.table_id,
            tag,
            page.column,
            page.range_id,
            page_idx,
        ) {
            page.or.acquire_exclusive();
            let _ = self.shared.persist_page(&path, page);
            page.or.release_exclusive();
        }
    }

    fn conflict_abort(&self, txn: &mut Txn) -> Result<()> {
        self.shared.metrics.write_conflicts.fetch_add(1, Ordering::Relaxed);
        crate::engine::abort_internal(&self.shared, txn);
        Ok(())
    }

    // ---- chain inspection helpers ---------------------------------------

    fn tail_meta(&self, range: &UpdateRange, seq: u64) -> TailMeta {
        let (_, off) = self.tail_loc(seq);
        let enc = self
            .tail_page(range, self.schema.schema_col(), seq)
            .and_then(|p| {
                p.assert_live();
                p.read_slot(off)
            })
            .map(SchemaEncoding::from_cell)
            .unwrap_or(SchemaEncoding(0));
        let backlink = self
            .tail_page(range, self.schema.indirection_col(), seq)
            .and_then(|p| p.read_slot(off))
            .map(crate::indirection::decode)
            .unwrap_or(Link::Null);
        let start_cell = self
            .tail_page(range, self.schema.start_col(), seq)
            .and_then(|p| p.read_slot(off))
            .unwrap_or(START_TOMBSTONE);
        TailMeta { enc, backlink, start_cell }
    }

    fn tail_backlink(&self, range: &UpdateRange, seq: u64) -> Link {
        self.tail_meta(range, seq).backlink
    }

    pub(crate) fn tail_value(&self, range: &UpdateRange, seq: u64, col: u32) -> Option<u64> {
        let (_, off) = self.tail_loc(seq);
        self.tail_page(range, col, seq).and_then(|p| {
            p.assert_live();
            p.read_slot(off)
        })
    }

    /// Union of data columns ever updated on this record (committed or own
    /// in-flight). With cumulation on, the newest value record carries every
    /// column updated since the cumulation reset and the schema-encoding
    /// page carries everything consolidated before it, so one record read
    /// suffices; without cumulation the chain suffix is walked.
    fn updated_union(&self, range: &UpdateRange, base_rid: Rid, head: Link) -> u64 {
        let historic_union = |union: &mut u64| {
            let hist = range.historic.read();
            for hp in hist.iter() {
                if let Some(rec) = hp.find(base_rid) {
                    *union |= rec.union_bits;
                }
            }
        };
        let se_bits = self
            .base_cell(range, self.schema.schema_col(), base_rid)
            .map(|c| SchemaEncoding::from_cell(c).bits())
            .unwrap_or(0);
        let cumulative = self.shared.config.cumulative_updates;
        let published = range.published_tps.load(Ordering::Acquire);
        let mut union = 0u64;
        let mut link = head;
        loop {
            match link {
                Link::Null | Link::Base(_) => {
                    union |= se_bits;
                    break;
                }
                Link::Tail(trid) => {
                    let seq = match range.seq_of_rid(trid) {
                        Some(s) => s,
                        None => break,
                    };
                    if seq <= range.compressed_upto.load(Ordering::Acquire) {
                        historic_union(&mut union);
                        union |= se_bits;
                        break;
                    }
                    let meta = self.tail_meta(range, seq);
                    if range.is_aborted_seq(seq) {
                        link = meta.backlink;
                        continue;
                    }
                    union |= meta.enc.bits();
                    // newest cumulative value record + consolidated union
                    // cover the whole history
                    if cumulative && !meta.enc.is_snapshot() && seq > published {
                        union |= se_bits;
                        break;
                    }
                    if seq <= self.se_page_tps(range, base_rid) {
                        union |= se_bits;
                        break;
                    }
                    link = meta.backlink;
                }
            }
        }
        union
    }

    fn se_page_tps(&self, range: &UpdateRange, base_rid: Rid) -> u64 {
        self.base_page(
            self.schema.schema_col(),
            range.range_id,
            self.base_loc(range.slot_of(base_rid)).0,
        )
        .map(|p| p.tps())
        .unwrap_or(0)
    }

    /// Latest committed value of one column (pre-write index bookkeeping).
    fn committed_col_value(
        &self,
        range: &UpdateRange,
        base_rid: Rid,
        head: Link,
        col: u32,
    ) -> Option<u64> {
        let vis = Visibility {
            bound: u64::MAX - 1,
            own: None,
            speculative: false,
        };
        let out = self
            .read_for_range(range, base_rid, 1 << col, &vis, Some(head))
            .ok()?;
        out.values.and_then(|v| v[col as usize])
    }

    fn base_original_start(&self, range: &UpdateRange, base_rid: Rid) -> Result<u64> {
        let (page, off) = self
            .base_start_loc(range, base_rid)
            .ok_or(Error::UnknownRid(base_rid))?;
        match self.resolve_start(&page, off, None) {
            StartRes::Committed(t) => Ok(t),
            // the conflict check upstream guarantees a committed base
            _ => Err(Error::UnknownRid(base_rid)),
        }
    }

    /// One-pass pre-write head analysis: conflict detection against the raw
    /// head, double-delete rejection against the first committed value
    /// record, plus that record's column bits and values (the cumulative
    /// union/carry since the reset).
    fn analyze_head(
        &self,
        txn: &Txn,
        range: &UpdateRange,
        base_rid: Rid,
        head: Link,
    ) -> HeadAnalysis {
        let mut info = HeadInfo {
            union_bits: 0,
            carry: Vec::new(),
        };
        let cumulative = self.shared.config.cumulative_updates;
        let published = range.published_tps.load(Ordering::Acquire);
        let mut link = head;
        let mut raw_head = true;
        loop {
            match link {
                Link::Null | Link::Base(_) => {
                    // the base record is the effective head
                    let (spage, soff) = match self.base_start_loc_pub(range, base_rid) {
                        Some(x) => x,
                        None => return HeadAnalysis::Unknown,
                    };
                    return match self.resolve_start(&spage, soff, Some(txn.id)) {
                        StartRes::Committed(_) | StartRes::Own => HeadAnalysis::Ok(info),
                        StartRes::InFlight | StartRes::PreCommit => HeadAnalysis::Conflict,
                        StartRes::Aborted | StartRes::Tombstone => HeadAnalysis::Unknown,
                    };
                }
                Link::Tail(trid) => {
                    let seq = match range.seq_of_rid(trid) {
                        Some(s) => s,
                        None => return HeadAnalysis::Unknown,
                    };
                    if seq <= range.compressed_upto.load(Ordering::Acquire) {
                        // fully consolidated history: deletion state lives in
                        // the historic pages; carry is empty (reset passed)
                        let hist = range.historic.read();
                        for hp in hist.iter().rev() {
                            if let Some(rec) = hp.find(base_rid) {
                                info.union_bits |= rec.union_bits;
                                if let Some(i) = rec.version_at(u64::MAX) {
                                    if rec.version_deleted(i) {
                                        return HeadAnalysis::Conflict;
                                    }
                                }
                            }
                        }
                        return HeadAnalysis::Ok(info);
                    }
                    if range.is_aborted_seq(seq) {
                        raw_head = false;
                        link = self.tail_backlink(range, seq);
                        continue;
                    }
                    let meta = self.tail_meta(range, seq);
                    match self.resolve_start_cell_value(meta.start_cell, Some(txn.id)) {
                        StartRes::InFlight | StartRes::PreCommit => {
                            return HeadAnalysis::Conflict
                        }
                        StartRes::Aborted => {
                            raw_head = false;
                            link = meta.backlink;
                            continue;
                        }
                        StartRes::Tombstone => return HeadAnalysis::Unknown,
                        StartRes::Committed(_) | StartRes::Own => {
                            let _ = raw_head;
                            if meta.enc.is_snapshot() {
                                link = meta.backlink;
                                raw_head = false;
                                continue;
                            }
                            if meta.enc.is_delete_record() {
                                return HeadAnalysis::Conflict;
                            }
                            info.union_bits = meta.enc.bits();
                            if cumulative && seq > published {
                                let mut bits = meta.enc.bits();
                                let mut c = 0u32;
                                while bits != 0 {
                                    if bits & 1 != 0 {
                                        if let Some(v) = self.tail_value(range, seq, c) {
                                            info.carry.push((c, v));
                                        }
                                    }
                                    bits >>= 1;
                                    c += 1;
                                }
                            }
                            return HeadAnalysis::Ok(info);
                        }
                    }
                }
            }
        }
    }

}

struct TailMeta {
    enc: SchemaEncoding,
    backlink: Link,
    start_cell: u64,
}

struct HeadInfo {
    /// Column bits of the newest committed value record (complete union of
    /// updated columns since the reset when cumulation is on).
    union_bits: u64,
    /// Its values: the cumulative carry for the next value record.
    carry: Vec<(u32, u64)>,
}

enum HeadAnalysis {
    Ok(HeadInfo),
    Conflict,
    Unknown,
}

/// Clears the indirection latch bit on drop unless the write published.
struct LatchGuard<'a> {
    cell: &'a AtomicU64,
    armed: bool,
}

impl Drop for LatchGuard<'_> {
    fn drop(&mut self) {
        if self.armed {
            IndirectionCell(self.cell).unlatch();
        }
    }
}
