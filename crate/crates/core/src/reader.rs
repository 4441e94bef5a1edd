//! Multi-version reads. One walker serves latest reads, snapshot scans, and
//! time-travel lookups: it decides the visible version from the chain's
//! value records, collects requested columns from any record whose resolved
//! start time falls inside the visibility bound (snapshot records supply
//! pre-update originals), stops per column once the remaining chain is
//! already consolidated into the page generation it is reading, and crosses
//! into historic pages at the compression boundary.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::indirection::{IndirectionCell, Link};
use crate::page::Page;
use crate::range::UpdateRange;
use crate::rid::Rid;
use crate::schema::{start_is_pending, SchemaEncoding, START_TOMBSTONE};
use crate::table::{CachedRangePages, ReadOutcome, RecordVersion, Table};
use crate::txn::{ObservedVersion, ReadObs, Txn, TxnState, Visibility};

struct VersionPick {
    time: u64,
    deleted: bool,

    speculative_writer: Option<u64>,
}

enum CellVis {
    /// Visible with this resolved time.
    At(u64),
    /// Visible because it is our own in-flight write.
    Own,
    /// Visible speculatively; the writer must commit for validation.
    Spec { writer: u64, time: u64 },
    No,
}

impl Table {
    fn cell_visibility(&self, start_cell: u64, vis: &Visibility) -> CellVis {
        if start_cell == START_TOMBSTONE {
            return CellVis::No;
        }
        if !start_is_pending(start_cell) {
            return if start_cell <= vis.bound {
                CellVis::At(start_cell)
            } else {
                CellVis::No
            };
        }
        let tid = crate::schema::start_pending_txn(start_cell);
        if vis.own == Some(tid) {
            return CellVis::Own;
        }
        match self.shared.txns.status(tid) {
            Some(st) => match st.state {
                TxnState::Committed => {
                    if st.commit <= vis.bound {
                        CellVis::At(st.commit)
                    } else {
                        CellVis::No
                    }
                }
                TxnState::PreCommit if vis.speculative => CellVis::Spec {
                    writer: tid,
                    time: st.commit,
                },
                _ => CellVis::No,
            },
            None => CellVis::No,
        }
    }

    /// Resolve and lazily finalize a start cell held in `page[off]`.
    fn cell_visibility_at(&self, page: &Page, off: u32, vis: &Visibility) -> CellVis {
        let cell = match page.read_slot(off) {
            Some(c) => c,
            None => return CellVis::No,
        };
        let r = self.cell_visibility(cell, vis);
        if let CellVis::At(t) = r {
            if start_is_pending(cell) {
                page.cas_cell(off, cell, t);
            }
        }
        r
    }

    pub(crate) fn read_for_range(
        &self,
        range: &UpdateRange,
        base_rid: Rid,
        mask: u64,
        vis: &Visibility,
        head_override: Option<Link>,
    ) -> Result<ReadOutcome> {
        let ncols = self.schema.num_data_columns as usize;
        let mut locations = 1u64;

        // base record visibility gates everything: updates commit after the
        // insert they build on
        let (spage, soff) = self
            .base_start_loc_pub(range, base_rid)
            .ok_or(Error::UnknownRid(base_rid))?;
        let base_time = match self.cell_visibility_at(&spage, soff, vis) {
            CellVis::At(t) => Some(t),
            CellVis::Own => None,
            CellVis::Spec { writer, time } => {
                // a speculatively visible insert
                return self.finish_base_only(range, base_rid, mask, locations, time, Some(writer));
            }
            CellVis::No => {
                return Ok(ReadOutcome {
                    observed: ObservedVersion::not_found(),
                    speculative_writer: None,
                    values: None,
                    locations,
                })
            }
        };

        let mut needed = mask & self.schema.all_data_bits();
        let mut out = vec![None; ncols];
        let mut version: Option<VersionPick> = None;

        let (ipage, ioff) = self.ind_cell_loc(range, base_rid);
        ipage.assert_live();
        let mut link = head_override.unwrap_or_else(|| IndirectionCell(ipage.cell(ioff)).load());

        let insert_backed = range.insert_backing().is_some();
        let cache = if insert_backed {
            None
        } else {
            Some(self.cached_pages(range))
        };
        let base_idx = range.slot_of(base_rid) / self.base_cap();
        let base_off = range.slot_of(base_rid) % self.base_cap();
        let cell_at = |col: u32| -> Option<u64> {
            match &cache {
                Some(c) => {
                    let p = c.page(col, base_idx)?;
                    p.assert_live();
                    p.read_slot(base_off)
                }
                None => self.base_cell(range, col, base_rid),
            }
        };
        let tps_at = |col: u32| -> u64 {
            cache
                .as_ref()
                .and_then(|c| c.page(col, base_idx))
                .map(|p| p.tps())
                .unwrap_or(0)
        };
        let mut lut_row: Option<u64> = None;
        let mut lut_at = |table: &Table| -> u64 {
            if let Some(v) = lut_row {
                return v;
            }
            let v = cell_at(table.schema.last_updated_col()).unwrap_or(u64::MAX);
            lut_row = Some(v);
            v
        };
        let se_state = || -> (u64, u64) {
            match &cache {
                Some(c) => match c.page(self.schema.schema_col(), base_idx) {
                    Some(p) => (
                        p.tps(),
                        p.read_slot(base_off)
                            .map(|v| SchemaEncoding::from_cell(v).bits())
                            .unwrap_or(0),
                    ),
                    None => (0, u64::MAX),
                },
                None => (0, u64::MAX),
            }
        };

        loop {
            match link {
                Link::Null | Link::Base(_) => {
                    break;
                }
                Link::Tail(trid) => {
                    let seq = range
                        .seq_of_rid(trid)
                        .ok_or(Error::UnknownRid(trid))?;
                    // whole-row fast path: the head is already consolidated
                    // into the page generation we hold, so the row's visible
                    // version and values come straight from the pages
                    if version.is_none() && !insert_backed {
                        let (se_tps, se_union) = se_state();
                        if seq <= se_tps {
                            let lut = lut_at(self);
                            if lut <= vis.bound {
                                let se_cell = cell_at(self.schema.schema_col())
                                    .map(SchemaEncoding::from_cell)
                                    .unwrap_or(SchemaEncoding(0));
                                version = Some(VersionPick {
                                    time: lut,
                                    deleted: se_cell.is_deleted(),
                                    speculative_writer: None,
                                });
                                if se_cell.is_deleted() {
                                    break;
                                }
                                let mut bits = needed;
                                let mut c = 0u32;
                                while bits != 0 {
                                    if bits & 1 != 0 {
                                        let never = se_union & (1 << c) == 0;
                                        let cov = if never { se_tps } else { tps_at(c) };
                                        if cov >= seq {
                                            out[c as usize] = cell_at(c);
                                            needed &= !(1 << c);
                                        }
                                    }
                                    bits >>= 1;
                                    c += 1;
                                }
                                if needed == 0 {
                                    break;
                                }
                            }
                        }
                    }
                    if seq <= range.compressed_upto.load(Ordering::Acquire) {
                        // historic boundary: resolve the rest by time
                        let hist = range.historic.read();
                        for hp in hist.iter().rev() {
                            if let Some(rec) = hp.find(base_rid) {
                                if version.is_none() {
                                    if let Some(i) = rec.version_at(vis.bound) {
                                        version = Some(VersionPick {
                                            time: rec.times[i],
                                            deleted: rec.version_deleted(i),
                                            speculative_writer: None,
                                        });
                                    }
                                }
                                let mut bits = needed & rec.union_bits;
                                let mut c = 0u32;
                                while bits != 0 {
                                    if bits & 1 != 0 {
                                        if let Some(v) = rec.col_at(c, vis.bound) {
                                            out[c as usize] = Some(v);
                                            needed &= !(1 << c);
                                        }
                                    }
                                    bits >>= 1;
                                    c += 1;
                                }
                            }
                        }
                        break;
                    }
                    if range.is_aborted_seq(seq) {
                        link = self.tail_backlink_pub(range, seq);
                        continue;
                    }
                    locations += 1;
                    let (meta_enc, backlink, start_page, start_off) =
                        self.tail_meta_loc(range, seq)?;
                    let cv = self.cell_visibility_at(&start_page, start_off, vis);
                    let (eligible_time, spec_writer) = match cv {
                        CellVis::At(t) => (Some(t), None),
                        CellVis::Own => (Some(0), None),
                        CellVis::Spec { writer, time } => (Some(time), Some(writer)),
                        CellVis::No => (None, None),
                    };
                    if let Some(t) = eligible_time {
                        let decide = version.is_none() && !meta_enc.is_snapshot();
                        if decide {
                            let deleted = meta_enc.is_delete_record();
                            version = Some(VersionPick {
                                time: t,
                                deleted,
                                speculative_writer: spec_writer,
                            });
                            if deleted {
                                break;
                            }
                        }
                        let take = needed & meta_enc.bits();
                        if take != 0 {
                            let mut bits = take;
                            let mut c = 0u32;
                            while bits != 0 {
                                if bits & 1 != 0 {
                                    out[c as usize] = self.tail_value(range, seq, c);
                                }
                                bits >>= 1;
                                c += 1;
                            }
                            needed &= !take;
                        }
                        // A cumulative value record carries every column
                        // updated since the cumulation reset; columns it does
                        // not carry are consolidated into any page generation
                        // at or past that reset (or were never updated at
                        // all), so the walk can stop for them here.
                        if decide
                            && needed != 0
                            && !insert_backed
                            && self.shared.config.cumulative_updates
                        {
                            let published = range.published_tps.load(Ordering::Acquire);
                            let (se_tps, se_union) = se_state();
                            let mut bits = needed;
                            let mut c = 0u32;
                            while bits != 0 {
                                if bits & 1 != 0 {
                                    let never_updated = se_union & (1 << c) == 0;
                                    let tps_c = tps_at(c);
                                    let coverage = if never_updated {
                                        tps_c.max(se_tps)
                                    } else {
                                        tps_c
                                    };
                                    if coverage >= published
                                        && (never_updated || lut_at(self) <= vis.bound)
                                    {
                                        out[c as usize] = cell_at(c);
                                        needed &= !(1 << c);
                                    }
                                }
                                bits >>= 1;
                                c += 1;
                            }
                        }
                    }
                    if version.is_some() && needed == 0 {
                        break;
                    }
                    // per-column consolidation stop: the rest of the chain is
                    // already reflected in the page generation we hold, and
                    // nothing newer than our bound was applied to it
                    if !insert_backed && needed != 0 {
                        if let Link::Tail(nrid) = backlink {
                            if let Some(nseq) = range.seq_of_rid(nrid) {
                                if nseq > range.compressed_upto.load(Ordering::Acquire) {
                                    let mut bits = needed;
                                    let mut c = 0u32;
                                    while bits != 0 {
                                        if bits & 1 != 0 {
                                            let tps = tps_at(c);
                                            if nseq <= tps && lut_at(self) <= vis.bound {
                                                out[c as usize] = cell_at(c);
                                                needed &= !(1 << c);
                                            }
                                        }
                                        bits >>= 1;
                                        c += 1;
                                    }
                                    if version.is_some() && needed == 0 {
                                        break;
                                    }
                                }
                            }
                        }
                    }
                    link = backlink;
                }
            }
        }

        let version = version.unwrap_or(VersionPick {
            time: base_time.unwrap_or(0),
            deleted: false,
            speculative_writer: None,
        });

        if version.deleted {
            return Ok(ReadOutcome {
                observed: ObservedVersion {
                    found: false,
                    deleted: true,
                    time: version.time,
                },
                speculative_writer: version.speculative_writer,
                values: None,
                locations,
            });
        }

        // remaining columns were never explicitly written within the bound:
        // the base cell holds the original
        let mut bits = needed;
        let mut c = 0u32;
        while bits != 0 {
            if bits & 1 != 0 {
                out[c as usize] = cell_at(c);
            }
            bits >>= 1;
            c += 1;
        }

        Ok(ReadOutcome {
            observed: ObservedVersion {
                found: true,
                deleted: false,
                time: version.time,
            },
            speculative_writer: version.speculative_writer,
            values: Some(out),
            locations,
        })
    }

    fn finish_base_only(
        &self,
        range: &UpdateRange,
        base_rid: Rid,
        mask: u64,
        locations: u64,
        time: u64,
        spec_writer: Option<u64>,
    ) -> Result<ReadOutcome> {
        let mut out = vec![None; self.schema.num_data_columns as usize];
        let mut bits = mask & self.schema.all_data_bits();
        let mut c = 0u32;
        while bits != 0 {
            if bits & 1 != 0 {
                out[c as usize] = self.base_cell(range, c, base_rid);
            }
            bits >>= 1;
            c += 1;
        }
        Ok(ReadOutcome {
            observed: ObservedVersion {
                found: true,
                deleted: false,
                time,
            },
            speculative_writer: spec_writer,
            values: Some(out),
            locations,
        })
    }

    // small public shims over private helpers used across modules
    pub(crate) fn base_start_loc_pub(
        &self,
        range: &UpdateRange,
        base_rid: Rid,
    ) -> Option<(Arc<Page>, u32)> {
        if let Some(b) = range.insert_backing() {
            let ir = self.insert_range_by_id(b.ir_id)?;
            let slot = base_rid - ir.base_lo;
            let cap = self.shared.config.tail_page_slots as u64;
            let page = self.tt_page(self.schema.start_col(), b.ir_id, slot)?;
            Some((page, (slot % cap) as u32))
        } else {
            let slot = range.slot_of(base_rid);
            let cap = self.base_cap();
            let page = self.base_page(self.schema.start_col(), range.range_id, slot / cap)?;
            Some((page, slot % cap))
        }
    }

    pub(crate) fn tail_meta_loc(
        &self,
        range: &UpdateRange,
        seq: u64,
    ) -> Result<(SchemaEncoding, Link, Arc<Page>, u32)> {
        let cap = self.shared.config.tail_page_slots as u64;
        let off = ((seq - 1) % cap) as u32;
        let enc = self
            .tail_page(range, self.schema.schema_col(), seq)
            .and_then(|p| {
                p.assert_live();
                p.read_slot(off)
            })
            .map(SchemaEncoding::from_cell)
            .ok_or(Error::UnknownRid(seq))?;
        let backlink = self
            .tail_page(range, self.schema.indirection_col(), seq)
            .and_then(|p| p.read_slot(off))
            .map(crate::indirection::decode)
            .ok_or(Error::UnknownRid(seq))?;
        let start_page = self
            .tail_page(range, self.schema.start_col(), seq)
            .ok_or(Error::UnknownRid(seq))?;
        Ok((enc, backlink, start_page, off))
    }

    pub(crate) fn tail_backlink_pub(&self, range: &UpdateRange, seq: u64) -> Link {
        self.tail_meta_loc(range, seq)
            .map(|(_, l, _, _)| l)
            .unwrap_or(Link::Null)
    }

    // ---- public read operations ------------------------------------------

    /// Point read of the latest version visible to `txn`.
    pub fn read(&self, txn: &mut Txn, base_rid: Rid, mask: u64) -> Result<Option<RecordVersion>> {
        self.read_with(txn, base_rid, mask, false)
    }

    /// As `read`, but versions written by pre-commit transactions qualify.
    pub fn speculative_read(
        &self,
        txn: &mut Txn,
        base_rid: Rid,
        mask: u64,
    ) -> Result<Option<RecordVersion>> {
        self.read_with(txn, base_rid, mask, true)
    }

    fn read_with(
        &self,
        txn: &mut Txn,
        base_rid: Rid,
        mask: u64,
        speculative: bool,
    ) -> Result<Option<RecordVersion>> {
        if !txn.is_active() {
            return Err(Error::TxnNotActive(txn.id));
        }
        let range = self.range_of(base_rid)?;
        let vis = Visibility {
            bound: txn.begin.saturating_sub(1),
            own: Some(txn.id),
            speculative,
        };
        let outcome = self.read_for_range(&range, base_rid, mask, &vis, None)?;
        txn.last_read_locations = outcome.locations;
        self.shared.metrics.record_read_locations(outcome.locations);
        // own observations are trivially repeatable and skip the readset
        let own_write = outcome.observed.found
            && outcome.values.is_some()
            && txn
                .writeset
                .iter()
                .any(|w| matches!(w, crate::txn::WriteRec::Update { base_rid: r, .. } if *r == base_rid));
        if !own_write {
            txn.readset.push(ReadObs {
                table: self.table_id,
                base_rid,
                observed: outcome.observed,
                speculative,
                spec_writer: outcome.speculative_writer,
            });
        }
        Ok(outcome.values.map(|values| RecordVersion {
            base_rid,
            start_time: outcome.observed.time,
            values,
        }))
    }

    /// Index lookup plus latest-version read: at most two record locations
    /// away when cumulation covers the chain suffix.
    pub fn select_latest(
        &self,
        txn: &mut Txn,
        key: u64,
        mask: u64,
    ) -> Result<Option<RecordVersion>> {
        let rid = match self.primary.get(key) {
            Some(r) => r,
            None => return Ok(None),
        };
        self.read(txn, rid, mask)
    }

    /// Version visible at `as_of` (greatest start time <= `as_of`).
    pub fn select_version(
        &self,
        txn: &Txn,
        base_rid: Rid,
        as_of: u64,
        mask: u64,
    ) -> Result<Option<RecordVersion>> {
        if as_of > txn.begin {
            return Err(Error::InvalidParameter(
                "as_of must not exceed the transaction begin time".into(),
            ));
        }
        let range = self.range_of(base_rid)?;
        let vis = Visibility::as_of(as_of);
        let outcome = self.read_for_range(&range, base_rid, mask, &vis, None)?;
        Ok(outcome.values.map(|values| RecordVersion {
            base_rid,
            start_time: outcome.observed.time,
            values,
        }))
    }

    /// Validation recompute: the version visible at `bound` considering only
    /// committed state.
    pub(crate) fn observe_version(&self, base_rid: Rid, bound: u64) -> ObservedVersion {
        let range = match self.range_of(base_rid) {
            Ok(r) => r,
            Err(_) => return ObservedVersion::not_found(),
        };
        let vis = Visibility {
            bound,
            own: None,
            speculative: false,
        };
        match self.read_for_range(&range, base_rid, 0, &vis, None) {
            Ok(o) => o.observed,
            Err(_) => ObservedVersion::not_found(),
        }
    }

    /// Secondary-index lookup: candidates re-checked against the visible
    /// version (stale entries filtered by re-evaluating the predicate).
    pub fn lookup_secondary(
        &self,
        txn: &mut Txn,
        column: u32,
        value: u64,
        mask: u64,
    ) -> Result<Vec<RecordVersion>> {
        let idx = self
            .secondaries
            .read()
            .get(&column)
            .cloned()
            .ok_or_else(|| Error::InvalidParameter(format!("no index on column {column}")))?;
        let mut out = Vec::new();
        for rid in idx.lookup(value) {
            if let Some(rec) = self.read(txn, rid, mask | (1 << column))? {
                if rec.values[column as usize] == Some(value) {
                    out.push(rec);
                }
            }
        }
        Ok(out)
    }

    /// Create (and backfill) a secondary index on a data column.
    pub fn create_secondary_index(&self, column: u32) -> Result<()> {
        if column >= self.schema.num_data_columns {
            return Err(Error::InvalidParameter(format!("no such column {column}")));
        }
        let idx = SecondaryIndexHandle::new(column);
        {
            let mut s = self.secondaries.write();
            if s.contains_key(&column) {
                return Ok(());
            }
            s.insert(column, idx.clone());
        }
        // backfill from the latest committed versions
        let vis = Visibility {
            bound: u64::MAX - 1,
            own: None,
            speculative: false,
        };
        for (_, rid) in self.primary.range_keys(std::ops::Bound::Unbounded, std::ops::Bound::Unbounded)
        {
            if let Ok(range) = self.range_of(rid) {
                if let Ok(o) = self.read_for_range(&range, rid, 1 << column, &vis, None) {
                    if let Some(vals) = o.values {
                        if let Some(v) = vals[column as usize] {
                            idx.insert(v, rid);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    // ---- scans ------------------------------------------------------------

    /// Visit every record with base rid < `limit` visible to `txn`,
    /// applying `f(rid, values)`. Uses consolidated pages directly where the
    /// row's lineage allows, reconciling per column otherwise.
    pub fn scan_visible(
        &self,
        txn: &Txn,
        mask: u64,
        limit: u64,
        f: &mut dyn FnMut(Rid, &[Option<u64>]),
    ) -> Result<()> {
        let vis = Visibility {
            bound: txn.begin.saturating_sub(1),
            own: Some(txn.id),
            speculative: false,
        };
        let upper = limit.min(self.rids.next_base_hint());
        let ranges: Vec<_> = self.ranges.read().clone();
        for range in ranges {
            if range.base_lo >= upper {
                break;
            }
            let hi = range.base_hi.min(upper);
            self.scan_range(&range, hi, mask, &vis, f)?;
        }
        Ok(())
    }

    fn scan_range(
        &self,
        range: &UpdateRange,
        hi: Rid,
        mask: u64,
        vis: &Visibility,
        f: &mut dyn FnMut(Rid, &[Option<u64>]),
    ) -> Result<()> {
        let insert_backed = range.insert_backing().is_some();
        let cache = if insert_backed {
            None
        } else {
            Some(self.cached_pages(range))
        };
        let pages_per_range = (self.range_size / self.base_cap() as u64) as u32;
        let data_bits = mask & self.schema.all_data_bits();

        // cross-column lineage check over the pages this scan will touch,
        // and the minimum TPS usable for the per-row fast path
        let mut fast = cache.is_some();
        let mut min_tps = u64::MAX;
        if let Some(c) = &cache {
            let mut pages = Vec::new();
            let mut bits = data_bits;
            let mut col = 0u32;
            'outer: while bits != 0 {
                if bits & 1 != 0 {
                    for idx in 0..pages_per_range {
                        match c.page(col, idx) {
                            Some(p) => pages.push(Arc::clone(p)),
                            None => {
                                fast = false;
                                break 'outer;
                            }
                        }
                    }
                }
                bits >>= 1;
                col += 1;
            }
            if fast {
                let refs: Vec<&Page> = pages.iter().map(|p| p.as_ref()).collect();
                match crate::merge::check_read_consistency(&refs) {
                    crate::merge::ReadConsistency::Consistent { tps } => min_tps = tps,
                    crate::merge::ReadConsistency::Inconsistent { .. } => {
                        self.shared
                            .metrics
                            .tps_mismatches_detected
                            .fetch_add(1, Ordering::Relaxed);
                        fast = false;
                    }
                }
            }
        }

        let cap = self.base_cap();
        let cell = |c: &CachedRangePages, col: u32, slot: u32| -> Option<u64> {
            let p = c.page(col, slot / cap)?;
            p.assert_live();
            p.read_slot(slot % cap)
        };
        let (ipage0, _) = self.ind_cell_loc(range, range.base_lo);
        for rid in range.base_lo..hi {
            if insert_backed {
                let ir = self
                    .insert_range_by_id(range.insert_backing().unwrap().ir_id)
                    .unwrap();
                if rid >= ir.base_lo + ir.issued() {
                    break;
                }
            }
            let slot = range.slot_of(rid);
            let ipage = if slot / cap == 0 {
                ipage0.clone()
            } else {
                self.ind_cell_loc(range, rid).0
            };
            let link = IndirectionCell(ipage.cell(slot % cap)).load();

            let row_fast = fast
                && match link {
                    Link::Null => true,
                    Link::Tail(trid) => match range.seq_of_rid(trid) {
                        Some(seq) => {
                            let c = cache.as_ref().unwrap();
                            seq <= min_tps
                                && cell(c, self.schema.last_updated_col(), slot)
                                    .unwrap_or(u64::MAX)
                                    <= vis.bound
                        }
                        None => false,
                    },
                    Link::Base(_) => false,
                };

            if row_fast {
                let c = cache.as_ref().unwrap();
                // visibility and tombstone checks on the consolidated row
                let spage = match c.page(self.schema.start_col(), slot / cap) {
                    Some(p) => p,
                    None => continue,
                };
                match self.cell_visibility_at(spage, slot % cap, vis) {
                    CellVis::At(_) | CellVis::Own => {}
                    _ => continue,
                }
                if let Some(se) = cell(c, self.schema.schema_col(), slot) {
                    if SchemaEncoding::from_cell(se).is_deleted() {
                        continue;
                    }
                }
                let mut out = vec![None; self.schema.num_data_columns as usize];
                let mut bits = data_bits;
                let mut col = 0u32;
                while bits != 0 {
                    if bits & 1 != 0 {
                        out[col as usize] = cell(c, col, slot);
                    }
                    bits >>= 1;
                    col += 1;
                }
                f(rid, &out);
            } else {
                match self.read_for_range(range, rid, mask, vis, Some(link)) {
                    Ok(o) => {
                        if let Some(vals) = o.values {
                            f(rid, &vals);
                        }
                    }
                    Err(Error::UnknownRid(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    }

    /// SUM aggregation over one column for all records with rid < `limit`,
    /// at the transaction's snapshot.
    pub fn scan_sum(&self, txn: &Txn, column: u32, limit: u64) -> Result<u128> {
        let mut sum: u128 = 0;
        self.scan_visible(txn, 1 << column, limit, &mut |_rid, vals| {
            if let Some(v) = vals[column as usize] {
                sum += v as u128;
            }
        })?;
        Ok(sum)
    }
}

use crate::index::SecondaryIndex as SecondaryIndexHandle;
