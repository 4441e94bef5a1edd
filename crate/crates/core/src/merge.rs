//! Background consolidation. A merge takes a set of consecutive committed
//! tail records of a range, loads the outdated base pages of the updated
//! columns, applies only the latest version per record (scanning the span in
//! reverse with a seen-set), and publishes freshly sealed merged pages via
//! atomic directory swaps. It never reads uncommitted data and never writes
//! a pre-existing page; displaced pages drain through the epoch queue.

use std::collections::HashMap;
use std::hash::BuildHasherDefault;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::directory::PageKey;
use crate::error::{Error, Result};
use crate::historic::TailVersion;
use crate::indirection::Link;
use crate::page::{Page, PageKind};
use crate::range::UpdateRange;
use crate::rid::Rid;
use crate::schema::{SchemaEncoding, START_TOMBSTONE};
use crate::table::{MergeMsg, Table};
use crate::txn::TxnState;
use crate::wal::{DirectoryOp, LogPayload};

/// A unit of merge work: consecutive committed tail records of one range.
#[derive(Clone, Debug)]
pub struct MergeBatch {
    pub range_id: u64,
    pub from_seq: u64,
    pub to_seq: u64,
    /// Column bitmap for per-column merging; `None` merges every updated
    /// column of the span.
    pub columns: Option<u64>,
}

/// How a reader should act on an indirection link given the lineage
/// watermark of the page it is reading.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum IndirectionUse {
    UseBasePage,
    FollowTail,
}

/// Null links and links already consolidated into the page resolve to the
/// page itself; anything newer requires following the tail chain.
pub fn interpret_indirection(
    link: Link,
    seq_of: impl Fn(Rid) -> Option<u64>,
    page_tps: u64,
) -> IndirectionUse {
    match link {
        Link::Null | Link::Base(_) => IndirectionUse::UseBasePage,
        Link::Tail(rid) => match seq_of(rid) {
            Some(seq) if seq <= page_tps => IndirectionUse::UseBasePage,
            Some(_) => IndirectionUse::FollowTail,
            None => IndirectionUse::FollowTail,
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReadConsistency {
    Consistent { tps: u64 },
    Inconsistent { tps_by_page: Vec<(u32, u64)> },
}

/// Cross-column lineage check: pages read for one range are mutually
/// consistent iff they all carry the same TPS. A single page is trivially
/// consistent. On inconsistency the reader reconciles each column
/// independently against the tail chain.
pub fn check_read_consistency(pages: &[&Page]) -> ReadConsistency {
    match pages.first() {
        None => ReadConsistency::Consistent { tps: 0 },
        Some(p0) => {
            let tps = p0.tps();
            if pages.iter().all(|p| p.tps() == tps) {
                ReadConsistency::Consistent { tps }
            } else {
                ReadConsistency::Inconsistent {
                    tps_by_page: pages.iter().map(|p| (p.column, p.tps())).collect(),
                }
            }
        }
    }
}

/// A committed tail record materialized for merging/compression.
pub(crate) struct SpanRecord {
    pub seq: u64,
    pub base_rid: Rid,
    pub enc: SchemaEncoding,
    pub time: u64,
    pub values: Vec<(u32, u64)>,
}

impl Table {
    /// Committed records of `[from, to]`, aborted ones skipped, start times
    /// resolved to commit times. Preconditions (`to` at or below the
    /// resolved watermark) are the caller's.
    pub(crate) fn collect_span_records(
        &self,
        range: &UpdateRange,
        from: u64,
        to: u64,
    ) -> Result<Vec<SpanRecord>> {
        let mut out = Vec::with_capacity((to - from + 1) as usize);
        for seq in from..=to {
            if range.is_aborted_seq(seq) {
                continue;
            }
            let (enc, _backlink, spage, soff) = self.tail_meta_loc(range, seq)?;
            let cell = spage.read_slot(soff).unwrap_or(START_TOMBSTONE);
            let time = if crate::schema::start_is_pending(cell) {
                let tid = crate::schema::start_pending_txn(cell);
                let st = self.shared.txns.status(tid);
                debug_assert!(
                    matches!(st.map(|s| s.state), Some(TxnState::Committed)),
                    "merge input must be committed (seq {seq})"
                );
                match st {
                    Some(s) if s.state == TxnState::Committed => {
                        spage.cas_cell(soff, cell, s.commit);
                        s.commit
                    }
                    _ => continue,
                }
            } else if cell == START_TOMBSTONE {
                continue;
            } else {
                cell
            };
            let base_rid = self
                .tail_value(range, seq, self.schema.base_rid_col())
                .ok_or(Error::UnknownRid(seq))?;
            let mut values = Vec::new();
            let mut bits = enc.bits();
            let mut c = 0u32;
            while bits != 0 {
                if bits & 1 != 0 {
                    if let Some(v) = self.tail_value(range, seq, c) {
                        values.push((c, v));
                    }
                }
                bits >>= 1;
                c += 1;
            }
            out.push(SpanRecord {
                seq,
                base_rid,
                enc,
                time,
                values,
            });
        }
        Ok(out)
    }

    /// Queue a merge batch explicitly. Spans must extend the already-queued
    /// prefix contiguously; anything else is an overlap error.
    pub fn enqueue_merge(&self, batch: MergeBatch) -> Result<()> {
        if batch.from_seq > batch.to_seq || batch.to_seq == 0 {
            return Err(Error::EmptyMergeBatch);
        }
        let range = self
            .range_by_id(batch.range_id)
            .ok_or(Error::UnknownRid(batch.range_id))?;
        if range.insert_backing().is_some() {
            return Err(Error::InvalidParameter(
                "range still lives in an insert range".into(),
            ));
        }
        if batch.to_seq > range.resolved_watermark() {
            return Err(Error::InvalidParameter(
                "batch spans unresolved tail records".into(),
            ));
        }
        range
            .enqueued_upto
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |cur| {
                if batch.from_seq == cur + 1 && batch.to_seq > cur {
                    Some(batch.to_seq)
                } else {
                    None
                }
            })
            .map_err(|_| Error::OverlappingMergeSpan(batch.range_id))?;
        if let Some(tx) = self.merge_tx.lock().as_ref() {
            let _ = tx.send(MergeMsg::Range(batch));
            Ok(())
        } else {
            // no worker: run inline
            self.run_merge_batch(&batch).map(|_| ())
        }
    }

    /// Merge everything resolved so far on one range, synchronously.
    /// Returns the published TPS, or `None` when there was nothing to do.
    pub fn merge_now(&self, range_id: u64) -> Result<Option<u64>> {
        self.merge_now_with(range_id, None)
    }

    /// As `merge_now`, but regenerating every data column (the full
    /// main-store rewrite of delta-store consolidation).
    pub fn merge_now_rewrite_all(&self, range_id: u64) -> Result<Option<u64>> {
        self.merge_now_with(range_id, Some(self.schema.all_data_bits()))
    }

    fn merge_now_with(&self, range_id: u64, columns: Option<u64>) -> Result<Option<u64>> {
        let range = self
            .range_by_id(range_id)
            .ok_or(Error::UnknownRid(range_id))?;
        let wm = range.resolved_watermark();
        let from = range
            .enqueued_upto
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |cur| {
                if wm > cur {
                    Some(wm)
                } else {
                    None
                }
            });
        match from {
            Ok(cur) => {
                let batch = MergeBatch {
                    range_id,
                    from_seq: cur + 1,
                    to_seq: wm,
                    columns,
                };
                self.run_merge_batch(&batch)?;
                Ok(Some(wm))
            }
            Err(_) => Ok(None),
        }
    }

    /// Build the merged pages for a batch without publishing them. Pure:
    /// running it twice yields bit-identical sealed pages.
    pub(crate) fn merge_build(
        &self,
        range: &UpdateRange,
        batch: &MergeBatch,
    ) -> Result<Vec<(PageKey, Arc<Page>)>> {
        let records = self.collect_span_records(range, batch.from_seq, batch.to_seq)?;
        let union_bits = records.iter().fold(0u64, |m, r| m | r.enc.bits());
        let data_cols = batch.columns.unwrap_or(union_bits) & self.schema.all_data_bits();

        let cap = self.base_cap();
        let pages_per_range = (self.range_size / cap as u64) as u32;
        let mut outputs: Vec<(PageKey, Arc<Page>)> = Vec::new();

        // copy-on-merge for the updated data columns
        let mut col_list: Vec<u32> = Vec::new();
        let mut bits = data_cols;
        let mut c = 0u32;
        while bits != 0 {
            if bits & 1 != 0 {
                col_list.push(c);
            }
            bits >>= 1;
            c += 1;
        }

        let mut new_pages: HashMap<u32, Vec<Arc<Page>>, BuildHasherDefault<crate::directory::FastHasher>> =
            HashMap::default();
        for &col in col_list
            .iter()
            .chain([self.schema.schema_col(), self.schema.last_updated_col()].iter())
        {
            let mut copies = Vec::with_capacity(pages_per_range as usize);
            for idx in 0..pages_per_range {
                let src = self
                    .base_page(col, range.range_id, idx)
                    .ok_or(Error::UnknownDirectoryEntry)?;
                let tps = src.tps().max(batch.to_seq);
                copies.push(Arc::new(duplicate_for_merge(&src, tps)));
            }
            new_pages.insert(col, copies);
        }

        let slot_of = |rid: Rid| range.slot_of(rid);
        let write_cell = |pages: &Vec<Arc<Page>>, slot: u32, v: u64| {
            let p = &pages[(slot / cap) as usize];
            p.store(slot % cap, v);
        };
        // seen-sets over the range's slot space
        let words = (self.range_size as usize).div_ceil(64);
        let mut seen = vec![0u64; words];
        let mark = |seen: &mut [u64], slot: u32| -> bool {
            let (w, b) = ((slot / 64) as usize, slot % 64);
            let hit = seen[w] & (1 << b) != 0;
            seen[w] |= 1 << b;
            !hit
        };

        // per updated column: apply the latest explicit value per record,
        // scanning newest to oldest from this column's own watermark
        for &col in &col_list {
            let col_from = self
                .base_page(col, range.range_id, 0)
                .map(|p| p.tps() + 1)
                .unwrap_or(1);
            if col_from < batch.from_seq {
                return Err(Error::InvalidParameter(format!(
                    "batch span starts past column {col}'s lineage"
                )));
            }
            let pages = &new_pages[&col];
            seen.fill(0);
            for rec in records.iter().rev() {
                if rec.seq < col_from || !rec.enc.has_column(col) {
                    continue;
                }
                let slot = slot_of(rec.base_rid);
                if seen[(slot / 64) as usize] & (1 << (slot % 64)) != 0 {
                    continue;
                }
                if let Some(&(_, v)) = rec.values.iter().find(|(cc, _)| *cc == col) {
                    write_cell(pages, slot, v);
                    mark(&mut seen, slot);
                }
            }
        }

        // schema-encoding union, deletion carry, and last-updated times over
        // the whole span
        let se_pages = &new_pages[&self.schema.schema_col()];
        let lut_pages = &new_pages[&self.schema.last_updated_col()];
        seen.fill(0);
        for rec in records.iter().rev() {
            let slot = slot_of(rec.base_rid);
            if mark(&mut seen, slot) {
                let lp = &lut_pages[(slot / cap) as usize];
                let existing = lp.read_slot(slot % cap).unwrap_or(0);
                lp.store(slot % cap, existing.max(rec.time));
                if rec.enc.is_delete_record() {
                    let sp = &se_pages[(slot / cap) as usize];
                    let cur = SchemaEncoding::from_cell(sp.read_slot(slot % cap).unwrap_or(0));
                    sp.store(slot % cap, cur.with_deleted().cell());
                }
            }
            if rec.enc.bits() != 0 {
                let sp = &se_pages[(slot / cap) as usize];
                let cur = SchemaEncoding::from_cell(sp.read_slot(slot % cap).unwrap_or(0));
                sp.store(slot % cap, cur.union_bits(rec.enc).cell());
            }
        }

        for (col, pages) in new_pages {
            for (idx, p) in pages.into_iter().enumerate() {
                p.seal();
                outputs.push((
                    PageKey::Base {
                        column: col,
                        range_id: range.range_id,
                        idx: idx as u32,
                    },
                    p,
                ));
            }
        }
        outputs.sort_by_key(|(k, _)| match k {
            PageKey::Base { column, idx, .. } => (*column, *idx),
            _ => (u32::MAX, u32::MAX),
        });
        Ok(outputs)
    }

    /// Run one merge batch: build, persist, swap the directory, and queue
    /// the displaced pages for epoch reclamation.
    pub(crate) fn run_merge_batch(&self, batch: &MergeBatch) -> Result<u64> {
        let t0 = std::time::Instant::now();
        let range = self
            .range_by_id(batch.range_id)
            .ok_or(Error::UnknownRid(batch.range_id))?;
        if range.insert_backing().is_some() {
            return Err(Error::InvalidParameter(
                "range still lives in an insert range".into(),
            ));
        }
        if batch.from_seq > batch.to_seq {
            return Err(Error::EmptyMergeBatch);
        }
        debug_assert!(batch.to_seq <= range.resolved_watermark());

        let outputs = self.merge_build(&range, batch)?;

        // persist sealed artifacts before publishing
        if self.shared.logging_active() {
            for (key, page) in &outputs {
                if let PageKey::Base { column, idx, .. } = key {
                    if let Some(path) = self.shared.page_image_path(
                        self.table_id,
                        "m",
                        *column,
                        batch.range_id,
                        *idx,
                    ) {
                        let _ = std::fs::create_dir_all(path.parent().unwrap());
                        let _ = std::fs::write(&path, page.sealed_image());
                    }
                }
            }
            if let Some(wal) = &self.shared.wal {
                wal.append(&LogPayload::MergeOp {
                    table: self.table_id,
                    range_id: batch.range_id,
                    from_seq: batch.from_seq,
                    to_seq: batch.to_seq,
                })?;
            }
        }

        // the only foreground-visible action: per-entry pointer swaps
        let mut displaced = Vec::new();
        for (key, page) in outputs {
            let old = self.dir.swap(key, page)?;
            displaced.push(old);
        }
        range.page_generation.fetch_add(1, Ordering::Release);
        let retire_time = self.shared.clock.next();
        self.shared.epoch.retire_pages(retire_time, displaced);

        let covers_all = match batch.columns {
            None => true,
            Some(mask) => mask & self.schema.all_data_bits() == self.schema.all_data_bits(),
        };
        if covers_all {
            // a merge covering every column publishes the new TPS:
            // cumulation resets here
            range.published_tps.store(batch.to_seq, Ordering::SeqCst);
        }
        range.merges_done.fetch_add(1, Ordering::SeqCst);
        let m = &self.shared.metrics;
        m.merges_completed.fetch_add(1, Ordering::Relaxed);
        m.tail_records_consolidated
            .fetch_add(batch.to_seq - batch.from_seq + 1, Ordering::Relaxed);
        m.merge_nanos_total
            .fetch_add(t0.elapsed().as_nanos() as u64, Ordering::Relaxed);
        Ok(batch.to_seq)
    }

    /// Per-column merge entry point (exercises independent column lineage).
    pub fn merge_columns_now(&self, range_id: u64, columns: u64, upto_seq: u64) -> Result<()> {
        let range = self
            .range_by_id(range_id)
            .ok_or(Error::UnknownRid(range_id))?;
        if upto_seq > range.resolved_watermark() {
            return Err(Error::InvalidParameter(
                "span exceeds the resolved watermark".into(),
            ));
        }
        let batch = MergeBatch {
            range_id,
            from_seq: 1,
            to_seq: upto_seq,
            columns: Some(columns),
        };
        self.run_merge_batch(&batch).map(|_| ())
    }

    // ---- insert-range merge ------------------------------------------------

    /// Simplified merge of table-level tail pages into base pages: records
    /// compact positionally (same insertion order), the indirection column
    /// is untouched, and the table-level tail pages are discarded once the
    /// epoch drains.
    pub fn merge_insert_range(&self, ir_id: u64) -> Result<bool> {
        let ir = match self.insert_range_by_id(ir_id) {
            Some(ir) => ir,
            None => return Err(Error::UnknownRid(ir_id)),
        };
        if !ir.merge_eligible() {
            return Ok(false);
        }
        let issued = ir.issued();
        let cap = self.base_cap();
        let tail_cap = self.shared.config.tail_page_slots as u64;
        let mut merged_any = false;

        let first_range = ir.base_lo / self.range_size;
        let chunks = ir.span() / self.range_size;
        for k in 0..chunks {
            let range = match self.range_by_id(first_range + k) {
                Some(r) => r,
                None => continue,
            };
            if range.insert_backing().is_none() {
                continue;
            }
            merged_any = true;
            let chunk_lo_slot = k * self.range_size;
            let chunk_issued = issued
                .saturating_sub(chunk_lo_slot)
                .min(self.range_size);

            let mut make_pages = |col: u32| -> Vec<Arc<Page>> {
                let n = (self.range_size / cap as u64) as u32;
                (0..n)
                    .map(|_| Arc::new(Page::new(PageKind::Base, col, range.range_id, cap, 0)))
                    .collect()
            };
            let mut data_pages: Vec<Vec<Arc<Page>>> = (0..self.schema.num_data_columns)
                .map(&mut make_pages)
                .collect();
            let se_pages = make_pages(self.schema.schema_col());
            let start_pages = make_pages(self.schema.start_col());
            let lut_pages = make_pages(self.schema.last_updated_col());

            for s in 0..chunk_issued {
                let ir_slot = chunk_lo_slot + s;
                let off_t = (ir_slot % tail_cap) as u32;
                let (pidx, poff) = ((s / cap as u64) as usize, (s % cap as u64) as u32);
                let start_cell = self
                    .tt_page(self.schema.start_col(), ir_id, ir_slot)
                    .and_then(|p| p.read_slot(off_t))
                    .unwrap_or(START_TOMBSTONE);
                let resolved = if crate::schema::start_is_pending(start_cell) {
                    let tid = crate::schema::start_pending_txn(start_cell);
                    match self.shared.txns.status(tid) {
                        Some(st) if st.state == TxnState::Committed => Some(st.commit),
                        _ => None,
                    }
                } else if start_cell == START_TOMBSTONE {
                    None
                } else {
                    Some(start_cell)
                };
                match resolved {
                    Some(t) => {
                        for col in 0..self.schema.num_data_columns {
                            if let Some(v) = self
                                .tt_page(col, ir_id, ir_slot)
                                .and_then(|p| p.read_slot(off_t))
                            {
                                data_pages[col as usize][pidx].write_slot(poff, v)?;
                            }
                        }
                        se_pages[pidx].write_slot(poff, SchemaEncoding::new(0).cell())?;
                        start_pages[pidx].write_slot(poff, t)?;
                        lut_pages[pidx].write_slot(poff, t)?;
                    }
                    None => {
                        // aborted insert: tombstoned row, no data cells
                        se_pages[pidx].write_slot(poff, SchemaEncoding::new(0).cell())?;
                        start_pages[pidx].write_slot(poff, START_TOMBSTONE)?;
                        lut_pages[pidx].write_slot(poff, START_TOMBSTONE)?;
                    }
                }
            }

            let install = |col: u32, pages: Vec<Arc<Page>>| {
                for (idx, p) in pages.into_iter().enumerate() {
                    p.seal();
                    self.dir.insert(
                        PageKey::Base {
                            column: col,
                            range_id: range.range_id,
                            idx: idx as u32,
                        },
                        p,
                    );
                }
            };
            for (col, pages) in data_pages.drain(..).enumerate() {
                install(col as u32, pages);
            }
            install(self.schema.schema_col(), se_pages);
            install(self.schema.start_col(), start_pages);
            install(self.schema.last_updated_col(), lut_pages);

            range.clear_insert_backing();
            if self.shared.logging_active() {
                if let Some(wal) = &self.shared.wal {
                    wal.append(&LogPayload::DirectoryOp(DirectoryOp::InsertRangeMerged {
                        table: self.table_id,
                        range_id: range.range_id,
                    }))?;
                }
            }
        }

        if merged_any {
            // table-level tail pages can be discarded permanently once every
            // query that began before the merge has finished
            let mut old = Vec::new();
            let pages_n = (ir.span() / tail_cap) as u32 + 1;
            for col in 0..self.schema.total_columns() {
                for idx in 0..pages_n {
                    if let Some(p) = self.dir.get(PageKey::TableTail {
                        column: col,
                        ir_id,
                        idx,
                    }) {
                        old.push(p);
                    }
                }
            }
            let retire_time = self.shared.clock.next();
            self.shared.epoch.retire_pages(retire_time, old);
            self.shared
                .metrics
                .insert_range_merges
                .fetch_add(1, Ordering::Relaxed);
        }
        Ok(merged_any)
    }

    // ---- historic compression ----------------------------------------------

    /// Re-encode merged-out tail records older than every active snapshot.
    pub fn compress_historic(&self, range_id: u64) -> Result<Option<(u64, u64)>> {
        let range = self
            .range_by_id(range_id)
            .ok_or(Error::UnknownRid(range_id))?;
        let tps = range.published_tps.load(Ordering::SeqCst);
        let from = range.compressed_upto.load(Ordering::SeqCst) + 1;
        if from > tps {
            return Ok(None);
        }
        let floor = self.shared.epoch.floor();
        let mut upto = from - 1;
        for seq in from..=tps {
            if range.is_aborted_seq(seq) {
                upto = seq;
                continue;
            }
            let (_, _, spage, soff) = self.tail_meta_loc(&range, seq)?;
            let cell = spage.read_slot(soff).unwrap_or(START_TOMBSTONE);
            let t = if crate::schema::start_is_pending(cell) {
                match self
                    .shared
                    .txns
                    .status(crate::schema::start_pending_txn(cell))
                {
                    Some(st) if st.state == TxnState::Committed => st.commit,
                    _ => break,
                }
            } else if cell == START_TOMBSTONE {
                break;
            } else {
                cell
            };
            if t >= floor {
                break;
            }
            upto = seq;
        }
        if upto < from {
            return Ok(None);
        }

        let records = self.collect_span_records(&range, from, upto)?;
        let tvs: Vec<TailVersion> = records
            .into_iter()
            .map(|r| TailVersion {
                seq: r.seq,
                base_rid: r.base_rid,
                enc: r.enc,
                time: r.time,
                values: r.values,
            })
            .collect();
        let page = Arc::new(crate::historic::compress(range_id, from, upto, &tvs));
        if self.shared.logging_active() {
            if let Some(lc) = &self.shared.config.logging {
                let path = lc
                    .pages_dir()
                    .join(format!("t{}_h_{}_{}.lshc", self.table_id, range_id, from));
                let _ = std::fs::create_dir_all(lc.pages_dir());
                let _ = std::fs::write(path, page.write_image());
            }
        }
        range.historic.write().push(page);
        range.compressed_upto.store(upto, Ordering::SeqCst);

        // retire tail pages fully covered by the compressed prefix
        let tail_cap = self.shared.config.tail_page_slots as u64;
        let full_pages = (upto / tail_cap) as u32;
        let mut old = Vec::new();
        for col in 0..self.schema.total_columns() {
            for idx in 0..full_pages {
                if let Some(p) = self.dir.get(PageKey::Tail {
                    column: col,
                    range_id,
                    idx,
                }) {
                    if !p.is_sealed() {
                        p.seal();
                        old.push(p);
                    }
                }
            }
        }
        let retire_time = self.shared.clock.next();
        self.shared.epoch.retire_pages(retire_time, old);
        self.shared
            .metrics
            .compressions
            .fetch_add(1, Ordering::Relaxed);
        Ok(Some((from, upto)))
    }

    /// Trigger check after commits touched `range_id`.
    pub(crate) fn maybe_trigger_merge(&self, range_id: u64) {
        if self.shared.replaying.load(Ordering::Acquire) {
            return;
        }
        // cheap pre-check before any locking when ranges merge alone
        if self.shared.config.merge_span_ranges == 1 {
            if let Some(r) = self.range_by_id(range_id) {
                if r.unmerged_resolved() < self.shared.config.effective_merge_threshold() {
                    return;
                }
            }
        }
        let tx = match self.merge_tx.lock().as_ref() {
            Some(tx) => tx.clone(),
            None => return,
        };
        let span = self.shared.config.merge_span_ranges;
        let group = range_id / span;
        let threshold = self.shared.config.effective_merge_threshold();
        let ranges = self.ranges.read();
        let lo = (group * span) as usize;
        let hi = ((group + 1) * span).min(ranges.len() as u64) as usize;
        if lo >= ranges.len() {
            return;
        }
        let backlog: u64 = ranges[lo..hi]
            .iter()
            .filter(|r| r.insert_backing().is_none())
            .map(|r| r.unmerged_resolved())
            .sum();
        if backlog < threshold {
            return;
        }
        for r in &ranges[lo..hi] {
            if r.insert_backing().is_some() {
                continue;
            }
            let wm = r.resolved_watermark();
            if let Ok(cur) = r
                .enqueued_upto
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |cur| {
                    if wm > cur {
                        Some(wm)
                    } else {
                        None
                    }
                })
            {
                let _ = tx.send(MergeMsg::Range(MergeBatch {
                    range_id: r.range_id,
                    from_seq: cur + 1,
                    to_seq: wm,
                    columns: None,
                }));
            }
        }
    }

    pub(crate) fn maybe_compress(&self, range_id: u64) {
        let k = self.shared.config.compress_after_merges;
        if k == 0 || self.shared.config.per_column_merge {
            return;
        }
        if let Some(range) = self.range_by_id(range_id) {
            if range.merges_done.load(Ordering::SeqCst) % k as u64 == 0 {
                let _ = self.compress_historic(range_id);
            }
        }
    }
}

fn duplicate_for_merge(src: &Page, tps: u64) -> Page {
    let out = Page::new(PageKind::Merged, src.column, src.range_id, src.capacity(), tps);
    out.copy_content_from(src);
    out
}

/// Background worker: drains the merge queue FIFO, compressing on cadence.
pub(crate) fn merge_worker(table: Arc<Table>, rx: crossbeam_channel::Receiver<MergeMsg>) {
    for msg in rx.iter() {
        match msg {
            MergeMsg::Stop => break,
            msg => {
                while table.merge_paused.load(Ordering::Acquire) {
                    std::thread::sleep(std::time::Duration::from_micros(200));
                }
                match msg {
                    MergeMsg::Range(batch) => {
                        let range_id = batch.range_id;
                        if table.run_merge_batch(&batch).is_ok() {
                            table.maybe_compress(range_id);
                        }
                    }
                    MergeMsg::InsertRange(ir_id) => {
                        let _ = table.merge_insert_range(ir_id);
                    }
                    MergeMsg::Stop => unreachable!(),
                }
                table.shared.epoch.drain();
            }
        }
    }
}
