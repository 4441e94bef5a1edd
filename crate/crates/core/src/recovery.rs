//! Crash recovery. The redo log is replayed from the top: directory ops
//! recreate tables, insert ranges, and tail-rid blocks; tail appends rebuild
//! tail pages past each loaded page image's pageLSN; commit records decide
//! transaction outcomes. Tail records of transactions without a commit
//! record are tombstoned, the indirection column is rebuilt from the logged
//! base-rid links in log order, and merges re-run from the rebuilt state
//! (merging is idempotent, so partial pre-crash merge output is simply
//! discarded).

use std::collections::HashMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::directory::PageKey;
use crate::engine::Engine;
use crate::error::Result;
use crate::indirection::{encode, Link};
use crate::page::Page;
use crate::range::TailBlock;
use crate::rid::Rid;
use crate::table::Table;
use crate::txn::TxnState;
use crate::wal::{read_log_file, DirectoryOp, LogPayload, RedoRecord};

#[derive(Default)]
struct ReplayState {
    /// (table, txn, base_rid, tail_rid, seq, table_level, key_value)
    appends: Vec<AppendInfo>,
    commits: HashMap<u64, u64>,
    txn_ids: Vec<u64>,
    max_lsn: u64,
}

struct AppendInfo {
    table: u32,
    txn: u64,
    base_rid: Rid,
    seq: u64,
    table_level: bool,
    tail_rid: Rid,
    key_value: Option<u64>,
}

impl Engine {
    /// Cold-start recovery: rebuild engine state from the log (and any
    /// flushed page images) in the configured logging directory.
    pub fn recover(config: crate::config::EngineConfig) -> Result<Engine> {
        config.validate()?;
        let log_cfg = config
            .logging
            .clone()
            .ok_or_else(|| crate::error::Error::InvalidParameter("recovery requires logging".into()))?;
        let (records, valid_len) = read_log_file(&log_cfg.log_path())?;
        // truncate the torn/corrupt suffix so future appends stay readable
        if log_cfg.log_path().exists() {
            let f = std::fs::OpenOptions::new()
                .write(true)
                .open(log_cfg.log_path())?;
            f.set_len(valid_len as u64)?;
        }

        let engine = Engine::new(config)?;
        engine.shared.replaying.store(true, Ordering::SeqCst);
        let mut st = ReplayState::default();

        for rec in &records {
            engine.replay_record(rec, &mut st)?;
        }
        engine.finish_replay(&st)?;
        engine.shared.replaying.store(false, Ordering::SeqCst);
        Ok(engine)
    }

    fn replay_record(&self, rec: &RedoRecord, st: &mut ReplayState) -> Result<()> {
        st.max_lsn = st.max_lsn.max(rec.lsn);
        match &rec.payload {
            LogPayload::DirectoryOp(op) => match op {
                DirectoryOp::CreateTable {
                    num_data_columns,
                    key_column,
                    range_size,
                    ..
                } => {
                    let table =
                        self.create_table_internal(*num_data_columns, *key_column, *range_size)?;
                    self.load_page_images(&table)?;
                }
                DirectoryOp::InsertRangeOpened {
                    table,
                    base_lo,
                    base_hi,
                    tt_first_rid,
                    ..
                } => {
                    if let Some(t) = self.shared.table(*table) {
                        t.install_insert_range(*base_lo, *base_hi, *tt_first_rid);
                    }
                }
                DirectoryOp::InsertRangeRotated { table, ir_id } => {
                    if let Some(t) = self.shared.table(*table) {
                        if let Some(ir) = t.insert_range_by_id(*ir_id) {
                            ir.close();
                        }
                    }
                }
                DirectoryOp::TailBlockAllocated {
                    table,
                    range_id,
                    first_rid,
                    len,
                    first_seq,
                } => {
                    if let Some(t) = self.shared.table(*table) {
                        if let Some(r) = t.range_by_id(*range_id) {
                            r.restore_block(TailBlock {
                                first_rid: *first_rid,
                                len: *len,
                                first_seq: *first_seq,
                            });
                        }
                    }
                }
                DirectoryOp::InsertRangeMerged { .. } => {}
            },
            LogPayload::TailAppend {
                table,
                txn,
                base_rid,
                tail_rid,
                seq,
                table_level,
                enc,
                start_cell,
                indirection_cell,
                cols,
            } => {
                if let Some(t) = self.shared.table(*table) {
                    t.replay_append(
                        rec.lsn,
                        *base_rid,
                        *seq,
                        *table_level,
                        *enc,
                        *start_cell,
                        *indirection_cell,
                        cols,
                    )?;
                    let key_value = if *table_level {
                        cols.iter()
                            .find(|(c, _)| *c == t.schema.key_column)
                            .map(|(_, v)| *v)
                    } else {
                        None
                    };
                    st.appends.push(AppendInfo {
                        table: *table,
                        txn: *txn,
                        base_rid: *base_rid,
                        seq: *seq,
                        table_level: *table_level,
                        tail_rid: *tail_rid,
                        key_value,
                    });
                    st.txn_ids.push(*txn);
                }
            }
            LogPayload::Commit { txn, commit_time } => {
                st.commits.insert(*txn, *commit_time);
                st.txn_ids.push(*txn);
            }
            LogPayload::MergeOp { .. } => {}
        }
        Ok(())
    }

    fn finish_replay(&self, st: &ReplayState) -> Result<()> {
        // transaction outcomes: anything without a commit record aborted
        let mut seen: HashMap<u64, ()> = HashMap::new();
        for &txn in &st.txn_ids {
            if seen.insert(txn, ()).is_some() {
                continue;
            }
            match st.commits.get(&txn) {
                Some(ct) => self
                    .shared
                    .txns
                    .install(txn, txn, TxnState::Committed, *ct),
                None => self.shared.txns.install(txn, txn, TxnState::Aborted, 0),
            }
        }

        // watermarks: every allocated seq is terminal now; holes (allocated
        // but never logged) are tombstoned
        let mut logged: HashMap<(u32, u64, u64), bool> = HashMap::new();
        for a in st.appends.iter().filter(|a| !a.table_level) {
            let committed = st.commits.contains_key(&a.txn);
            if let Some(t) = self.shared.table(a.table) {
                if let Ok(r) = t.range_of_unchecked(a.base_rid) {
                    logged.insert((a.table, r.range_id, a.seq), committed);
                }
            }
        }
        let tables: Vec<Arc<Table>> = {
            let v = self.shared.tables.read();
            v.iter().filter_map(|w| w.upgrade()).collect()
        };
        for t in &tables {
            for range_id in 0..t.num_ranges() as u64 {
                if let Some(r) = t.range_by_id(range_id) {
                    let upto = r.last_allocated_seq();
                    for seq in 1..=upto {
                        let committed = logged
                            .get(&(t.table_id, range_id, seq))
                            .copied()
                            .unwrap_or(false);
                        r.mark_resolved(seq, !committed);
                    }
                }
            }
        }

        // indirection rebuild: last committed regular tail record per base
        // record, in log order
        let mut heads: HashMap<(u32, Rid), Rid> = HashMap::new();
        for a in st.appends.iter().filter(|a| !a.table_level) {
            if st.commits.contains_key(&a.txn) {
                heads.insert((a.table, a.base_rid), a.tail_rid);
            }
        }
        for ((table, base_rid), tail_rid) in heads {
            if let Some(t) = self.shared.table(table) {
                if let Ok(range) = t.range_of_unchecked(base_rid) {
                    let (page, off) = t.ind_cell_loc(&range, base_rid);
                    page.cell(off)
                        .store(encode(Link::Tail(tail_rid)), Ordering::Release);
                }
            }
        }

        // primary index: committed inserts in commit-time order
        let mut inserts: Vec<(u64, u64, u32, Rid)> = st
            .appends
            .iter()
            .filter(|a| a.table_level)
            .filter_map(|a| {
                let ct = st.commits.get(&a.txn)?;
                Some((*ct, a.key_value?, a.table, a.base_rid))
            })
            .collect();
        inserts.sort_unstable();
        for (_, key, table, rid) in inserts {
            if let Some(t) = self.shared.table(table) {
                t.primary.write_lock().insert(key, rid);
            }
        }

        // insert-range issuance and resolution
        let mut ir_issued: HashMap<(u32, u64), u64> = HashMap::new();
        for a in st.appends.iter().filter(|a| a.table_level) {
            let e = ir_issued.entry((a.table, ir_of(&tables, a))).or_insert(0);
            *e = (*e).max(a.seq);
        }
        for t in &tables {
            for ir_id in 0.. {
                let ir = match t.insert_range_by_id(ir_id) {
                    Some(ir) => ir,
                    None => break,
                };
                let issued = ir_issued
                    .get(&(t.table_id, ir_id))
                    .copied()
                    .unwrap_or(0);
                ir.restore_slots(issued, issued);
            }
        }

        // clocks and allocators
        let mut max_time = 0u64;
        for (&txn, &ct) in &st.commits {
            max_time = max_time.max(txn).max(ct);
        }
        for &txn in &st.txn_ids {
            max_time = max_time.max(txn);
        }
        self.shared.clock.set_next(max_time + 1);
        if let Some(wal) = &self.shared.wal {
            wal.set_next_lsn(st.max_lsn);
        }
        for t in &tables {
            let mut next_base = 0u64;
            let mut lowest_tail = u64::MAX;
            for ir_id in 0.. {
                let ir = match t.insert_range_by_id(ir_id) {
                    Some(ir) => ir,
                    None => break,
                };
                next_base = next_base.max(ir.base_hi);
                lowest_tail = lowest_tail.min(ir.tt_first_rid - (ir.span() - 1));
            }
            for range_id in 0..t.num_ranges() as u64 {
                if let Some(r) = t.range_by_id(range_id) {
                    for b in r.blocks_snapshot() {
                        lowest_tail = lowest_tail.min(b.first_rid - (b.len - 1));
                    }
                }
            }
            t.rids.restore(next_base, lowest_tail.saturating_sub(1));
        }

        // re-run eligible insert-range merges; regular merges follow the
        // normal triggers from here on
        for t in &tables {
            for ir_id in 0.. {
                let ir = match t.insert_range_by_id(ir_id) {
                    Some(ir) => ir,
                    None => break,
                };
                if ir.merge_eligible() {
                    t.merge_insert_range(ir.ir_id)?;
                }
            }
        }
        Ok(())
    }

    /// Load flushed tail/table-level page images so replay can skip records
    /// already reflected (record LSN at or below the image's pageLSN).
    fn load_page_images(&self, table: &Arc<Table>) -> Result<()> {
        let lc = match &self.shared.config.logging {
            Some(lc) => lc,
            None => return Ok(()),
        };
        let dir = lc.pages_dir();
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(_) => return Ok(()),
        };
        let prefix = format!("t{}_", table.table_id);
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.starts_with(&prefix) || !name.ends_with(".lspg") {
                continue;
            }
            let rest = name.trim_end_matches(".lspg");
            let parts: Vec<&str> = rest.split('_').collect();
            if parts.len() != 5 {
                continue;
            }
            let tag = parts[1];
            let (col, owner, idx) = match (
                parts[2].parse::<u32>(),
                parts[3].parse::<u64>(),
                parts[4].parse::<u32>(),
            ) {
                (Ok(c), Ok(o), Ok(i)) => (c, o, i),
                _ => continue,
            };
            let bytes = match std::fs::read(entry.path()) {
                Ok(b) => b,
                Err(_) => continue,
            };
            let cap = self.shared.config.tail_page_slots;
            let page = match Page::read_image(&bytes, cap) {
                Ok(p) => Arc::new(p),
                Err(_) => continue, // torn image: rebuilt from the log instead
            };
            let key = match tag {
                "t" => PageKey::Tail {
                    column: col,
                    range_id: owner,
                    idx,
                },
                "tt" => PageKey::TableTail {
                    column: col,
                    ir_id: owner,
                    idx,
                },
                _ => continue,
            };
            table.dir.insert(key, page);
        }
        Ok(())
    }
}

fn ir_of(tables: &[Arc<Table>], a: &AppendInfo) -> u64 {
    tables
        .iter()
        .find(|t| t.table_id == a.table)
        .and_then(|t| {
            t.range_of_unchecked(a.base_rid)
                .ok()
                .and_then(|r| r.insert_backing().map(|b| b.ir_id))
        })
        .unwrap_or(0)
}

impl Table {
    /// Re-execute one logged tail append. Pages already carrying the change
    /// (image pageLSN at or past the record) are left alone.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn replay_append(
        &self,
        lsn: u64,
        base_rid: Rid,
        seq: u64,
        table_level: bool,
        enc: u64,
        start_cell: u64,
        indirection_cell: u64,
        cols: &[(u32, u64)],
    ) -> Result<()> {
        let meta = [
            (self.schema.schema_col(), enc),
            (self.schema.start_col(), start_cell),
            (self.schema.indirection_col(), indirection_cell),
            (self.schema.base_rid_col(), base_rid),
        ];
        if table_level {
            let range = self.range_of_unchecked(base_rid)?;
            let b = match range.insert_backing() {
                Some(b) => b,
                None => return Ok(()),
            };
            let ir = self
                .insert_range_by_id(b.ir_id)
                .ok_or(crate::error::Error::UnknownRid(base_rid))?;
            let slot = base_rid - ir.base_lo;
            let cap = self.shared.config.tail_page_slots as u64;
            let off = (slot % cap) as u32;
            for (c, v) in cols.iter().chain(meta.iter()) {
                let p = self.tt_page_for_replay(*c, ir.ir_id, slot);
                if lsn > p.page_lsn() && !p.is_present(off) {
                    p.write_slot(off, *v)?;
                }
                p.set_page_lsn(lsn);
            }
        } else {
            let range = self.range_of_unchecked(base_rid)?;
            let cap = self.shared.config.tail_page_slots as u64;
            let off = ((seq - 1) % cap) as u32;
            for (c, v) in cols.iter().chain(meta.iter()) {
                let p = self.tail_page_for_replay(*c, range.range_id, seq);
                if lsn > p.page_lsn() && !p.is_present(off) {
                    p.write_slot(off, *v)?;
                }
                p.set_page_lsn(lsn);
            }
            range.restore_next_seq(seq);
        }
        Ok(())
    }

    /// Range lookup without issuance checks (replay runs before issuance
    /// state is restored).
    pub(crate) fn range_of_unchecked(
        &self,
        base_rid: Rid,
    ) -> Result<Arc<crate::range::UpdateRange>> {
        let idx = (base_rid / self.range_size) as usize;
        self.ranges
            .read()
            .get(idx)
            .cloned()
            .ok_or(crate::error::Error::UnknownRid(base_rid))
    }

    fn tail_page_for_replay(&self, column: u32, range_id: u64, seq: u64) -> Arc<Page> {
        let cap = self.shared.config.tail_page_slots;
        let idx = ((seq - 1) / cap as u64) as u32;
        self.dir.get_or_insert_with(PageKey::Tail { column, range_id, idx }, || {
            Arc::new(Page::new(
                crate::page::PageKind::Tail,
                column,
                range_id,
                cap,
                0,
            ))
        })
    }

    fn tt_page_for_replay(&self, column: u32, ir_id: u64, slot: u64) -> Arc<Page> {
        let cap = self.shared.config.tail_page_slots;
        let idx = (slot / cap as u64) as u32;
        self.dir.get_or_insert_with(PageKey::TableTail { column, ir_id, idx }, || {
            Arc::new(Page::new(
                crate::page::PageKind::Tail,
                column,
                ir_id,
                cap,
                0,
            ))
        })
    }
}
