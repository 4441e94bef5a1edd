//! Engine facade: table registry, transaction lifecycle, and worker
//! management.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::clock::LogicalClock;
use crate::config::EngineConfig;
use crate::epoch::EpochRegistry;
use crate::error::{Error, Result};
use crate::indirection::{IndirectionCell, Link};
use crate::metrics::Metrics;
use crate::shared::Shared;
use crate::table::{MergeMsg, Table};
use crate::txn::{Isolation, Txn, TxnState, WriteRec};
use crate::wal::{DirectoryOp, LogPayload};

pub struct Engine {
    pub(crate) shared: Arc<Shared>,
    tables: RwLock<Vec<Arc<Table>>>,
    workers: parking_lot::Mutex<Vec<std::thread::JoinHandle<()>>>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Engine> {
        config.validate()?;
        let shared = Shared::new(config)?;
        Ok(Engine {
            shared,
            tables: RwLock::new(Vec::new()),
            workers: parking_lot::Mutex::new(Vec::new()),
        })
    }

    /// Create a table with `num_data_columns` data columns, a primary key on
    /// `key_column`, and the given update-range size (power of two).
    pub fn create_table(
        &self,
        num_data_columns: u32,
        key_column: u32,
        range_size: Option<u64>,
    ) -> Result<Arc<Table>> {
        let range_size = range_size.unwrap_or(self.shared.config.range_size);
        let table_id = self.tables.read().len() as u32;
        if self.shared.logging_active() {
            if let Some(wal) = &self.shared.wal {
                wal.append(&LogPayload::DirectoryOp(DirectoryOp::CreateTable {
                    table: table_id,
                    num_data_columns,
                    key_column,
                    range_size,
                }))?;
                wal.flush()?;
            }
        }
        self.create_table_internal(num_data_columns, key_column, range_size)
    }

    pub(crate) fn create_table_internal(
        &self,
        num_data_columns: u32,
        key_column: u32,
        range_size: u64,
    ) -> Result<Arc<Table>> {
        let table_id = self.tables.read().len() as u32;
        // during replay the logged insert-range events rebuild the spans
        let table = if self.shared.replaying.load(Ordering::Acquire) {
            Table::create_raw(
                Arc::clone(&self.shared),
                table_id,
                num_data_columns,
                key_column,
                range_size,
            )?
        } else {
            Table::create(
                Arc::clone(&self.shared),
                table_id,
                num_data_columns,
                key_column,
                range_size,
            )?
        };
        self.tables.write().push(Arc::clone(&table));
        self.shared.tables.write().push(Arc::downgrade(&table));
        if self.shared.config.background_merge {
            let (tx, rx) = crossbeam_channel::unbounded();
            *table.merge_tx.lock() = Some(tx);
            let t = Arc::clone(&table);
            self.workers
                .lock()
                .push(std::thread::spawn(move || crate::merge::merge_worker(t, rx)));
        }
        Ok(table)
    }

    pub fn table(&self, id: u32) -> Option<Arc<Table>> {
        self.tables.read().get(id as usize).cloned()
    }

    pub fn metrics(&self) -> &Metrics {
        &self.shared.metrics
    }

    pub fn clock(&self) -> &LogicalClock {
        &self.shared.clock
    }

    pub fn epoch(&self) -> &Arc<EpochRegistry> {
        &self.shared.epoch
    }

    // ---- transaction lifecycle -------------------------------------------

    /// Begin a transaction. The begin time doubles as the transaction id and
    /// is strictly greater than any previously issued time.
    pub fn begin(&self) -> Txn {
        self.begin_with(Isolation::RepeatableRead)
    }

    pub fn begin_with(&self, isolation: Isolation) -> Txn {
        let t = self.shared.clock.next();
        self.shared.txns.register(t, t);
        let guard = self.shared.epoch.register(t);
        Txn::new(t, t, isolation, guard, Arc::downgrade(&self.shared))
    }

    /// Acquire a commit time, enter pre-commit, and verify read
    /// repeatability per the transaction's isolation level.
    pub fn validate(&self, txn: &mut Txn) -> Result<()> {
        if txn.state != TxnState::Active {
            return Err(Error::IllegalTxnState);
        }
        let ct = self.shared.clock.next();
        txn.commit_time = Some(ct);
        if !self.shared.txns.set_precommit(txn.id, ct) {
            return Err(Error::IllegalTxnState);
        }
        txn.state = TxnState::PreCommit;

        let full = txn.isolation == Isolation::RepeatableRead;
        for obs in &txn.readset {
            if !full && !obs.speculative {
                continue;
            }
            if obs.speculative {
                let ok = obs
                    .spec_writer
                    .map(|w| {
                        self.shared
                            .txns
                            .status(w)
                            .map(|s| s.state == TxnState::Committed)
                            .unwrap_or(false)
                    })
                    .unwrap_or(true);
                if !ok {
                    self.shared
                        .metrics
                        .validations_failed
                        .fetch_add(1, Ordering::Relaxed);
                    return Err(Error::ValidationFailed);
                }
            }
            let table = match self.shared.table(obs.table) {
                Some(t) => t,
                None => return Err(Error::ValidationFailed),
            };
            let now = table.observe_version(obs.base_rid, ct.saturating_sub(1));
            if now != obs.observed {
                self.shared
                    .metrics
                    .validations_failed
                    .fetch_add(1, Ordering::Relaxed);
                return Err(Error::ValidationFailed);
            }
        }
        Ok(())
    }

    /// Commit: validate if still active, append the commit record durably,
    /// flip the transaction state, and resolve bookkeeping. On validation
    /// failure the transaction is aborted and the error returned.
    pub fn commit(&self, txn: &mut Txn) -> Result<u64> {
        match txn.state {
            TxnState::Active => {
                if let Err(e) = self.validate(txn) {
                    self.abort(txn);
                    return Err(e);
                }
            }
            TxnState::PreCommit => {}
            _ => return Err(Error::IllegalTxnState),
        }
        let ct = txn.commit_time.expect("pre-commit has a commit time");
        if self.shared.logging_active() {
            if let Some(wal) = &self.shared.wal {
                wal.append(&LogPayload::Commit {
                    txn: txn.id,
                    commit_time: ct,
                })?;
                wal.flush()?;
            }
        }
        if !self.shared.txns.set_committed(txn.id) {
            return Err(Error::IllegalTxnState);
        }
        txn.state = TxnState::Committed;
        post_commit_resolve(&self.shared, txn);
        Ok(ct)
    }

    /// Abort: written tail records remain physically but are tombstoned;
    /// indirection cells roll back only when still referencing the aborted
    /// head.
    pub fn abort(&self, txn: &mut Txn) {
        abort_internal(&self.shared, txn);
    }

    // ---- background-worker controls ----------------------------------------

    /// Stall the merge worker of a table (it parks holding nothing).
    pub fn pause_merge(&self, table: &Table) {
        table.merge_paused.store(true, Ordering::SeqCst);
    }

    pub fn resume_merge(&self, table: &Table) {
        table.merge_paused.store(false, Ordering::SeqCst);
    }

    /// Best-effort wait until the merge queue of every table is empty.
    pub fn wait_merge_idle(&self) {
        loop {
            let busy = self.tables.read().iter().any(|t| {
                t.merge_tx
                    .lock()
                    .as_ref()
                    .map(|tx| !tx.is_empty())
                    .unwrap_or(false)
            });
            if !busy {
                // give the worker a moment to finish the in-flight batch
                std::thread::sleep(std::time::Duration::from_millis(2));
                let still = self.tables.read().iter().any(|t| {
                    t.merge_tx
                        .lock()
                        .as_ref()
                        .map(|tx| !tx.is_empty())
                        .unwrap_or(false)
                });
                if !still {
                    return;
                }
            }
            std::thread::sleep(std::time::Duration::from_millis(1));
        }
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        for t in self.tables.read().iter() {
            if let Some(tx) = t.merge_tx.lock().as_ref() {
                let _ = tx.send(MergeMsg::Stop);
            }
        }
        for h in self.workers.lock().drain(..) {
            let _ = h.join();
        }
        if let Some(wal) = &self.shared.wal {
            let _ = wal.flush();
        }
    }
}

pub(crate) fn post_commit_resolve(shared: &Arc<Shared>, txn: &Txn) {
    let ct = txn.commit_time.unwrap_or(0);
    let mut touched_ranges: Vec<(u32, u64)> = Vec::new();
    for w in &txn.writeset {
        match w {
            WriteRec::Update {
                table,
                range_id,
                seqs,
                nseqs,
                index_old,
                ..
            } => {
                if let Some(t) = shared.table(*table) {
                    if let Some(r) = t.range_by_id(*range_id) {
                        for s in &seqs[..*nseqs as usize] {
                            r.mark_resolved(*s, false);
                        }
                    }
                    // superseded index entries leave once no snapshot can
                    // observe them
                    if !index_old.is_empty() {
                        let secondaries = t.secondaries.read();
                        for (col, old) in index_old {
                            if let Some(idx) = secondaries.get(col) {
                                let idx = Arc::clone(idx);
                                let old = *old;
                                let rid = match w {
                                    WriteRec::Update { base_rid, .. } => *base_rid,
                                    _ => unreachable!(),
                                };
                                shared.epoch.retire_action(
                                    ct,
                                    Box::new(move || idx.remove(old, rid)),
                                );
                            }
                        }
                    }
                    if !touched_ranges.contains(&(*table, *range_id)) {
                        touched_ranges.push((*table, *range_id));
                    }
                }
            }
            WriteRec::Insert { table, ir_id, .. } => {
                if let Some(t) = shared.table(*table) {
                    if let Some(ir) = t.insert_range_by_id(*ir_id) {
                        ir.mark_slot_resolved();
                        t.request_insert_merge(&ir);
                    }
                }
            }
        }
    }
    for (table, range_id) in touched_ranges {
        if let Some(t) = shared.table(table) {
            t.maybe_trigger_merge(range_id);
        }
    }
}

pub(crate) fn abort_internal(shared: &Arc<Shared>, txn: &mut Txn) {
    if !matches!(txn.state, TxnState::Active | TxnState::PreCommit) {
        return;
    }
    shared.txns.set_aborted(txn.id);
    txn.state = TxnState::Aborted;
    for w in txn.writeset.iter().rev() {
        match w {
            WriteRec::Update {
                table,
                base_rid,
                range_id,
                seqs,
                nseqs,
                new_head,
                prev_link,
                index_new,
                ..
            } => {
                if let Some(t) = shared.table(*table) {
                    if let Some(r) = t.range_by_id(*range_id) {
                        // roll the forward pointer back only if it still
                        // references the aborted head
                        let (ipage, ioff) = t.ind_cell_loc(&r, *base_rid);
                        IndirectionCell(ipage.cell(ioff))
                            .rollback(Link::Tail(*new_head), *prev_link);
                        for s in &seqs[..*nseqs as usize] {
                            r.mark_resolved(*s, true);
                        }
                    }
                    let secondaries = t.secondaries.read();
                    for (col, v) in index_new {
                        if let Some(idx) = secondaries.get(col) {
                            idx.remove(*v, *base_rid);
                        }
                    }
                }
            }
            WriteRec::Insert {
                table,
                base_rid,
                ir_id,
                key,
            } => {
                if let Some(t) = shared.table(*table) {
                    t.primary.remove_if(*key, *base_rid);
                    if let Some(ir) = t.insert_range_by_id(*ir_id) {
                        ir.mark_slot_resolved();
                        t.request_insert_merge(&ir);
                    }
                }
            }
        }
    }
}
