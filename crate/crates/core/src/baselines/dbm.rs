//! Delta + blocking merge backend: the same columnar append machinery as
//! the lineage store (main store pages plus per-range delta appends behind
//! the indirection column), but consolidation drains all active
//! transactions first — transactions hold a shared engine barrier for their
//! whole lifetime and the merge takes it exclusively, so every merge stalls
//! the workload for its duration.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::config::EngineConfig;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::table::Table;
use crate::txn::{Isolation, Txn};

use super::{Backend, BackendTxn};

pub struct DbmTxn {
    pub inner: Txn,
    _barrier: parking_lot::lock_api::ArcRwLockReadGuard<parking_lot::RawRwLock, ()>,
}

pub struct DbmEngine {
    engine: Arc<Engine>,
    table: Arc<Table>,
    barrier: Arc<RwLock<()>>,
    /// Unmerged-record threshold per range that triggers a blocking merge.
    merge_threshold: u64,
    stall_nanos: AtomicU64,
    merges: AtomicU64,
    worker: parking_lot::Mutex<Option<std::thread::JoinHandle<()>>>,
    stop: Arc<std::sync::atomic::AtomicBool>,
}

impl DbmEngine {
    pub fn new(
        num_data_columns: u32,
        key_column: u32,
        range_size: u64,
        merge_threshold: u64,
    ) -> Result<Arc<DbmEngine>> {
        let config = EngineConfig {
            background_merge: false, // merges run through the barrier worker
            compress_after_merges: 0,
            range_size,
            insert_range_size: range_size,
            ..EngineConfig::default()
        };
        let engine = Arc::new(Engine::new(config)?);
        let table = engine.create_table(num_data_columns, key_column, Some(range_size))?;
        let dbm = Arc::new(DbmEngine {
            engine,
            table,
            barrier: Arc::new(RwLock::new(())),
            merge_threshold: merge_threshold.max(1),
            stall_nanos: AtomicU64::new(0),
            merges: AtomicU64::new(0),
            stop: Arc::new(std::sync::atomic::AtomicBool::new(false)),
            worker: parking_lot::Mutex::new(None),
        });
        let w = Arc::clone(&dbm);
        *dbm.worker.lock() = Some(std::thread::spawn(move || w.merge_loop()));
        Ok(dbm)
    }

    fn merge_loop(&self) {
        while !self.stop.load(Ordering::Acquire) {
            let mut any = false;
            for range_id in 0..self.table.num_ranges() as u64 {
                let backlog = self
                    .table
                    .resolved_watermark(range_id)
                    .saturating_sub(self.table.published_tps(range_id));
                if backlog >= self.merge_threshold && self.blocking_merge(range_id) {
                    any = true;
                }
            }
            if !any {
                std::thread::sleep(std::time::Duration::from_micros(200));
            }
        }
    }

    /// Consolidate unmerged insert ranges after the load phase.
    pub fn settle_load(&self) {
        let _ = self.table.rotate_insert_range();
        for ir_id in 0.. {
            match self.table.merge_insert_range(ir_id) {
                Ok(_) => {}
                Err(_) => break,
            }
        }
    }

    /// Drain all active transactions (new ones queue on the barrier), then
    /// consolidate the range's delta into a new main generation. Returns
    /// whether a merge ran.
    fn blocking_merge(&self, range_id: u64) -> bool {
        if self
            .table
            .resolved_watermark(range_id)
            .saturating_sub(self.table.published_tps(range_id))
            == 0
        {
            return false; // empty delta: no-op, no barrier
        }
        let t0 = std::time::Instant::now();
        let _excl = self.barrier.write();
        // delta consolidation regenerates the range's whole main store
        let merged = matches!(self.table.merge_now_rewrite_all(range_id), Ok(Some(_)));
        if merged {
            self.merges.fetch_add(1, Ordering::Relaxed);
        }
        self.stall_nanos
            .fetch_add(t0.elapsed().as_nanos() as u64, Ordering::Relaxed);
        merged
    }

    /// Consolidate everything outstanding (tests use this deterministically).
    pub fn merge_all(&self) {
        for range_id in 0..self.table.num_ranges() as u64 {
            self.blocking_merge(range_id);
        }
    }
}

impl Drop for DbmEngine {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.worker.lock().take() {
            let _ = h.join();
        }
    }
}

fn as_dbm(txn: &mut BackendTxn) -> Result<&mut DbmTxn> {
    match txn {
        BackendTxn::Dbm(t) => Ok(t),
        _ => Err(Error::IllegalTxnState),
    }
}

impl Backend for Arc<DbmEngine> {
    fn name(&self) -> &'static str {
        "dbm"
    }

    fn begin(&self, isolation: Isolation) -> BackendTxn {
        // queued behind any in-progress merge; the wait is the measured stall
        let t0 = std::time::Instant::now();
        let guard = self.barrier.read_arc();
        let waited = t0.elapsed().as_nanos() as u64;
        if waited > 1_000 {
            self.stall_nanos.fetch_add(waited, Ordering::Relaxed);
        }
        BackendTxn::Dbm(DbmTxn {
            inner: self.engine.begin_with(isolation),
            _barrier: guard,
        })
    }

    fn insert(&self, txn: &mut BackendTxn, values: &[u64]) -> Result<u64> {
        let t = as_dbm(txn)?;
        self.table.insert(&mut t.inner, values)
    }

    fn update(&self, txn: &mut BackendTxn, key: u64, updates: &[(u32, u64)]) -> Result<()> {
        let t = as_dbm(txn)?;
        let rid = self.table.lookup_rid(key).ok_or(Error::UnknownRid(key))?;
        self.table.update(&mut t.inner, rid, updates).map(|_| ())
    }

    fn delete(&self, txn: &mut BackendTxn, key: u64) -> Result<()> {
        let t = as_dbm(txn)?;
        let rid = self.table.lookup_rid(key).ok_or(Error::UnknownRid(key))?;
        self.table.delete(&mut t.inner, rid).map(|_| ())
    }

    fn select(
        &self,
        txn: &mut BackendTxn,
        key: u64,
        mask: u64,
    ) -> Result<Option<Vec<Option<u64>>>> {
        let t = as_dbm(txn)?;
        Ok(self
            .table
            .select_latest(&mut t.inner, key, mask)?
            .map(|rec| rec.values))
    }

    fn scan_sum(&self, txn: &mut BackendTxn, column: u32, limit: u64) -> Result<u128> {
        let t = as_dbm(txn)?;
        self.table.scan_sum(&t.inner, column, limit)
    }

    fn commit(&self, txn: &mut BackendTxn) -> Result<u64> {
        let t = as_dbm(txn)?;
        self.engine.commit(&mut t.inner)
    }

    fn abort(&self, txn: &mut BackendTxn) {
        if let Ok(t) = as_dbm(txn) {
            self.engine.abort(&mut t.inner);
        }
    }

    fn state_fingerprint(&self) -> u64 {
        self.table.state_fingerprint()
    }

    fn merges_completed(&self) -> u64 {
        self.merges.load(Ordering::Relaxed)
    }

    fn barrier_stall_nanos(&self) -> u64 {
        self.stall_nanos.load(Ordering::Relaxed)
    }

    fn settle_load(&self) {
        DbmEngine::settle_load(self);
    }
}
