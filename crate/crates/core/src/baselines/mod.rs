//! Comparison storage backends sharing the columnar page layer and a
//! record-level API: in-place update with a history table, and a delta
//! store with a blocking merge. The benchmark selects between them and the
//! lineage store behind one trait.

pub mod dbm;
pub mod iuh;

use std::sync::Arc;

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::table::Table;
use crate::txn::{Isolation, Txn};

pub use dbm::DbmEngine;
pub use iuh::IuhEngine;

/// Transaction handle for whichever backend issued it.
pub enum BackendTxn {
    LStore(Txn),
    Iuh(iuh::IuhTxn),
    Dbm(dbm::DbmTxn),
}

impl BackendTxn {
    pub fn begin_time(&self) -> u64 {
        match self {
            BackendTxn::LStore(t) => t.begin,
            BackendTxn::Iuh(t) => t.begin,
            BackendTxn::Dbm(t) => t.inner.begin,
        }
    }
}

/// Record-level storage API shared by every backend.
pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;
    fn begin(&self, isolation: Isolation) -> BackendTxn;
    fn insert(&self, txn: &mut BackendTxn, values: &[u64]) -> Result<u64>;
    fn update(&self, txn: &mut BackendTxn, key: u64, updates: &[(u32, u64)]) -> Result<()>;
    fn delete(&self, txn: &mut BackendTxn, key: u64) -> Result<()>;
    fn select(&self, txn: &mut BackendTxn, key: u64, mask: u64)
        -> Result<Option<Vec<Option<u64>>>>;
    fn scan_sum(&self, txn: &mut BackendTxn, column: u32, limit: u64) -> Result<u128>;
    fn commit(&self, txn: &mut BackendTxn) -> Result<u64>;
    fn abort(&self, txn: &mut BackendTxn);
    /// Hash of the latest committed visible state, for cross-backend
    /// equivalence checks.
    fn state_fingerprint(&self) -> u64;
    /// Consolidate load-phase state before the measured run.
    fn settle_load(&self) {}
    /// Merge work performed in the background (0 where not applicable).
    fn merges_completed(&self) -> u64 {
        0
    }
    /// Wall-clock nanoseconds transactions spent blocked on engine-wide
    /// barriers (0 for non-blocking designs).
    fn barrier_stall_nanos(&self) -> u64 {
        0
    }
}

/// The lineage store behind the backend trait.
pub struct LStoreBackend {
    pub engine: Arc<Engine>,
    pub table: Arc<Table>,
}

impl LStoreBackend {
    pub fn new(engine: Arc<Engine>, table: Arc<Table>) -> Self {
        LStoreBackend { engine, table }
    }
}

fn as_lstore(txn: &mut BackendTxn) -> Result<&mut Txn> {
    match txn {
        BackendTxn::LStore(t) => Ok(t),
        _ => Err(Error::IllegalTxnState),
    }
}

impl Backend for LStoreBackend {
    fn name(&self) -> &'static str {
        "lstore"
    }

    fn begin(&self, isolation: Isolation) -> BackendTxn {
        BackendTxn::LStore(self.engine.begin_with(isolation))
    }

    fn insert(&self, txn: &mut BackendTxn, values: &[u64]) -> Result<u64> {
        self.table.insert(as_lstore(txn)?, values)
    }

    fn update(&self, txn: &mut BackendTxn, key: u64, updates: &[(u32, u64)]) -> Result<()> {
        let t = as_lstore(txn)?;
        let rid = self.table.lookup_rid(key).ok_or(Error::UnknownRid(key))?;
        self.table.update(t, rid, updates).map(|_| ())
    }

    fn delete(&self, txn: &mut BackendTxn, key: u64) -> Result<()> {
        let t = as_lstore(txn)?;
        let rid = self.table.lookup_rid(key).ok_or(Error::UnknownRid(key))?;
        self.table.delete(t, rid).map(|_| ())
    }

    fn select(
        &self,
        txn: &mut BackendTxn,
        key: u64,
        mask: u64,
    ) -> Result<Option<Vec<Option<u64>>>> {
        let t = as_lstore(txn)?;
        Ok(self
            .table
            .select_latest(t, key, mask)?
            .map(|rec| rec.values))
    }

    fn scan_sum(&self, txn: &mut BackendTxn, column: u32, limit: u64) -> Result<u128> {
        let t = as_lstore(txn)?;
        self.table.scan_sum(t, column, limit)
    }

    fn commit(&self, txn: &mut BackendTxn) -> Result<u64> {
        self.engine.commit(as_lstore(txn)?)
    }

    fn abort(&self, txn: &mut BackendTxn) {
        if let Ok(t) = as_lstore(txn) {
            self.engine.abort(t);
        }
    }

    fn state_fingerprint(&self) -> u64 {
        self.table.state_fingerprint()
    }

    fn merges_completed(&self) -> u64 {
        self.engine
            .metrics()
            .merges_completed
            .load(std::sync::atomic::Ordering::Relaxed)
    }

    fn settle_load(&self) {
        let _ = self.table.rotate_insert_range();
        self.engine.wait_merge_idle();
    }
}
