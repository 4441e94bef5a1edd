//! Optimistic multi-version concurrency control. Transactions read committed
//! visible versions as of their begin time, detect write-write conflicts via
//! the latch bit of the indirection cell, and validate read repeatability at
//! commit time. Start-time cells written by a transaction hold its id until
//! future readers lazily swap in the commit time.

use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};

use dashmap::DashMap;

use crate::epoch::QueryGuard;
use crate::indirection::Link;
use crate::rid::Rid;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TxnState {
    Active = 0,
    PreCommit = 1,
    Committed = 2,
    Aborted = 3,
}

impl TxnState {
    fn from_u8(v: u8) -> TxnState {
        match v {
            0 => TxnState::Active,
            1 => TxnState::PreCommit,
            2 => TxnState::Committed,
            _ => TxnState::Aborted,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Isolation {
    /// No validation; reads see latest committed as of begin.
    ReadCommitted,
    /// Snapshot reads; validation only of speculative entries.
    Snapshot,
    /// Full read-set validation at commit time.
    RepeatableRead,
}

struct TxnEntry {
    state: AtomicU8,
    begin: u64,
    commit: AtomicU64,
}

/// Transaction states and times, keyed by transaction id. A start-time cell
/// holding a transaction id always resolves here.
pub struct TxnTable {
    map: DashMap<u64, TxnEntry, crate::directory::FastState>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxnStatus {
    pub state: TxnState,
    pub begin: u64,
    /// Commit time; valid in PreCommit and Committed states.
    pub commit: u64,
}

impl TxnTable {
    pub fn new() -> Self {
        TxnTable {
            map: DashMap::with_hasher(crate::directory::FastState::default()),
        }
    }

    pub fn register(&self, txn_id: u64, begin: u64) {
        self.map.insert(
            txn_id,
            TxnEntry {
                state: AtomicU8::new(TxnState::Active as u8),
                begin,
                commit: AtomicU64::new(0),
            },
        );
    }

    pub fn status(&self, txn_id: u64) -> Option<TxnStatus> {
        self.map.get(&txn_id).map(|e| TxnStatus {
            state: TxnState::from_u8(e.state.load(Ordering::Acquire)),
            begin: e.begin,
            commit: e.commit.load(Ordering::Acquire),
        })
    }

    /// Atomically enter pre-commit with the acquired commit time. The commit
    /// time is claimed first so no reader ever observes the pre-commit state
    /// without it.
    pub fn set_precommit(&self, txn_id: u64, commit_time: u64) -> bool {
        if let Some(e) = self.map.get(&txn_id) {
            if e.commit
                .compare_exchange(0, commit_time, Ordering::AcqRel, Ordering::Acquire)
                .is_err()
            {
                return false;
            }
            return e
                .state
                .compare_exchange(
                    TxnState::Active as u8,
                    TxnState::PreCommit as u8,
                    Ordering::AcqRel,
                    Ordering::Acquire,
                )
                .is_ok();
        }
        false
    }

    pub fn set_committed(&self, txn_id: u64) -> bool {
        if let Some(e) = self.map.get(&txn_id) {
            return e
                .state
                .compare_exchange(
                    TxnState::PreCommit as u8,
                    TxnState::Committed as u8,
                    Ordering::AcqRel,
                    Ordering::Acquire,
                )
                .is_ok();
        }
        false
    }

    pub fn set_aborted(&self, txn_id: u64) {
        if let Some(e) = self.map.get(&txn_id) {
            e.state.store(TxnState::Aborted as u8, Ordering::Release);
        }
    }

    /// Recovery helper: install a terminal state directly.
    pub fn install(&self, txn_id: u64, begin: u64, state: TxnState, commit: u64) {
        self.map.insert(
            txn_id,
            TxnEntry {
                state: AtomicU8::new(state as u8),
                begin,
                commit: AtomicU64::new(commit),
            },
        );
    }
}

impl Default for TxnTable {
    fn default() -> Self {
        Self::new()
    }
}

/// What a read observed, recorded for validation. Identified by resolved
/// version time rather than physical rid so that historic compression of the
/// observed version between read and validate cannot fail a valid read.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ObservedVersion {
    pub found: bool,
    pub deleted: bool,
    /// Resolved start time of the visible version (0 when not found).
    pub time: u64,
}

impl ObservedVersion {
    pub fn not_found() -> Self {
        ObservedVersion {
            found: false,
            deleted: false,
            time: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ReadObs {
    pub table: u32,
    pub base_rid: Rid,
    pub observed: ObservedVersion,
    pub speculative: bool,
    /// Writer txn id observed for speculative reads (must commit).
    pub spec_writer: Option<u64>,
}

#[derive(Clone, Debug)]
pub(crate) enum WriteRec {
    Update {
        table: u32,
        base_rid: Rid,
        range_id: u64,
        /// One or two seqs (value record, optionally preceded by a snapshot).
        seqs: [u64; 2],
        nseqs: u8,
        new_head: Rid,
        prev_link: Link,
        /// (column, old committed value) for indexed columns, for deferred
        /// index-entry removal.
        index_old: Vec<(u32, u64)>,
        /// (column, new value) entries added to secondary indexes.
        index_new: Vec<(u32, u64)>,
    },
    Insert {
        table: u32,
        base_rid: Rid,
        ir_id: u64,
        key: u64,
    },
}

/// Client-owned transaction context. Dropping an unfinished transaction
/// aborts it.
pub struct Txn {
    pub id: u64,
    pub begin: u64,
    pub commit_time: Option<u64>,
    pub isolation: Isolation,
    pub(crate) state: TxnState,
    pub(crate) readset: Vec<ReadObs>,
    pub(crate) writeset: Vec<WriteRec>,
    pub(crate) guard: Option<QueryGuard>,
    pub(crate) shared: std::sync::Weak<crate::shared::Shared>,
    /// Record locations touched by the last point read (instrumentation).
    pub last_read_locations: u64,
}

impl Txn {
    pub fn is_active(&self) -> bool {
        self.state == TxnState::Active
    }

    pub fn state(&self) -> TxnState {
        self.state
    }

    pub(crate) fn new(
        id: u64,
        begin: u64,
        isolation: Isolation,
        guard: QueryGuard,
        shared: std::sync::Weak<crate::shared::Shared>,
    ) -> Txn {
        Txn {
            id,
            begin,
            commit_time: None,
            isolation,
            state: TxnState::Active,
            readset: Vec::new(),
            writeset: Vec::new(),
            guard: Some(guard),
            shared,
            last_read_locations: 0,
        }
    }
}

impl Drop for Txn {
    fn drop(&mut self) {
        if matches!(self.state, TxnState::Active | TxnState::PreCommit) {
            if let Some(shared) = self.shared.upgrade() {
                crate::engine::abort_internal(&shared, self);
            }
        }
        self.guard.take();
    }
}

/// Visibility rule for one read: versions with resolved start time at or
/// below `bound` qualify, own writes always qualify, and pre-committed
/// writers qualify when `speculative`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Visibility {
    pub bound: u64,
    pub own: Option<u64>,
    pub speculative: bool,
}

impl Visibility {
    /// Time-travel bound: greatest version with start time <= `as_of`.
    pub fn as_of(as_of: u64) -> Visibility {
        Visibility {
            bound: as_of,
            own: None,
            speculative: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_transitions() {
        let t = TxnTable::new();
        t.register(5, 100);
        assert_eq!(
            t.status(5).unwrap(),
            TxnStatus {
                state: TxnState::Active,
                begin: 100,
                commit: 0
            }
        );
        assert!(t.set_precommit(5, 110));
        assert!(!t.set_precommit(5, 111));
        assert!(t.set_committed(5));
        assert_eq!(t.status(5).unwrap().state, TxnState::Committed);
        assert_eq!(t.status(5).unwrap().commit, 110);
    }

    #[test]
    fn abort_from_precommit() {
        let t = TxnTable::new();
        t.register(7, 1);
        assert!(t.set_precommit(7, 2));
        t.set_aborted(7);
        assert_eq!(t.status(7).unwrap().state, TxnState::Aborted);
        assert!(!t.set_committed(7));
    }
}
