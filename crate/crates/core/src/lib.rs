//! An embedded multi-version columnar storage engine that serves point
//! transactional workloads and concurrent analytical scans from a single
//! copy of the data. Updates append to per-range tail pages; a background,
//! contention-free merge lazily consolidates committed tail records into
//! read-optimized base pages, with per-page lineage (TPS) watermarks making
//! every page's state independently interpretable. Includes redo-only
//! logging with crash recovery and two comparison backends for the bundled
//! benchmark.

pub mod clock;
pub mod config;
pub mod directory;
pub mod engine;
pub mod epoch;
pub mod error;
pub mod forblock;
pub mod historic;
pub mod index;
pub mod indirection;
pub mod inspect;
pub mod merge;
pub mod metrics;
pub mod ownership;
pub mod page;
pub mod range;
mod recovery;
mod reader;
pub mod rid;
pub mod schema;
mod shared;
pub mod table;
pub mod txn;
pub mod baselines;
pub mod wal;

pub use clock::LogicalClock;
pub use config::{EngineConfig, LogConfig};
pub use engine::Engine;
pub use error::{Error, Result};
pub use merge::{check_read_consistency, interpret_indirection, MergeBatch, ReadConsistency};
pub use metrics::Metrics;
pub use rid::{Rid, TAIL_FLOOR};
pub use schema::{SchemaEncoding, TableSchema};
pub use table::{RecordVersion, Table};
pub use txn::{Isolation, Txn, TxnState};
