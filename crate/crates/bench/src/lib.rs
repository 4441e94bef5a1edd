//! Benchmark harness for the lineage store and its comparison backends:
//! workload generation, run reports, and a replay oracle for verification.

pub mod config;
pub mod oracle;
pub mod report;
pub mod workload;

pub use config::{Args, Contention, EngineKind, Format, Logging};
pub use oracle::{CommittedTxn, Oracle, OracleOp};
pub use report::RunReport;
pub use workload::{build_backend, load_rows, run, Built, RunOutcome};
