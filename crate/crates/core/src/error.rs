use thiserror::Error;

/// Errors surfaced by the storage engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of bounds: {0}")]
    InvalidParameter(String),

    #[error("duplicate key {0}")]
    DuplicateKey(u64),

    #[error("unknown rid {0:#x}")]
    UnknownRid(u64),

    #[error("unknown directory entry")]
    UnknownDirectoryEntry,

    #[error("page full")]
    PageFull,

    #[error("page sealed")]
    PageSealed,

    #[error("tail address space exhausted")]
    TailSpaceExhausted,

    #[error("write-write conflict on rid {0:#x}")]
    WriteWriteConflict(u64),

    #[error("transaction {0} is not active")]
    TxnNotActive(u64),

    #[error("illegal transaction state transition")]
    IllegalTxnState,

    #[error("validation failed")]
    ValidationFailed,

    #[error("merge batch overlaps an already queued span for range {0}")]
    OverlappingMergeSpan(u64),

    #[error("empty merge batch")]
    EmptyMergeBatch,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("log corrupt at offset {0}")]
    LogCorrupt(u64),
}

pub type Result<T> = std::result::Result<T, Error>;
