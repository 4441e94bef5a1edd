//! Redo-only write-ahead log. Tail appends are the only data mutations that
//! need logging (base pages are read-only, tail slots are write-once), so
//! no undo log exists. Records are group-buffered through a single appender
//! and flushed explicitly on commit.
//!
//! File format: a sequence of records `{len: u32, lsn: u64, kind: u8,
//! payload: [len bytes], crc32: u32}`, all little endian, where the CRC
//! covers everything before it. Reading tolerates a torn final record.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

use crate::error::{Error, Result};

pub const KIND_TAIL_APPEND: u8 = 0;
pub const KIND_COMMIT: u8 = 1;
pub const KIND_MERGE_OP: u8 = 2;
pub const KIND_DIRECTORY_OP: u8 = 3;

#[derive(Clone, Debug, PartialEq)]
pub enum LogPayload {
    /// A tail record append (regular or table-level).
    TailAppend {
        table: u32,
        txn: u64,
        base_rid: u64,
        tail_rid: u64,
        seq: u64,
        table_level: bool,
        enc: u64,
        start_cell: u64,
        indirection_cell: u64,
        cols: Vec<(u32, u64)>,
    },
    Commit {
        txn: u64,
        commit_time: u64,
    },
    /// Operational merge logging (idempotent redo driver, not data).
    MergeOp {
        table: u32,
        range_id: u64,
        from_seq: u64,
        to_seq: u64,
    },
    /// Page-directory structural changes.
    DirectoryOp(DirectoryOp),
}

#[derive(Clone, Debug, PartialEq)]
pub enum DirectoryOp {
    CreateTable {
        table: u32,
        num_data_columns: u32,
        key_column: u32,
        range_size: u64,
    },
    InsertRangeMerged {
        table: u32,
        range_id: u64,
    },
    InsertRangeRotated {
        table: u32,
        ir_id: u64,
    },
    InsertRangeOpened {
        table: u32,
        ir_id: u64,
        base_lo: u64,
        base_hi: u64,
        tt_first_rid: u64,
    },
    TailBlockAllocated {
        table: u32,
        range_id: u64,
        first_rid: u64,
        len: u64,
        first_seq: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RedoRecord {
    pub lsn: u64,
    pub payload: LogPayload,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Option<u8> {
        let v = *self.buf.get(self.pos)?;
        self.pos += 1;
        Some(v)
    }
    fn u32(&mut self) -> Option<u32> {
        let v = u32::from_le_bytes(self.buf.get(self.pos..self.pos + 4)?.try_into().ok()?);
        self.pos += 4;
        Some(v)
    }
    fn u64(&mut self) -> Option<u64> {
        let v = u64::from_le_bytes(self.buf.get(self.pos..self.pos + 8)?.try_into().ok()?);
        self.pos += 8;
        Some(v)
    }
}

impl LogPayload {
    pub fn kind(&self) -> u8 {
        match self {
            LogPayload::TailAppend { .. } => KIND_TAIL_APPEND,
            LogPayload::Commit { .. } => KIND_COMMIT,
            LogPayload::MergeOp { .. } => KIND_MERGE_OP,
            LogPayload::DirectoryOp(_) => KIND_DIRECTORY_OP,
        }
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        match self {
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
                put_u32(&mut out, *table);
                put_u64(&mut out, *txn);
                put_u64(&mut out, *base_rid);
                put_u64(&mut out, *tail_rid);
                put_u64(&mut out, *seq);
                out.push(*table_level as u8);
                put_u64(&mut out, *enc);
                put_u64(&mut out, *start_cell);
                put_u64(&mut out, *indirection_cell);
                put_u32(&mut out, cols.len() as u32);
                for (c, v) in cols {
                    put_u32(&mut out, *c);
                    put_u64(&mut out, *v);
                }
            }
            LogPayload::Commit { txn, commit_time } => {
                put_u64(&mut out, *txn);
                put_u64(&mut out, *commit_time);
            }
            LogPayload::MergeOp {
                table,
                range_id,
                from_seq,
                to_seq,
            } => {
                put_u32(&mut out, *table);
                put_u64(&mut out, *range_id);
                put_u64(&mut out, *from_seq);
                put_u64(&mut out, *to_seq);
            }
            LogPayload::DirectoryOp(op) => match op {
                DirectoryOp::CreateTable {
                    table,
                    num_data_columns,
                    key_column,
                    range_size,
                } => {
                    out.push(0);
                    put_u32(&mut out, *table);
                    put_u32(&mut out, *num_data_columns);
                    put_u32(&mut out, *key_column);
                    put_u64(&mut out, *range_size);
                }
                DirectoryOp::InsertRangeMerged { table, range_id } => {
                    out.push(1);
                    put_u32(&mut out, *table);
                    put_u64(&mut out, *range_id);
                }
                DirectoryOp::InsertRangeRotated { table, ir_id } => {
                    out.push(2);
                    put_u32(&mut out, *table);
                    put_u64(&mut out, *ir_id);
                }
                DirectoryOp::InsertRangeOpened {
                    table,
                    ir_id,
                    base_lo,
                    base_hi,
                    tt_first_rid,
                } => {
                    out.push(3);
                    put_u32(&mut out, *table);
                    put_u64(&mut out, *ir_id);
                    put_u64(&mut out, *base_lo);
                    put_u64(&mut out, *base_hi);
                    put_u64(&mut out, *tt_first_rid);
                }
                DirectoryOp::TailBlockAllocated {
                    table,
                    range_id,
                    first_rid,
                    len,
                    first_seq,
                } => {
                    out.push(4);
                    put_u32(&mut out, *table);
                    put_u64(&mut out, *range_id);
                    put_u64(&mut out, *first_rid);
                    put_u64(&mut out, *len);
                    put_u64(&mut out, *first_seq);
                }
            },
        }
        out
    }

    fn decode(kind: u8, payload: &[u8]) -> Option<LogPayload> {
        let mut r = Reader { buf: payload, pos: 0 };
        let p = match kind {
            KIND_TAIL_APPEND => {
                let table = r.u32()?;
                let txn = r.u64()?;
                let base_rid = r.u64()?;
                let tail_rid = r.u64()?;
                let seq = r.u64()?;
                let table_level = r.u8()? != 0;
                let enc = r.u64()?;
                let start_cell = r.u64()?;
                let indirection_cell = r.u64()?;
                let n = r.u32()? as usize;
                let mut cols = Vec::with_capacity(n);
                for _ in 0..n {
                    cols.push((r.u32()?, r.u64()?));
                }
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
                }
            }
            KIND_COMMIT => LogPayload::Commit {
                txn: r.u64()?,
                commit_time: r.u64()?,
            },
            KIND_MERGE_OP => LogPayload::MergeOp {
                table: r.u32()?,
                range_id: r.u64()?,
                from_seq: r.u64()?,
                to_seq: r.u64()?,
            },
            KIND_DIRECTORY_OP => match r.u8()? {
                0 => LogPayload::DirectoryOp(DirectoryOp::CreateTable {
                    table: r.u32()?,
                    num_data_columns: r.u32()?,
                    key_column: r.u32()?,
                    range_size: r.u64()?,
                }),
                1 => LogPayload::DirectoryOp(DirectoryOp::InsertRangeMerged {
                    table: r.u32()?,
                    range_id: r.u64()?,
                }),
                2 => LogPayload::DirectoryOp(DirectoryOp::InsertRangeRotated {
                    table: r.u32()?,
                    ir_id: r.u64()?,
                }),
                3 => LogPayload::DirectoryOp(DirectoryOp::InsertRangeOpened {
                    table: r.u32()?,
                    ir_id: r.u64()?,
                    base_lo: r.u64()?,
                    base_hi: r.u64()?,
                    tt_first_rid: r.u64()?,
                }),
                4 => LogPayload::DirectoryOp(DirectoryOp::TailBlockAllocated {
                    table: r.u32()?,
                    range_id: r.u64()?,
                    first_rid: r.u64()?,
                    len: r.u64()?,
                    first_seq: r.u64()?,
                }),
                _ => return None,
            },
            _ => return None,
        };
        if r.pos == payload.len() {
            Some(p)
        } else {
            None
        }
    }
}

/// Serialize one record in the on-disk framing.
pub fn encode_record(lsn: u64, payload: &LogPayload) -> Vec<u8> {
    let body = payload.encode();
    let mut out = Vec::with_capacity(body.len() + 17);
    put_u32(&mut out, body.len() as u32);
    put_u64(&mut out, lsn);
    out.push(payload.kind());
    out.extend_from_slice(&body);
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct WalInner {
    file: File,
    buf: Vec<u8>,
}

/// Single-appender log with group buffering.
pub struct Wal {
    inner: Mutex<WalInner>,
    next_lsn: AtomicU64,
    fsync: bool,
    group_buffer: usize,
}

impl Wal {
    pub fn create(path: &Path, fsync: bool, group_buffer: usize) -> Result<Wal> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Wal {
            inner: Mutex::new(WalInner { file, buf: Vec::new() }),
            next_lsn: AtomicU64::new(0),
            fsync,
            group_buffer,
        })
    }

    /// Continue an existing log after recovery.
    pub fn set_next_lsn(&self, lsn: u64) {
        self.next_lsn.store(lsn, Ordering::SeqCst);
    }

    /// Append a record; LSN assignment and buffer order are serialized so
    /// LSNs are strictly increasing in the file.
    pub fn append(&self, payload: &LogPayload) -> Result<u64> {
        let mut inner = self.inner.lock();
        let lsn = self.next_lsn.fetch_add(1, Ordering::SeqCst) + 1;
        let rec = encode_record(lsn, payload);
        inner.buf.extend_from_slice(&rec);
        if inner.buf.len() >= self.group_buffer {
            self.write_out(&mut inner)?;
        }
        Ok(lsn)
    }

    /// Durably flush buffered records (commit path).
    pub fn flush(&self) -> Result<()> {
        let mut inner = self.inner.lock();
        self.write_out(&mut inner)?;
        if self.fsync {
            inner.file.sync_data()?;
        }
        Ok(())
    }

    fn write_out(&self, inner: &mut WalInner) -> Result<()> {
        if !inner.buf.is_empty() {
            let buf = std::mem::take(&mut inner.buf);
            inner.file.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn last_lsn(&self) -> u64 {
        self.next_lsn.load(Ordering::SeqCst)
    }
}

/// Read a log image, stopping at the first corrupt or torn record. Returns
/// the parsed prefix and the byte offset at which reading stopped.
pub fn read_log_bytes(bytes: &[u8]) -> (Vec<RedoRecord>, usize) {
    let mut records = Vec::new();
    let mut pos = 0usize;
    loop {
        if bytes.len() < pos + 17 {
            break;
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let total = 17 + len;
        if bytes.len() < pos + total {
            break;
        }
        let frame = &bytes[pos..pos + total];
        let crc = u32::from_le_bytes(frame[total - 4..].try_into().unwrap());
        if crc32fast::hash(&frame[..total - 4]) != crc {
            break;
        }
        let lsn = u64::from_le_bytes(frame[4..12].try_into().unwrap());
        let kind = frame[12];
        match LogPayload::decode(kind, &frame[13..total - 4]) {
            Some(payload) => records.push(RedoRecord { lsn, payload }),
            None => break,
        }
        pos += total;
    }
    (records, pos)
}

pub fn read_log_file(path: &Path) -> Result<(Vec<RedoRecord>, usize)> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(Error::Io(e)),
    }
    Ok(read_log_bytes(&bytes))
}
