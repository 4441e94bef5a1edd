//! Historic compression: merged-out tail records that fall outside every
//! active snapshot are re-encoded into read-only pages ordered by base RID,
//! with all versions of a record stored inline and contiguously. Values that
//! repeat across versions (cumulative carries, untouched columns) collapse
//! into "unchanged" markers, and per-version back pointers disappear — only
//! the link to the base record remains.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rid::Rid;
use crate::schema::SchemaEncoding;

pub const LSHC_MAGIC: &[u8; 4] = b"LSHC";

const FLAG_DELETE: u8 = 1;

/// One version cell inside an inline column stream.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VersionCell {
    Value(u64),
    /// Same value as the nearest explicit cell to the left.
    Unchanged,
}

/// All compressed versions of one base record.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedTailRecord {
    pub base_rid: Rid,
    /// OR of all versions' column bitmaps.
    pub union_bits: u64,
    /// Strictly ascending version start times.
    pub times: Vec<u64>,
    /// Per-version flags (delete).
    pub flags: Vec<u8>,
    /// Column streams aligned to `times`, one per set bit of `union_bits`,
    /// ascending column order.
    pub cols: Vec<(u32, Vec<VersionCell>)>,
}

impl CompressedTailRecord {
    pub fn version_deleted(&self, idx: usize) -> bool {
        self.flags[idx] & FLAG_DELETE != 0
    }

    fn stream(&self, col: u32) -> Option<&[VersionCell]> {
        self.cols
            .iter()
            .find(|(c, _)| *c == col)
            .map(|(_, s)| s.as_slice())
    }

    /// Latest version index with time <= `as_of`.
    pub fn version_at(&self, as_of: u64) -> Option<usize> {
        match self.times.partition_point(|t| *t <= as_of) {
            0 => None,
            n => Some(n - 1),
        }
    }

    /// Resolve column `col` as of `as_of`: binary-search the times, then
    /// walk unchanged markers left within the inline stream. `None` means
    /// the column has no explicit value at or before `as_of` in this span
    /// (the caller falls back to an older span or the base original).
    pub fn col_at(&self, col: u32, as_of: u64) -> Option<u64> {
        let idx = self.version_at(as_of)?;
        let stream = self.stream(col)?;
        for i in (0..=idx).rev() {
            if let VersionCell::Value(v) = stream[i] {
                return Some(v);
            }
        }
        None
    }
}

/// A sealed historic page covering one contiguous span of merged-out tail
/// sequence numbers of a range.
#[derive(Debug)]
pub struct HistoricPage {
    pub range_id: u64,
    pub from_seq: u64,
    pub to_seq: u64,
    /// Records ordered by base rid.
    pub records: Vec<CompressedTailRecord>,
}

impl HistoricPage {
    pub fn find(&self, base_rid: Rid) -> Option<&CompressedTailRecord> {
        self.records
            .binary_search_by_key(&base_rid, |r| r.base_rid)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Read `(base_rid, as_of)` for the columns in `mask`, resolving
    /// unchanged markers. Returns the per-column values found plus whether
    /// the record's visible version in this span is a delete.
    #[allow(clippy::type_complexity)]
    pub fn read(
        &self,
        base_rid: Rid,
        as_of: u64,
        mask: u64,
    ) -> Option<(Vec<(u32, u64)>, Option<bool>)> {
        let rec = self.find(base_rid)?;
        let mut vals = Vec::new();
        let mut col = 0u32;
        let mut bits = mask & rec.union_bits;
        while bits != 0 {
            if bits & 1 != 0 {
                if let Some(v) = rec.col_at(col, as_of) {
                    vals.push((col, v));
                }
            }
            bits >>= 1;
            col += 1;
        }
        let deleted = rec.version_at(as_of).map(|i| rec.version_deleted(i));
        Some((vals, deleted))
    }
}

/// A committed tail record handed to the compressor: resolved start time,
/// encoding, and the explicit column values it carries.
#[derive(Clone, Debug)]
pub struct TailVersion {
    pub seq: u64,
    pub base_rid: Rid,
    pub enc: SchemaEncoding,
    pub time: u64,
    pub values: Vec<(u32, u64)>,
}

/// Build compressed records from the committed tail records of one span.
/// Records with equal start times (multiple statements of one transaction)
/// coalesce into a single version, latest sequence winning per column.
pub fn compress(range_id: u64, from_seq: u64, to_seq: u64, input: &[TailVersion]) -> HistoricPage {
    #[derive(Default)]
    struct VersionDraft {
        cols: BTreeMap<u32, u64>,
        delete: bool,
    }

    let mut by_rid: BTreeMap<Rid, BTreeMap<u64, VersionDraft>> = BTreeMap::new();
    let mut ordered: Vec<&TailVersion> = input.iter().collect();
    ordered.sort_by_key(|tv| tv.seq);
    for tv in ordered {
        let versions = by_rid.entry(tv.base_rid).or_default();
        let draft = versions.entry(tv.time).or_default();
        if tv.enc.is_delete_record() {
            draft.delete = true;
        } else {
            draft.delete = false;
            for (c, v) in &tv.values {
                draft.cols.insert(*c, *v);
            }
        }
    }

    let mut records = Vec::with_capacity(by_rid.len());
    for (base_rid, versions) in by_rid {
        let times: Vec<u64> = versions.keys().copied().collect();
        let flags: Vec<u8> = versions
            .values()
            .map(|d| if d.delete { FLAG_DELETE } else { 0 })
            .collect();
        let mut union_bits = 0u64;
        for d in versions.values() {
            for c in d.cols.keys() {
                union_bits |= 1 << *c;
            }
        }
        let mut cols = Vec::new();
        let mut c = 0u32;
        let mut bits = union_bits;
        while bits != 0 {
            if bits & 1 != 0 {
                let mut stream = Vec::with_capacity(times.len());
                let mut last: Option<u64> = None;
                for d in versions.values() {
                    match d.cols.get(&c) {
                        Some(v) if last != Some(*v) => {
                            stream.push(VersionCell::Value(*v));
                            last = Some(*v);
                        }
                        _ => stream.push(VersionCell::Unchanged),
                    }
                }
                cols.push((c, stream));
            }
            bits >>= 1;
            c += 1;
        }
        records.push(CompressedTailRecord {
            base_rid,
            union_bits,
            times,
            flags,
            cols,
        });
    }

    HistoricPage {
        range_id,
        from_seq,
        to_seq,
        records,
    }
}

impl HistoricPage {
    /// On-disk image: header {magic, range_id, record_count, seq span}, one
    /// record block per record (base rid, union bitmap, version count,
    /// flags, times, then per set column a presence bitmap plus the explicit
    /// values), CRC32 trailer.
    pub fn write_image(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(LSHC_MAGIC);
        out.extend_from_slice(&self.range_id.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.from_seq.to_le_bytes());
        out.extend_from_slice(&self.to_seq.to_le_bytes());
        for rec in &self.records {
            out.extend_from_slice(&rec.base_rid.to_le_bytes());
            out.extend_from_slice(&rec.union_bits.to_le_bytes());
            out.extend_from_slice(&(rec.times.len() as u16).to_le_bytes());
            out.extend_from_slice(&rec.flags);
            for t in &rec.times {
                out.extend_from_slice(&t.to_le_bytes());
            }
            for (_, stream) in &rec.cols {
                let mut bitmap = vec![0u8; stream.len().div_ceil(8)];
                for (i, cell) in stream.iter().enumerate() {
                    if matches!(cell, VersionCell::Value(_)) {
                        bitmap[i / 8] |= 1 << (i % 8);
                    }
                }
                out.extend_from_slice(&bitmap);
                for cell in stream {
                    if let VersionCell::Value(v) = cell {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn read_image(bytes: &[u8]) -> Result<HistoricPage> {
        let bad = || Error::LogCorrupt(0);
        if bytes.len() < 36 || &bytes[0..4] != LSHC_MAGIC {
            return Err(bad());
        }
        let body = &bytes[..bytes.len() - 4];
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32fast::hash(body) != crc {
            return Err(bad());
        }
        let range_id = u64::from_le_bytes(body[4..12].try_into().unwrap());
        let count = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let from_seq = u64::from_le_bytes(body[16..24].try_into().unwrap());
        let to_seq = u64::from_le_bytes(body[24..32].try_into().unwrap());
        let mut pos = 32usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let s = body.get(*pos..*pos + n).ok_or_else(bad)?;
            *pos += n;
            Ok(s)
        };
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let base_rid = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let union_bits = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let vc = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let flags = take(&mut pos, vc)?.to_vec();
            let mut times = Vec::with_capacity(vc);
            for _ in 0..vc {
                times.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            }
            let mut cols = Vec::new();
            let mut c = 0u32;
            let mut bits = union_bits;
            while bits != 0 {
                if bits & 1 != 0 {
                    let bitmap = take(&mut pos, vc.div_ceil(8))?.to_vec();
                    let mut stream = Vec::with_capacity(vc);
                    for i in 0..vc {
                        if bitmap[i / 8] & (1 << (i % 8)) != 0 {
                            let v = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                            stream.push(VersionCell::Value(v));
                        } else {
                            stream.push(VersionCell::Unchanged);
                        }
                    }
                    cols.push((c, stream));
                }
                bits >>= 1;
                c += 1;
            }
            records.push(CompressedTailRecord {
                base_rid,
                union_bits,
                times,
                flags,
                cols,
            });
        }
        if pos != body.len() {
            return Err(bad());
        }
        Ok(HistoricPage {
            range_id,
            from_seq,
            to_seq,
            records,
        })
    }

    /// Encoded size used by the space accounting checks.
    pub fn compressed_bytes(&self) -> usize {
        self.write_image().len()
    }
}
