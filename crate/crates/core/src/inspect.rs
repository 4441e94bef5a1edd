//! Physical-structure inspection for tests, verification tooling, and the
//! benchmark's verify mode.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::historic::HistoricPage;
use crate::indirection::{IndirectionCell, Link};
use crate::merge::MergeBatch;
use crate::rid::Rid;
use crate::schema::SchemaEncoding;
use crate::table::Table;

/// A raw view of one tail record's cells.
#[derive(Clone, Debug, PartialEq)]
pub struct TailRecordView {
    pub seq: u64,
    pub rid: Rid,
    pub enc_bits: u64,
    pub snapshot: bool,
    pub delete: bool,
    pub aborted: bool,
    /// Raw start cell (may still hold a pending transaction id).
    pub start_cell: u64,
    /// Resolved start time (commit time for committed writers).
    pub start_time: Option<u64>,
    pub backlink: Link,
    pub base_rid: Rid,
    /// Explicit values carried (column, value).
    pub values: Vec<(u32, u64)>,
}

/// A raw view of one base/merged row.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseRowView {
    pub base_rid: Rid,
    pub indirection: Link,
    pub enc_bits: u64,
    pub deleted: bool,
    pub start_cell: u64,
    pub last_updated: Option<u64>,
    pub data: Vec<Option<u64>>,
    /// TPS of each data column's current page.
    pub column_tps: Vec<u64>,
}

impl Table {
    pub fn inspect_tail_record(&self, range_id: u64, seq: u64) -> Option<TailRecordView> {
        let range = self.range_by_id(range_id)?;
        if seq == 0 || seq > range.last_allocated_seq() {
            return None;
        }
        let rid = range.rid_of_seq(seq)?;
        let (enc, backlink, spage, soff) = self.tail_meta_loc(&range, seq).ok()?;
        let base_rid = self.tail_value(&range, seq, self.schema.base_rid_col())?;
        let mut values = Vec::new();
        let mut bits = enc.bits();
        let mut c = 0u32;
        while bits != 0 {
            if bits & 1 != 0 {
                if let Some(v) = self.tail_value(&range, seq, c) {
                    values.push((c, v));
                }
            }
            bits >>= 1;
            c += 1;
        }
        let start_cell = spage.read_slot(soff)?;
        let start_time = if crate::schema::start_is_pending(start_cell) {
            self.shared
                .txns
                .status(crate::schema::start_pending_txn(start_cell))
                .filter(|st| st.state == crate::txn::TxnState::Committed)
                .map(|st| st.commit)
        } else if start_cell == crate::schema::START_TOMBSTONE {
            None
        } else {
            Some(start_cell)
        };
        Some(TailRecordView {
            seq,
            rid,
            enc_bits: enc.bits(),
            snapshot: enc.is_snapshot(),
            delete: enc.is_delete_record(),
            aborted: range.is_aborted_seq(seq),
            start_cell,
            start_time,
            backlink,
            base_rid,
            values,
        })
    }

    pub fn inspect_base_row(&self, base_rid: Rid) -> Result<BaseRowView> {
        let range = self.range_of(base_rid)?;
        let (ipage, ioff) = self.ind_cell_loc(&range, base_rid);
        let indirection = IndirectionCell(ipage.cell(ioff)).load();
        let enc = self
            .base_cell(&range, self.schema.schema_col(), base_rid)
            .map(SchemaEncoding::from_cell)
            .unwrap_or(SchemaEncoding(0));
        let (spage, soff) = self
            .base_start_loc_pub(&range, base_rid)
            .ok_or(Error::UnknownRid(base_rid))?;
        let data: Vec<Option<u64>> = (0..self.schema.num_data_columns)
            .map(|c| self.base_cell(&range, c, base_rid))
            .collect();
        let slot_idx = range.slot_of(base_rid) / self.base_cap();
        let column_tps: Vec<u64> = (0..self.schema.num_data_columns)
            .map(|c| {
                self.base_page(c, range.range_id, slot_idx)
                    .map(|p| p.tps())
                    .unwrap_or(0)
            })
            .collect();
        Ok(BaseRowView {
            base_rid,
            indirection,
            enc_bits: enc.bits(),
            deleted: enc.is_deleted(),
            start_cell: spage.read_slot(soff).unwrap_or(u64::MAX),
            last_updated: self.base_cell(&range, self.schema.last_updated_col(), base_rid),
            data,
            column_tps,
        })
    }

    pub fn tail_rid_of_seq(&self, range_id: u64, seq: u64) -> Option<Rid> {
        self.range_by_id(range_id)?.rid_of_seq(seq)
    }

    pub fn seq_of_tail_rid(&self, range_id: u64, rid: Rid) -> Option<u64> {
        self.range_by_id(range_id)?.seq_of_rid(rid)
    }

    pub fn resolved_watermark(&self, range_id: u64) -> u64 {
        self.range_by_id(range_id)
            .map(|r| r.resolved_watermark())
            .unwrap_or(0)
    }

    pub fn published_tps(&self, range_id: u64) -> u64 {
        self.range_by_id(range_id)
            .map(|r| r.published_tps.load(Ordering::SeqCst))
            .unwrap_or(0)
    }

    pub fn compressed_upto(&self, range_id: u64) -> u64 {
        self.range_by_id(range_id)
            .map(|r| r.compressed_upto.load(Ordering::SeqCst))
            .unwrap_or(0)
    }

    pub fn historic_pages(&self, range_id: u64) -> Vec<Arc<HistoricPage>> {
        self.range_by_id(range_id)
            .map(|r| r.historic.read().clone())
            .unwrap_or_default()
    }

    pub fn num_ranges(&self) -> usize {
        self.ranges.read().len()
    }

    pub fn active_insert_range_id(&self) -> u64 {
        self.active_insert_range().ir_id
    }

    pub fn primary_len(&self) -> usize {
        self.primary.len()
    }

    pub fn lookup_rid(&self, key: u64) -> Option<Rid> {
        self.primary.get(key)
    }

    /// Sealed images of the pages a batch would produce, without publishing
    /// anything (idempotence checks build the same batch repeatedly).
    pub fn merge_images(&self, batch: &MergeBatch) -> Result<Vec<Vec<u8>>> {
        let range = self
            .range_by_id(batch.range_id)
            .ok_or(Error::UnknownRid(batch.range_id))?;
        Ok(self
            .merge_build(&range, batch)?
            .into_iter()
            .map(|(_, p)| p.sealed_image())
            .collect())
    }

    /// Order-stable hash of the latest committed visible state: every live
    /// primary-key entry with its full row. Two engines holding the same
    /// committed state produce the same fingerprint.
    pub fn state_fingerprint(&self) -> u64 {
        let vis = crate::txn::Visibility {
            bound: u64::MAX - 1,
            own: None,
            speculative: false,
        };
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        let mask = self.schema.all_data_bits();
        for (key, rid) in self
            .primary
            .range_keys(std::ops::Bound::Unbounded, std::ops::Bound::Unbounded)
        {
            let range = match self.range_of(rid) {
                Ok(r) => r,
                Err(_) => continue,
            };
            if let Ok(o) = self.read_for_range(&range, rid, mask, &vis, None) {
                if let Some(vals) = o.values {
                    mix(key);
                    for v in vals {
                        mix(v.map(|x| x.wrapping_add(1)).unwrap_or(0));
                    }
                }
            }
        }
        h
    }

    /// Content bytes of the live (uncompressed) tail records in a span:
    /// explicit cells plus the per-record meta cells. Space accounting for
    /// the historic-compression checks.
    pub fn tail_span_logical_bytes(&self, range_id: u64, from: u64, to: u64) -> u64 {
        let range = match self.range_by_id(range_id) {
            Some(r) => r,
            None => return 0,
        };
        let mut bytes = 0u64;
        for seq in from..=to {
            if range.is_aborted_seq(seq) {
                continue;
            }
            if let Ok((enc, _, _, _)) = self.tail_meta_loc(&range, seq) {
                bytes += 8 * (enc.bits().count_ones() as u64 + 4);
            }
        }
        bytes
    }
}
