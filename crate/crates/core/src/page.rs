//! Columnar pages: a fixed-capacity array of 64-bit cells plus a presence
//! bitmap, a tail-sequence watermark (TPS) for lineage tracking, and the
//! pageLSN bookkeeping used by logging.
//!
//! Base and merged pages are immutable after sealing except for indirection
//! cells (compare-and-swap only) and lazy start-time finalization. Tail
//! pages are append-only and write-once: a written slot is never rewritten,
//! even when the writing transaction aborts.

use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::forblock;
use crate::ownership::OrState;

pub const LSPG_MAGIC: &[u8; 4] = b"LSPG";
const LSPF_MAGIC: &[u8; 4] = b"LSPF";

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PageKind {
    Base = 0,
    Tail = 1,
    Merged = 2,
    HistoricCompressed = 3,
}

impl PageKind {
    fn from_u8(v: u8) -> Option<PageKind> {
        match v {
            0 => Some(PageKind::Base),
            1 => Some(PageKind::Tail),
            2 => Some(PageKind::Merged),
            3 => Some(PageKind::HistoricCompressed),
            _ => None,
        }
    }
}

pub struct Page {
    pub kind: PageKind,
    pub column: u32,
    pub range_id: u64,
    capacity: u32,
    /// Lineage watermark: number of tail records of the range already
    /// consolidated into this page. 0 on original base pages and tail pages.
    tps: u64,
    slots: Box<[AtomicU64]>,
    presence: Box<[AtomicU64]>,
    written: AtomicU32,
    sealed: AtomicBool,
    poisoned: AtomicBool,
    page_lsn: AtomicU64,
    pub or: OrState,
}

impl Page {
    pub fn new(kind: PageKind, column: u32, range_id: u64, capacity: u32, tps: u64) -> Page {
        let slots = (0..capacity).map(|_| AtomicU64::new(0)).collect();
        let words = (capacity as usize).div_ceil(64);
        let presence = (0..words).map(|_| AtomicU64::new(0)).collect();
        Page {
            kind,
            column,
            range_id,
            capacity,
            tps,
            slots,
            presence,
            written: AtomicU32::new(0),
            sealed: AtomicBool::new(false),
            poisoned: AtomicBool::new(false),
            page_lsn: AtomicU64::new(0),
            or: OrState::default(),
        }
    }

    /// A base page whose every slot is pre-initialized to `fill` and marked
    /// present (indirection column pages are allocated this way).
    pub fn new_prefilled(column: u32, range_id: u64, capacity: u32, fill: u64) -> Page {
        let p = Page::new(PageKind::Base, column, range_id, capacity, 0);
        for i in 0..capacity as usize {
            p.slots[i].store(fill, Ordering::Relaxed);
        }
        for w in p.presence.iter() {
            w.store(u64::MAX, Ordering::Relaxed);
        }
        // mask off bits beyond capacity so images stay canonical
        let extra = (capacity as usize) % 64;
        if extra != 0 {
            let last = p.presence.len() - 1;
            p.presence[last].store((1u64 << extra) - 1, Ordering::Relaxed);
        }
        p.written.store(capacity, Ordering::Relaxed);
        p
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn tps(&self) -> u64 {
        self.tps
    }

    pub fn len(&self) -> u32 {
        self.written.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    pub fn page_lsn(&self) -> u64 {
        self.page_lsn.load(Ordering::Acquire)
    }

    pub fn set_page_lsn(&self, lsn: u64) {
        self.page_lsn.fetch_max(lsn, Ordering::AcqRel);
    }

    pub fn seal(&self) {
        self.sealed.store(true, Ordering::Release);
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed.load(Ordering::Acquire)
    }

    /// Reclamation canary. Reading a poisoned page means a reader outlived
    /// the epoch that was supposed to protect it.
    pub fn poison(&self) {
        self.poisoned.store(true, Ordering::Release);
    }

    pub fn assert_live(&self) {
        assert!(
            !self.poisoned.load(Ordering::Acquire),
            "read of a deallocated page (epoch violation)"
        );
    }

    #[inline]
    pub fn is_present(&self, idx: u32) -> bool {
        debug_assert!(idx < self.capacity);
        let w = self.presence[(idx / 64) as usize].load(Ordering::Acquire);
        w & (1 << (idx % 64)) != 0
    }

    #[inline]
    fn mark_present(&self, idx: u32) {
        self.presence[(idx / 64) as usize].fetch_or(1 << (idx % 64), Ordering::AcqRel);
    }

    /// Append a cell at the next free slot. Used where records are strictly
    /// sequential (merge outputs, bulk loads).
    pub fn append(&self, cell: u64) -> Result<u32> {
        if self.is_sealed() {
            return Err(Error::PageSealed);
        }
        let idx = self
            .written
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |cur| {
                if cur >= self.capacity {
                    None
                } else {
                    Some(cur + 1)
                }
            })
            .map_err(|_| Error::PageFull)?;
        self.slots[idx as usize].store(cell, Ordering::Release);
        self.mark_present(idx);
        Ok(idx)
    }

    /// Positional write-once: tail records land at the slot determined by
    /// their per-range sequence number so all column pages stay aligned.
    pub fn write_slot(&self, idx: u32, cell: u64) -> Result<()> {
        if self.is_sealed() {
            return Err(Error::PageSealed);
        }
        if idx >= self.capacity {
            return Err(Error::PageFull);
        }
        debug_assert!(!self.is_present(idx), "write-once slot rewritten");
        self.slots[idx as usize].store(cell, Ordering::Release);
        self.mark_present(idx);
        self.written.fetch_max(idx + 1, Ordering::AcqRel);
        Ok(())
    }

    /// In-place overwrite for mutable pages (comparison backends). Never
    /// valid on sealed pages.
    pub fn store(&self, idx: u32, cell: u64) {
        debug_assert!(!self.is_sealed());
        debug_assert!(idx < self.capacity);
        self.slots[idx as usize].store(cell, Ordering::Release);
        self.mark_present(idx);
        self.written.fetch_max(idx + 1, Ordering::AcqRel);
    }

    pub fn read_slot(&self, idx: u32) -> Option<u64> {
        if idx >= self.capacity || !self.is_present(idx) {
            return None;
        }
        Some(self.slots[idx as usize].load(Ordering::Acquire))
    }

    /// Raw cell access for columns that mutate in place under their own
    /// protocols (indirection CAS, lazy start-time finalization).
    pub fn cell(&self, idx: u32) -> &AtomicU64 {
        &self.slots[idx as usize]
    }

    /// CAS a cell value; used for lazy start-time finalization.
    pub fn cas_cell(&self, idx: u32, expect: u64, new: u64) -> bool {
        self.slots[idx as usize]
            .compare_exchange(expect, new, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }

    /// Bulk-copy every present cell of `src` into this page (merge copies).
    pub fn copy_content_from(&self, src: &Page) {
        debug_assert!(!self.is_sealed());
        debug_assert!(self.capacity >= src.capacity);
        for i in 0..src.slots.len() {
            self.slots[i].store(src.slots[i].load(Ordering::Relaxed), Ordering::Relaxed);
        }
        for w in 0..src.presence.len() {
            self.presence[w].store(src.presence[w].load(Ordering::Relaxed), Ordering::Relaxed);
        }
        self.written
            .fetch_max(src.written.load(Ordering::Relaxed), Ordering::AcqRel);
    }

    /// Stable content hash over present (slot, value) pairs: write-once
    /// verification hashes a page before and after appends elsewhere.
    pub fn content_hash(&self, upto: u32) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for i in 0..upto.min(self.capacity) {
            if self.is_present(i) {
                for b in i
                    .to_le_bytes()
                    .iter()
                    .chain(self.slots[i as usize].load(Ordering::Acquire).to_le_bytes().iter())
                {
                    h ^= *b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    fn header_bytes(&self, magic: &[u8; 4], slot_count: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(magic);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.column.to_le_bytes());
        out.extend_from_slice(&self.range_id.to_le_bytes());
        out.extend_from_slice(&slot_count.to_le_bytes());
        out.extend_from_slice(&self.tps.to_le_bytes());
        out.extend_from_slice(&self.page_lsn().to_le_bytes());
        out
    }

    /// On-disk page image: header, `slot_count` little-endian cells, the
    /// presence bitmap padded to 8 bytes, then a CRC32 of everything above.
    pub fn write_image(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = self.header_bytes(LSPG_MAGIC, n);
        for i in 0..n {
            out.extend_from_slice(&self.slots[i as usize].load(Ordering::Acquire).to_le_bytes());
        }
        let words = (n as usize).div_ceil(64);
        for w in 0..words {
            let mut word = self.presence[w].load(Ordering::Acquire);
            // mask bits beyond slot_count
            let hi = ((w + 1) * 64).min(n as usize);
            let bits = hi - w * 64;
            if bits < 64 {
                word &= (1u64 << bits) - 1;
            }
            out.extend_from_slice(&word.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn read_image(bytes: &[u8], capacity: u32) -> Result<Page> {
        let bad = || Error::LogCorrupt(0);
        if bytes.len() < 41 || &bytes[0..4] != LSPG_MAGIC {
            return Err(bad());
        }
        let body = &bytes[..bytes.len() - 4];
        let crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32fast::hash(body) != crc {
            return Err(bad());
        }
        let kind = PageKind::from_u8(bytes[4]).ok_or_else(bad)?;
        let column = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        let range_id = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let slot_count = u32::from_le_bytes(bytes[17..21].try_into().unwrap());
        let tps = u64::from_le_bytes(bytes[21..29].try_into().unwrap());
        let page_lsn = u64::from_le_bytes(bytes[29..37].try_into().unwrap());
        if slot_count > capacity.max(slot_count) {
            return Err(bad());
        }
        let cap = capacity.max(slot_count);
        let page = Page::new(kind, column, range_id, cap, tps);
        let mut off = 37;
        if body.len() < off + slot_count as usize * 8 {
            return Err(bad());
        }
        for i in 0..slot_count {
            let v = u64::from_le_bytes(body[off..off + 8].try_into().unwrap());
            page.slots[i as usize].store(v, Ordering::Relaxed);
            off += 8;
        }
        let words = (slot_count as usize).div_ceil(64);
        if body.len() < off + words * 8 {
            return Err(bad());
        }
        for w in 0..words {
            let v = u64::from_le_bytes(body[off..off + 8].try_into().unwrap());
            page.presence[w].store(v, Ordering::Relaxed);
            off += 8;
        }
        page.written.store(slot_count, Ordering::Relaxed);
        page.page_lsn.store(page_lsn, Ordering::Relaxed);
        Ok(page)
    }

    /// Sealed artifact bytes. Merged pages use the frame-of-reference cell
    /// block; other kinds use the plain image. Byte-identical for identical
    /// content, which is what merge idempotence is checked against.
    pub fn sealed_image(&self) -> Vec<u8> {
        if self.kind != PageKind::Merged {
            return self.write_image();
        }
        let n = self.len();
        let mut out = self.header_bytes(LSPF_MAGIC, n);
        let cells: Vec<Option<u64>> = (0..n).map(|i| self.read_slot(i)).collect();
        out.extend_from_slice(&forblock::encode(&cells));
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }
}

impl std::fmt::Debug for Page {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Page")
            .field("kind", &self.kind)
            .field("column", &self.column)
            .field("range_id", &self.range_id)
            .field("len", &self.len())
            .field("tps", &self.tps)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_then_full() {
        let p = Page::new(PageKind::Tail, 0, 0, 4, 0);
        for i in 0..4 {
            assert_eq!(p.append(i as u64 * 10).unwrap(), i);
        }
        assert!(matches!(p.append(99), Err(Error::PageFull)));
        assert_eq!(p.read_slot(2), Some(20));
        assert_eq!(p.read_slot(4), None);
    }

    #[test]
    fn positional_write_once_alignment() {
        let p = Page::new(PageKind::Tail, 3, 7, 8, 0);
        p.write_slot(5, 55).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p.read_slot(5), Some(55));
        assert_eq!(p.read_slot(0), None);
        p.write_slot(0, 1).unwrap();
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn aborted_writer_slot_is_untouched() {
        // an abort never rewrites a written slot; the next writer appends
        let p = Page::new(PageKind::Tail, 0, 0, 8, 0);
        p.append(111).unwrap();
        let before = p.content_hash(8);
        p.append(222).unwrap();
        assert_eq!(p.read_slot(0), Some(111));
        // hash over the first slot is unchanged by later appends
        assert_eq!(p.content_hash(1), before);
    }

    #[test]
    fn sealed_rejects_writes() {
        let p = Page::new(PageKind::Tail, 0, 0, 8, 0);
        p.append(1).unwrap();
        p.seal();
        assert!(matches!(p.append(2), Err(Error::PageSealed)));
        assert!(matches!(p.write_slot(3, 4), Err(Error::PageSealed)));
    }

    #[test]
    fn image_roundtrip() {
        let p = Page::new(PageKind::Tail, 9, 2, 512, 0);
        p.write_slot(0, 42).unwrap();
        p.write_slot(3, 99).unwrap();
        p.set_page_lsn(77);
        let img = p.write_image();
        let q = Page::read_image(&img, 512).unwrap();
        assert_eq!(q.kind, PageKind::Tail);
        assert_eq!(q.column, 9);
        assert_eq!(q.range_id, 2);
        assert_eq!(q.page_lsn(), 77);
        assert_eq!(q.read_slot(0), Some(42));
        assert_eq!(q.read_slot(1), None);
        assert_eq!(q.read_slot(3), Some(99));
        // corrupt a byte -> rejected
        let mut bad = img.clone();
        bad[20] ^= 0xff;
        assert!(Page::read_image(&bad, 512).is_err());
    }

    #[test]
    fn merged_seal_deterministic() {
        let mk = || {
            let p = Page::new(PageKind::Merged, 1, 0, 16, 7);
            for i in 0..16u64 {
                p.append(1000 + i).unwrap();
            }
            p.seal();
            p
        };
        assert_eq!(mk().sealed_image(), mk().sealed_image());
    }
}
