use std::path::PathBuf;

/// Engine configuration. Defaults follow the sizing the engine was designed
/// around: 32 KB base/merged pages (4096 eight-byte cells), 4 KB tail pages
/// (512 cells), 2^12-record update ranges clustered for writes, merges
/// operating over groups of 16 consecutive ranges, and a merge trigger at
/// 50% of the merge span.
#[derive(Clone, Debug)]
pub struct EngineConfig {
    /// Records per update range (power of two in [2^8, 2^20]).
    pub range_size: u64,
    /// Slots per base/merged page.
    pub base_page_slots: u32,
    /// Slots per tail page.
    pub tail_page_slots: u32,
    /// Tail RIDs pre-allocated per block.
    pub tail_block_rids: u64,
    /// Records per insert range (multiple of `range_size`).
    pub insert_range_size: u64,
    /// Consecutive update ranges grouped per merge trigger.
    pub merge_span_ranges: u64,
    /// Unmerged committed tail records in a range group that trigger a
    /// merge. `None` = 50% of the merge span.
    pub merge_threshold: Option<u64>,
    /// Run the background merge worker.
    pub background_merge: bool,
    /// Cumulative updates carry the latest values of all columns updated
    /// since the last cumulation reset.
    pub cumulative_updates: bool,
    /// Merge columns of a range independently (exercises per-column lineage
    /// reconciliation; off by default).
    pub per_column_merge: bool,
    /// Re-encode merged-out historic tail pages after this many merges of a
    /// range. 0 disables historic compression.
    pub compress_after_merges: u32,
    /// Redo logging. `None` turns logging off.
    pub logging: Option<LogConfig>,
    /// Shared-latch grants between forced page flushes (indirection pages).
    pub theta_s: u32,
}

#[derive(Clone, Debug)]
pub struct LogConfig {
    pub dir: PathBuf,
    /// fsync on commit-driven flushes.
    pub fsync: bool,
    /// Group-commit buffer size in bytes.
    pub group_buffer: usize,
    /// Also write page images on forced flushes.
    pub page_images: bool,
}

impl LogConfig {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        LogConfig {
            dir: dir.into(),
            fsync: false,
            group_buffer: 64 * 1024,
            page_images: true,
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("wal.log")
    }

    pub fn pages_dir(&self) -> PathBuf {
        self.dir.join("pages")
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            range_size: 1 << 12,
            base_page_slots: 4096,
            tail_page_slots: 512,
            tail_block_rids: 4096,
            insert_range_size: 1 << 12,
            merge_span_ranges: 16,
            merge_threshold: None,
            background_merge: true,
            cumulative_updates: true,
            per_column_merge: false,
            compress_after_merges: 4,
            logging: None,
            theta_s: 256,
        }
    }
}

impl EngineConfig {
    pub fn effective_merge_threshold(&self) -> u64 {
        self.merge_threshold
            .unwrap_or((self.range_size * self.merge_span_ranges) / 2)
            .max(1)
    }

    pub fn validate(&self) -> crate::error::Result<()> {
        use crate::error::Error;
        if !self.range_size.is_power_of_two()
            || self.range_size < (1 << 8)
            || self.range_size > (1 << 20)
        {
            return Err(Error::InvalidParameter(format!(
                "range_size must be a power of two in [2^8, 2^20], got {}",
                self.range_size
            )));
        }
        if self.insert_range_size == 0 || !self.insert_range_size.is_multiple_of(self.range_size) {
            return Err(Error::InvalidParameter(
                "insert_range_size must be a positive multiple of range_size".into(),
            ));
        }
        if self.merge_span_ranges == 0 {
            return Err(Error::InvalidParameter("merge_span_ranges must be >= 1".into()));
        }
        Ok(())
    }
}
