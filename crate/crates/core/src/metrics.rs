use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_utils::CachePadded;

/// Engine-wide counters exposed to the benchmark harness. The hot ones sit
/// on their own cache lines.
#[derive(Debug, Default)]
pub struct Metrics {
    pub merges_completed: AtomicU64,
    pub tail_records_consolidated: AtomicU64,
    pub merge_nanos_total: AtomicU64,
    pub insert_range_merges: AtomicU64,
    pub compressions: AtomicU64,
    pub dealloc_enqueued: AtomicU64,
    pub dealloc_freed: AtomicU64,
    /// Cross-column TPS mismatches detected by readers.
    pub tps_mismatches_detected: AtomicU64,
    /// Point-read record-location histogram: reads touching 1, 2, or 3+
    /// record locations.
    pub reads_one_location: CachePadded<AtomicU64>,
    pub reads_two_locations: CachePadded<AtomicU64>,
    pub reads_more_locations: CachePadded<AtomicU64>,
    pub write_conflicts: CachePadded<AtomicU64>,
    pub validations_failed: AtomicU64,
}

impl Metrics {
    pub fn record_read_locations(&self, n: u64) {
        match n {
            0 | 1 => self.reads_one_location.fetch_add(1, Ordering::Relaxed),
            2 => self.reads_two_locations.fetch_add(1, Ordering::Relaxed),
            _ => self.reads_more_locations.fetch_add(1, Ordering::Relaxed),
        };
    }

    pub fn dealloc_backlog(&self) -> u64 {
        self.dealloc_enqueued
            .load(Ordering::Relaxed)
            .saturating_sub(self.dealloc_freed.load(Ordering::Relaxed))
    }

    pub fn mean_merge_latency_nanos(&self) -> u64 {
        let n = self.merges_completed.load(Ordering::Relaxed);
        self.merge_nanos_total
            .load(Ordering::Relaxed)
            .checked_div(n)
            .unwrap_or(0)
    }
}
