//! Run reports: one struct, three renderings (json, csv, human).

use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct ThreadStats {
    pub thread: u32,
    pub role: String,
    pub attempted: u64,
    pub committed: u64,
    pub aborted: u64,
    pub scans: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub engine: String,
    pub contention: String,
    pub rows: u64,
    pub active_set: u64,
    pub threads: u32,
    pub scanners: u32,
    pub read_ratio: f64,
    pub scan_fraction: f64,
    pub range_size: u64,
    pub merge_threshold: u64,
    pub duration_s: f64,
    pub seed: u64,
    pub attempted: u64,
    pub committed: u64,
    pub aborted: u64,
    pub txn_per_sec: f64,
    pub abort_rate: f64,
    pub scans: u64,
    pub scan_p50_ms: f64,
    pub scan_p95_ms: f64,
    pub scan_mean_ms: f64,
    pub merges_completed: u64,
    pub tail_records_consolidated: u64,
    pub mean_merge_latency_us: f64,
    pub dealloc_backlog: u64,
    pub barrier_stall_ms: f64,
    pub two_hop_read_fraction: f64,
    pub state_hash: String,
    pub verified: Option<bool>,
    pub per_thread: Vec<ThreadStats>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header() -> String {
        [
            "engine",
            "contention",
            "rows",
            "active_set",
            "threads",
            "scanners",
            "read_ratio",
            "scan_fraction",
            "range_size",
            "merge_threshold",
            "duration_s",
            "seed",
            "attempted",
            "committed",
            "aborted",
            "txn_per_sec",
            "abort_rate",
            "scans",
            "scan_p50_ms",
            "scan_p95_ms",
            "scan_mean_ms",
            "merges_completed",
            "tail_records_consolidated",
            "mean_merge_latency_us",
            "dealloc_backlog",
            "barrier_stall_ms",
            "two_hop_read_fraction",
            "state_hash",
        ]
        .join(",")
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3},{},{},{},{},{:.1},{:.4},{},{:.3},{:.3},{:.3},{},{},{:.1},{},{:.3},{:.4},{}",
            self.engine,
            self.contention,
            self.rows,
            self.active_set,
            self.threads,
            self.scanners,
            self.read_ratio,
            self.scan_fraction,
            self.range_size,
            self.merge_threshold,
            self.duration_s,
            self.seed,
            self.attempted,
            self.committed,
            self.aborted,
            self.txn_per_sec,
            self.abort_rate,
            self.scans,
            self.scan_p50_ms,
            self.scan_p95_ms,
            self.scan_mean_ms,
            self.merges_completed,
            self.tail_records_consolidated,
            self.mean_merge_latency_us,
            self.dealloc_backlog,
            self.barrier_stall_ms,
            self.two_hop_read_fraction,
            self.state_hash,
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(), self.to_csv_row())
    }

    pub fn to_human(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "engine {} | contention {} | rows {} (active set {}) | {} writers + {} scanners\n",
            self.engine, self.contention, self.rows, self.active_set, self.threads, self.scanners
        ));
        s.push_str(&format!(
            "committed txn/s      {:>12.1}\nattempted/committed  {:>7}/{:<10} abort rate {:.2}%\n",
            self.txn_per_sec,
            self.attempted,
            self.committed,
            self.abort_rate * 100.0
        ));
        s.push_str("Scan performance (in secs.)\n");
        s.push_str(&format!(
            "  p50 {:.4}   p95 {:.4}   mean {:.4}   ({} scans of {:.0}% of the table)\n",
            self.scan_p50_ms / 1000.0,
            self.scan_p95_ms / 1000.0,
            self.scan_mean_ms / 1000.0,
            self.scans,
            self.scan_fraction * 100.0
        ));
        s.push_str(&format!(
            "merges {}   tail records consolidated {}   mean merge latency {:.1} us   dealloc backlog {}\n",
            self.merges_completed,
            self.tail_records_consolidated,
            self.mean_merge_latency_us,
            self.dealloc_backlog
        ));
        if self.barrier_stall_ms > 0.0 {
            s.push_str(&format!("barrier stall {:.1} ms\n", self.barrier_stall_ms));
        }
        if self.two_hop_read_fraction > 0.0 {
            s.push_str(&format!(
                "point reads within two record locations: {:.2}%\n",
                self.two_hop_read_fraction * 100.0
            ));
        }
        if let Some(v) = self.verified {
            s.push_str(&format!("verification: {}\n", if v { "PASS" } else { "FAIL" }));
        }
        s.push_str(&format!("state hash {}\n", self.state_hash));
        s
    }
}
