//! Workload configuration: CLI flags and flat key=value config files.

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum EngineKind {
    Lstore,
    Iuh,
    Dbm,
}

impl EngineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EngineKind::Lstore => "lstore",
            EngineKind::Iuh => "iuh",
            EngineKind::Dbm => "dbm",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Contention {
    Low,
    Med,
    High,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Human,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Logging {
    On,
    Off,
}

/// Micro-benchmark harness: point-update transactions with concurrent
/// analytical scans over one table, against a selectable storage engine.
#[derive(Parser, Clone, Debug)]
#[command(name = "lstore-bench", version, about)]
pub struct Args {
    /// Storage engine under test.
    #[arg(long, value_enum, default_value = "lstore")]
    pub engine: EngineKind,

    /// Contention level; sets the active-set size (desk scale: 100K / 1K /
    /// 100 records; multiply by 100 with --paper-scale).
    #[arg(long, value_enum, default_value = "low")]
    pub contention: Contention,

    /// Table rows loaded before the run.
    #[arg(long, default_value_t = 100_000)]
    pub rows: u64,

    /// Data columns (including the key column).
    #[arg(long, default_value_t = 10)]
    pub columns: u32,

    /// Update-transaction worker threads.
    #[arg(long, default_value_t = 4)]
    pub writers: u32,

    /// Analytical scan threads (snapshot SUM over a fraction of the table).
    #[arg(long, default_value_t = 1)]
    pub scanners: u32,

    /// Fraction of statements per update transaction that are reads
    /// (10 statements per transaction; 0.8 = 8 reads + 2 writes).
    #[arg(long, default_value_t = 0.8)]
    pub read_ratio: f64,

    /// Fraction of the table each scan covers.
    #[arg(long, default_value_t = 0.10)]
    pub scan_fraction: f64,

    /// Update-range size (power of two).
    #[arg(long, default_value_t = 4096)]
    pub range_size: u64,

    /// Merge trigger: unmerged committed tail records per range group.
    /// Defaults to 50% of the merge span.
    #[arg(long)]
    pub merge_threshold: Option<u64>,

    /// Wall-clock run duration in seconds (ignored when --txns is set).
    #[arg(long, default_value_t = 3.0)]
    pub duration: f64,

    /// Fixed transaction budget per writer (deterministic runs).
    #[arg(long)]
    pub txns: Option<u64>,

    /// Workload RNG seed.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    /// Output format.
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,

    /// Verify every scan and the final state against a replay oracle
    /// (bounded runs; use with --txns).
    #[arg(long, default_value_t = false)]
    pub verify: bool,

    /// Redo logging (lstore engine only).
    #[arg(long, value_enum, default_value = "off")]
    pub logging: Logging,

    /// Log/pages directory used when logging is on.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,

    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Restore the full-scale active-set sizes.
    #[arg(long, default_value_t = false)]
    pub paper_scale: bool,

    /// Zipfian key skew exponent (unset = uniform; extension, not part of
    /// the reference workload).
    #[arg(long)]
    pub zipf: Option<f64>,

    /// Flat key=value config file; keys match the long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Args {
    pub fn active_set(&self) -> u64 {
        let desk = match self.contention {
            Contention::Low => 100_000,
            Contention::Med => 1_000,
            Contention::High => 100,
        };
        let set = if self.paper_scale { desk * 100 } else { desk };
        set.min(self.rows.max(1))
    }

    pub fn reads_per_txn(&self) -> u32 {
        (10.0 * self.read_ratio.clamp(0.0, 1.0)).round() as u32
    }

    pub fn writes_per_txn(&self) -> u32 {
        10 - self.reads_per_txn()
    }

    /// Apply `key=value` lines from a config file over the parsed flags.
    pub fn apply_config_file(&mut self, path: &std::path::Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value", lineno + 1))?;
            let (k, v) = (k.trim(), v.trim());
            let parse_err = |e: String| format!("line {}: {k}: {e}", lineno + 1);
            match k {
                "engine" => {
                    self.engine = EngineKind::from_str(v, true).map_err(parse_err)?;
                }
                "contention" => {
                    self.contention = Contention::from_str(v, true).map_err(parse_err)?;
                }
                "rows" => self.rows = v.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                "columns" => self.columns = v.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                "writers" => self.writers = v.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                "scanners" => self.scanners = v.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                "read_ratio" | "read-ratio" => self.read_ratio = v.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?,
                "scan_fraction" | "scan-fraction" => self.scan_fraction = v.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?,
                "range_size" | "range-size" => self.range_size = v.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                "merge_threshold" | "merge-threshold" => {
                    self.merge_threshold = Some(v.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?)
                }
                "duration" => self.duration = v.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?,
                "txns" => self.txns = Some(v.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?),
                "seed" => self.seed = v.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
                "format" => self.format = Format::from_str(v, true).map_err(parse_err)?,
                "verify" => self.verify = v.parse().map_err(|e: std::str::ParseBoolError| parse_err(e.to_string()))?,
                "logging" => self.logging = Logging::from_str(v, true).map_err(parse_err)?,
                "paper_scale" | "paper-scale" => self.paper_scale = v.parse().map_err(|e: std::str::ParseBoolError| parse_err(e.to_string()))?,
                "zipf" => self.zipf = Some(v.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?),
                other => return Err(format!("line {}: unknown key {other}", lineno + 1)),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.columns < 2 || self.columns > 60 {
            return Err("columns must be in 2..=60".into());
        }
        if !(0.0..=1.0).contains(&self.read_ratio) {
            return Err("read_ratio must be within [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.scan_fraction) {
            return Err("scan_fraction must be within [0, 1]".into());
        }
        if self.rows == 0 {
            return Err("rows must be positive".into());
        }
        if !self.range_size.is_power_of_two() {
            return Err("range_size must be a power of two".into());
        }
        Ok(())
    }
}
