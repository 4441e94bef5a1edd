//! Workload runner: update-transaction writer threads (uniform keys over
//! the active set, ~40% of columns touched per write) plus snapshot scan
//! threads computing SUM over a fraction of the table, all against one
//! backend.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use lstore::baselines::{Backend, DbmEngine, IuhEngine, LStoreBackend};
use lstore::{Engine, EngineConfig, Isolation, LogConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::config::{Args, EngineKind, Logging};
use crate::oracle::{CommittedTxn, Oracle, OracleOp};
use crate::report::{RunReport, ThreadStats};

pub struct Built {
    pub backend: Arc<dyn Backend>,
    pub lstore: Option<Arc<Engine>>,
}

pub fn build_backend(args: &Args) -> Result<Built, String> {
    match args.engine {
        EngineKind::Lstore => {
            let logging = match args.logging {
                Logging::On => {
                    let dir = args
                        .log_dir
                        .clone()
                        .unwrap_or_else(|| std::env::temp_dir().join("lstore-bench-log"));
                    let _ = std::fs::remove_dir_all(&dir);
                    Some(LogConfig::new(dir))
                }
                Logging::Off => None,
            };
            let config = EngineConfig {
                range_size: args.range_size,
                insert_range_size: args.range_size,
                merge_span_ranges: 1,
                merge_threshold: args.merge_threshold,
                // the workload has no historic reads; compression cadence off
                compress_after_merges: 0,
                logging,
                ..EngineConfig::default()
            };
            let engine = Arc::new(Engine::new(config).map_err(|e| e.to_string())?);
            let table = engine
                .create_table(args.columns, 0, Some(args.range_size))
                .map_err(|e| e.to_string())?;
            Ok(Built {
                backend: Arc::new(LStoreBackend::new(Arc::clone(&engine), table)),
                lstore: Some(engine),
            })
        }
        EngineKind::Iuh => Ok(Built {
            backend: Arc::new(IuhEngine::new(args.columns, 0).map_err(|e| e.to_string())?),
            lstore: None,
        }),
        EngineKind::Dbm => {
            let threshold = args
                .merge_threshold
                .unwrap_or_else(|| (args.range_size / 8).max(64));
            Ok(Built {
                backend: Arc::new(
                    DbmEngine::new(args.columns, 0, args.range_size, threshold)
                        .map_err(|e| e.to_string())?,
                ),
                lstore: None,
            })
        }
    }
}

pub fn initial_row(args: &Args, key: u64) -> Vec<u64> {
    (0..args.columns as u64)
        .map(|c| if c == 0 { key } else { key * 7 + c })
        .collect()
}

/// Load the table and return the committed load transactions (for the
/// oracle).
pub fn load_rows(backend: &dyn Backend, args: &Args) -> Result<Vec<CommittedTxn>, String> {
    let mut committed = Vec::with_capacity(args.rows as usize);
    for key in 0..args.rows {
        let values = initial_row(args, key);
        let mut t = backend.begin(Isolation::ReadCommitted);
        backend
            .insert(&mut t, &values)
            .map_err(|e| format!("load insert {key}: {e}"))?;
        let ct = backend
            .commit(&mut t)
            .map_err(|e| format!("load commit {key}: {e}"))?;
        committed.push(CommittedTxn {
            commit_time: ct,
            ops: vec![(key, OracleOp::Insert(values))],
        });
    }
    Ok(committed)
}

struct SharedCounters {
    attempted: AtomicU64,
    committed: AtomicU64,
    aborted: AtomicU64,
    scans: AtomicU64,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub verified: Option<bool>,
    pub verify_failures: Vec<String>,
}

pub fn run(args: &Args) -> Result<RunOutcome, String> {
    args.validate()?;
    let built = build_backend(args)?;
    let backend = Arc::clone(&built.backend);

    let load_committed = load_rows(backend.as_ref(), args)?;
    backend.settle_load();

    let counters = Arc::new(SharedCounters {
        attempted: AtomicU64::new(0),
        committed: AtomicU64::new(0),
        aborted: AtomicU64::new(0),
        scans: AtomicU64::new(0),
    });
    let stop = Arc::new(AtomicBool::new(false));
    let verify_log: Arc<Mutex<Vec<CommittedTxn>>> = Arc::new(Mutex::new(Vec::new()));
    let scan_log: Arc<Mutex<Vec<(u64, u64, u128)>>> = Arc::new(Mutex::new(Vec::new()));
    let scan_lat_ms: Arc<Mutex<Vec<f64>>> = Arc::new(Mutex::new(Vec::new()));

    let reads = args.reads_per_txn();
    let writes = args.writes_per_txn();
    let active = args.active_set();
    let ncols = args.columns;
    let scan_limit = ((args.rows as f64) * args.scan_fraction).ceil() as u64;
    let deadline = Instant::now() + Duration::from_secs_f64(args.duration);
    let txn_budget = args.txns;
    let mask_all: u64 = (1u64 << ncols) - 1;

    let t_start = Instant::now();
    let mut handles = Vec::new();
    let mut thread_stats: Vec<Arc<Mutex<ThreadStats>>> = Vec::new();

    for wi in 0..args.writers {
        let backend = Arc::clone(&backend);
        let counters = Arc::clone(&counters);
        let stop = Arc::clone(&stop);
        let verify_log = Arc::clone(&verify_log);
        let stats = Arc::new(Mutex::new(ThreadStats {
            thread: wi,
            role: "writer".into(),
            attempted: 0,
            committed: 0,
            aborted: 0,
            scans: 0,
        }));
        thread_stats.push(Arc::clone(&stats));
        let verify = args.verify;
        let seed = args.seed;
        let zipf = args.zipf;
        handles.push(std::thread::spawn(move || {
            let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(0x9E3779B97F4A7C15) ^ wi as u64);
            let zipf_dist = zipf.map(|theta| {
                rand_distr::Zipf::new(active, theta).expect("valid zipf exponent")
            });
            let mut local = (0u64, 0u64, 0u64); // attempted, committed, aborted
            let mut done = 0u64;
            loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                if let Some(budget) = txn_budget {
                    if done >= budget {
                        break;
                    }
                } else if Instant::now() >= deadline {
                    break;
                }
                done += 1;
                local.0 += 1;
                let mut t = backend.begin(Isolation::ReadCommitted);
                let mut ops: Vec<(u64, OracleOp)> = Vec::new();
                let mut failed = false;
                for stmt in 0..(reads + writes) {
                    let key = match &zipf_dist {
                        Some(z) => (rng.sample(*z) as u64).saturating_sub(1).min(active - 1),
                        None => rng.gen_range(0..active),
                    };
                    let is_read = stmt < reads;
                    if is_read {
                        if backend.select(&mut t, key, mask_all).is_err() {
                            failed = true;
                            break;
                        }
                    } else {
                        // on average 40% of all columns are updated
                        let mut updates = Vec::new();
                        for c in 1..ncols {
                            if rng.gen_bool(0.4) {
                                updates.push((c, rng.gen_range(0..1_000_000u64)));
                            }
                        }
                        if updates.is_empty() {
                            updates.push((
                                rng.gen_range(1..ncols),
                                rng.gen_range(0..1_000_000u64),
                            ));
                        }
                        match backend.update(&mut t, key, &updates) {
                            Ok(()) => ops.push((key, OracleOp::Update(updates))),
                            Err(_) => {
                                failed = true;
                                break;
                            }
                        }
                    }
                }
                if failed {
                    backend.abort(&mut t);
                    local.2 += 1;
                    continue;
                }
                match backend.commit(&mut t) {
                    Ok(ct) => {
                        local.1 += 1;
                        if verify && !ops.is_empty() {
                            verify_log.lock().unwrap().push(CommittedTxn {
                                commit_time: ct,
                                ops,
                            });
                        }
                    }
                    Err(_) => local.2 += 1,
                }
            }
            counters.attempted.fetch_add(local.0, Ordering::Relaxed);
            counters.committed.fetch_add(local.1, Ordering::Relaxed);
            counters.aborted.fetch_add(local.2, Ordering::Relaxed);
            let mut s = stats.lock().unwrap();
            s.attempted = local.0;
            s.committed = local.1;
            s.aborted = local.2;
        }));
    }

    for si in 0..args.scanners {
        let backend = Arc::clone(&backend);
        let counters = Arc::clone(&counters);
        let stop = Arc::clone(&stop);
        let scan_log = Arc::clone(&scan_log);
        let scan_lat = Arc::clone(&scan_lat_ms);
        let stats = Arc::new(Mutex::new(ThreadStats {
            thread: args.writers + si,
            role: "scanner".into(),
            attempted: 0,
            committed: 0,
            aborted: 0,
            scans: 0,
        }));
        thread_stats.push(Arc::clone(&stats));
        let verify = args.verify;
        handles.push(std::thread::spawn(move || {
            let mut n = 0u64;
            while !stop.load(Ordering::Relaxed) {
                let t0 = Instant::now();
                let mut t = backend.begin(Isolation::Snapshot);
                let begin = t.begin_time();
                if let Ok(sum) = backend.scan_sum(&mut t, 1, scan_limit) {
                    let ms = t0.elapsed().as_secs_f64() * 1000.0;
                    scan_lat.lock().unwrap().push(ms);
                    if verify {
                        scan_log.lock().unwrap().push((begin, scan_limit, sum));
                    }
                    n += 1;
                }
                let _ = backend.commit(&mut t);
            }
            counters.scans.fetch_add(n, Ordering::Relaxed);
            stats.lock().unwrap().scans = n;
        }));
    }

    // writers run to budget/deadline; scanners stop with them
    let writer_count = args.writers as usize;
    for h in handles.drain(0..writer_count) {
        h.join().map_err(|_| "writer panicked".to_string())?;
    }
    stop.store(true, Ordering::SeqCst);
    for h in handles {
        h.join().map_err(|_| "scanner panicked".to_string())?;
    }
    let elapsed = t_start.elapsed().as_secs_f64();

    if let Some(engine) = &built.lstore {
        engine.wait_merge_idle();
        engine.epoch().drain();
    }

    // verification: oracle replay of the committed schedule
    let mut verified = None;
    let mut failures = Vec::new();
    if args.verify {
        let mut oracle = Oracle::new();
        oracle.replay(load_committed);
        oracle.replay(std::mem::take(&mut *verify_log.lock().unwrap()));
        let mut ok = true;
        for (begin, limit, sum) in scan_log.lock().unwrap().iter() {
            let want = oracle.sum_at(1, *limit, *begin);
            if want != *sum {
                ok = false;
                failures.push(format!(
                    "scan at begin {begin}: engine {sum} vs oracle {want}"
                ));
            }
        }
        // final visible state per key
        let mut t = backend.begin(Isolation::Snapshot);
        for key in 0..args.rows {
            let got = backend
                .select(&mut t, key, mask_all)
                .map_err(|e| e.to_string())?;
            let want = oracle.latest(key);
            let got_vals: Option<Vec<u64>> =
                got.map(|vals| vals.into_iter().map(|v| v.unwrap_or(0)).collect());
            if got_vals.as_ref() != want {
                ok = false;
                failures.push(format!("key {key}: engine {got_vals:?} vs oracle {want:?}"));
                if failures.len() > 16 {
                    break;
                }
            }
        }
        let _ = backend.commit(&mut t);
        verified = Some(ok);
    }

    // latency percentiles
    let mut lats = scan_lat_ms.lock().unwrap().clone();
    lats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |p: f64| -> f64 {
        if lats.is_empty() {
            0.0
        } else {
            lats[(((lats.len() - 1) as f64) * p) as usize]
        }
    };
    let mean = if lats.is_empty() {
        0.0
    } else {
        lats.iter().sum::<f64>() / lats.len() as f64
    };

    let committed = counters.committed.load(Ordering::Relaxed);
    let attempted = counters.attempted.load(Ordering::Relaxed);
    let aborted = counters.aborted.load(Ordering::Relaxed);
    debug_assert_eq!(attempted, committed + aborted);

    let (merges, consolidated, merge_lat_us, backlog, two_hop) = match &built.lstore {
        Some(engine) => {
            let m = engine.metrics();
            let one = m.reads_one_location.load(Ordering::Relaxed);
            let two = m.reads_two_locations.load(Ordering::Relaxed);
            let more = m.reads_more_locations.load(Ordering::Relaxed);
            let total = one + two + more;
            (
                m.merges_completed.load(Ordering::Relaxed),
                m.tail_records_consolidated.load(Ordering::Relaxed),
                m.mean_merge_latency_nanos() as f64 / 1_000.0,
                m.dealloc_backlog(),
                if total == 0 {
                    0.0
                } else {
                    (one + two) as f64 / total as f64
                },
            )
        }
        None => (backend.merges_completed(), 0, 0.0, 0, 0.0),
    };

    let report = RunReport {
        engine: args.engine.as_str().to_string(),
        contention: format!("{:?}", args.contention).to_lowercase(),
        rows: args.rows,
        active_set: active,
        threads: args.writers,
        scanners: args.scanners,
        read_ratio: args.read_ratio,
        scan_fraction: args.scan_fraction,
        range_size: args.range_size,
        merge_threshold: args.merge_threshold.unwrap_or(args.range_size / 2),
        duration_s: elapsed,
        seed: args.seed,
        attempted,
        committed,
        aborted,
        txn_per_sec: committed as f64 / elapsed.max(1e-9),
        abort_rate: if attempted == 0 {
            0.0
        } else {
            aborted as f64 / attempted as f64
        },
        scans: counters.scans.load(Ordering::Relaxed),
        scan_p50_ms: pct(0.50),
        scan_p95_ms: pct(0.95),
        scan_mean_ms: mean,
        merges_completed: merges,
        tail_records_consolidated: consolidated,
        mean_merge_latency_us: merge_lat_us,
        dealloc_backlog: backlog,
        barrier_stall_ms: backend.barrier_stall_nanos() as f64 / 1e6,
        two_hop_read_fraction: two_hop,
        state_hash: format!("{:016x}", backend.state_fingerprint()),
        verified,
        per_thread: thread_stats
            .iter()
            .map(|s| s.lock().unwrap().clone())
            .collect(),
    };

    Ok(RunOutcome {
        report,
        verified,
        verify_failures: failures,
    })
}
