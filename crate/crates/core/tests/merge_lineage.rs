//! Lineage and merge behavior: epoch-protected reclamation, per-column
//! merge staggering with read reconciliation, TPS monotonicity, merge
//! equivalence against a latest-wins oracle, and foreground progress while
//! the merge worker is stalled.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use lstore::indirection::Link;
use lstore::merge::{check_read_consistency, interpret_indirection, IndirectionUse, MergeBatch};
use lstore::page::{Page, PageKind};
use lstore::{Engine, EngineConfig, Error, Isolation, ReadConsistency};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn engine_manual() -> Engine {
    Engine::new(EngineConfig {
        background_merge: false,
        compress_after_merges: 0,
        ..EngineConfig::default()
    })
    .unwrap()
}

fn load(engine: &Engine, table: &lstore::Table, n: u64) {
    for k in 0..n {
        let mut t = engine.begin();
        table.insert(&mut t, &[k, 10 * k, 0, 0]).unwrap();
        engine.commit(&mut t).unwrap();
    }
    table.rotate_insert_range().unwrap();
    assert!(table.merge_insert_range(0).unwrap());
}

fn upd(engine: &Engine, table: &lstore::Table, rid: u64, col: u32, val: u64) {
    let mut t = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut t, rid, &[(col, val)]).unwrap();
    engine.commit(&mut t).unwrap();
}

#[test]
fn interpret_indirection_cases() {
    let seq_of = |rid: u64| Some(u64::MAX - rid + 1); // rid MAX -> seq 1 ...
    assert_eq!(
        interpret_indirection(Link::Null, seq_of, 0),
        IndirectionUse::UseBasePage
    );
    // head at seq 5, page TPS 0: follow the tail
    assert_eq!(
        interpret_indirection(Link::Tail(u64::MAX - 4), seq_of, 0),
        IndirectionUse::FollowTail
    );
    // same head, TPS 7: already applied
    assert_eq!(
        interpret_indirection(Link::Tail(u64::MAX - 4), seq_of, 7),
        IndirectionUse::UseBasePage
    );
}

#[test]
fn read_consistency_detection() {
    let a = Page::new(PageKind::Merged, 1, 0, 8, 7);
    let c = Page::new(PageKind::Merged, 3, 0, 8, 0);
    match check_read_consistency(&[&a, &c]) {
        ReadConsistency::Inconsistent { tps_by_page } => {
            assert_eq!(tps_by_page, vec![(1, 7), (3, 0)]);
        }
        _ => panic!("expected inconsistency"),
    }
    let c7 = Page::new(PageKind::Merged, 3, 0, 8, 7);
    assert_eq!(
        check_read_consistency(&[&a, &c7]),
        ReadConsistency::Consistent { tps: 7 }
    );
    // single-column reads are always consistent
    assert_eq!(
        check_read_consistency(&[&c]),
        ReadConsistency::Consistent { tps: 0 }
    );
}

#[test]
fn merge_batch_validation() {
    let engine = engine_manual();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 8);
    upd(&engine, &table, 0, 1, 1);
    upd(&engine, &table, 1, 1, 2);

    // empty span rejected
    assert!(matches!(
        table.enqueue_merge(MergeBatch { range_id: 0, from_seq: 3, to_seq: 2, columns: None }),
        Err(Error::EmptyMergeBatch)
    ));
    // spans past the resolved watermark rejected
    assert!(table
        .enqueue_merge(MergeBatch { range_id: 0, from_seq: 1, to_seq: 99, columns: None })
        .is_err());
    // valid batch, then an overlapping one
    table
        .enqueue_merge(MergeBatch { range_id: 0, from_seq: 1, to_seq: 2, columns: None })
        .unwrap();
    assert!(matches!(
        table.enqueue_merge(MergeBatch { range_id: 0, from_seq: 1, to_seq: 4, columns: None }),
        Err(Error::OverlappingMergeSpan(0))
    ));
}

#[test]
fn tps_monotone_across_merge_schedule() {
    let engine = engine_manual();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 16);
    let mut last = 0;
    let mut rng = StdRng::seed_from_u64(7);
    for round in 0..10 {
        for _ in 0..rng.gen_range(1..20) {
            let rid = rng.gen_range(0..16u64);
            upd(&engine, &table, rid, 1, round * 1000 + rid);
        }
        if let Some(tps) = table.merge_now(0).unwrap() {
            assert!(tps > last, "TPS must strictly increase per merge");
            last = tps;
        }
    }
    assert_eq!(table.published_tps(0), last);
}

/// Per-column merging staggered on purpose: readers detect the cross-column
/// TPS mismatch and reconcile to the same answer an aligned read gives.
#[test]
fn per_column_staggered_merge_reconciles() {
    let engine = Engine::new(EngineConfig {
        background_merge: false,
        per_column_merge: true,
        compress_after_merges: 0,
        ..EngineConfig::default()
    })
    .unwrap();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 8);

    // history over columns A(1) and C(3)
    for i in 0..6u64 {
        upd(&engine, &table, i % 4, 1, 1000 + i);
        upd(&engine, &table, i % 4, 3, 3000 + i);
    }
    let wm = table.resolved_watermark(0);

    // merge only column A; column C pages stay at TPS 0
    table.merge_columns_now(0, 1 << 1, wm).unwrap();

    let before = engine
        .metrics()
        .tps_mismatches_detected
        .load(Ordering::Relaxed);
    let mut expected: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for i in 0..6u64 {
        let e = expected.entry(i % 4).or_insert((0, 0));
        e.0 = 1000 + i;
        e.1 = 3000 + i;
    }
    let t = engine.begin();
    let mut rows = Vec::new();
    table
        .scan_visible(&t, (1 << 1) | (1 << 3), u64::MAX, &mut |rid, vals| {
            rows.push((rid, vals[1], vals[3]));
        })
        .unwrap();
    let after = engine
        .metrics()
        .tps_mismatches_detected
        .load(Ordering::Relaxed);
    assert!(after > before, "mismatch must be detected");
    for (rid, a, c) in rows {
        if let Some((ea, ec)) = expected.get(&rid) {
            assert_eq!(a, Some(*ea), "rid {rid} column A");
            assert_eq!(c, Some(*ec), "rid {rid} column C");
        } else {
            assert_eq!(a, Some(10 * rid));
            assert_eq!(c, Some(0));
        }
    }

    // point reads reconcile per column as well
    let mut t = engine.begin();
    for (rid, (ea, ec)) in &expected {
        let rec = table
            .read(&mut t, *rid, (1 << 1) | (1 << 3))
            .unwrap()
            .unwrap();
        assert_eq!(rec.values[1], Some(*ea));
        assert_eq!(rec.values[3], Some(*ec));
    }

    // catching column C up to the same TPS restores consistency
    table.merge_columns_now(0, 1 << 3, wm).unwrap();
    let t2 = engine.begin();
    let mut n = 0;
    table
        .scan_visible(&t2, (1 << 1) | (1 << 3), u64::MAX, &mut |_, _| n += 1)
        .unwrap();
    assert_eq!(n, 8);
}

/// Merged content equals a latest-wins single-threaded replay of the
/// committed history, for randomized histories.
#[test]
fn merge_matches_latest_wins_oracle() {
    let engine = engine_manual();
    let table = engine.create_table(4, 0, None).unwrap();
    let n = 32u64;
    load(&engine, &table, n);

    let mut oracle: BTreeMap<u64, [Option<u64>; 4]> = BTreeMap::new();
    let mut rng = StdRng::seed_from_u64(0xBEEF);
    let mut deleted: Vec<u64> = Vec::new();
    for _ in 0..2000 {
        let rid = rng.gen_range(0..n);
        if deleted.contains(&rid) {
            continue;
        }
        if rng.gen_bool(0.02) {
            let mut t = engine.begin_with(Isolation::ReadCommitted);
            if table.delete(&mut t, rid).is_ok() && engine.commit(&mut t).is_ok() {
                deleted.push(rid);
            }
            continue;
        }
        let col = rng.gen_range(1..4u32);
        let val = rng.gen();
        let mut t = engine.begin_with(Isolation::ReadCommitted);
        if table.update(&mut t, rid, &[(col, val)]).is_ok() && engine.commit(&mut t).is_ok() {
            oracle.entry(rid).or_default()[col as usize] = Some(val);
        }
    }
    table.merge_now(0).unwrap();

    for rid in 0..n {
        let row = table.inspect_base_row(rid).unwrap();
        if deleted.contains(&rid) {
            assert!(row.deleted, "rid {rid} must carry the deleted flag");
            continue;
        }
        let exp = oracle.get(&rid).copied().unwrap_or_default();
        for c in 1..4usize {
            let want = exp[c].unwrap_or(if c == 1 { 10 * rid } else { 0 });
            assert_eq!(row.data[c], Some(want), "rid {rid} col {c}");
        }
    }
}

/// Displaced pages stay readable for every query that began before the
/// swap; reclamation poisons them only after those queries finish.
#[test]
fn epoch_reclamation_protects_readers() {
    let engine = engine_manual();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 64);
    for i in 0..64u64 {
        upd(&engine, &table, i, 1, i + 1000);
    }

    // a long scan begins before the merge
    let t_old = engine.begin();
    let sum_before = table.scan_sum(&t_old, 1, u64::MAX).unwrap();

    table.merge_now(0).unwrap();
    // old pages queue but cannot be freed: the scan is still active
    assert_eq!(engine.epoch().drain(), 0);
    assert!(engine.epoch().backlog() > 0);

    // the old snapshot still resolves, against the same values
    let sum_again = table.scan_sum(&t_old, 1, u64::MAX).unwrap();
    assert_eq!(sum_before, sum_again);
    drop(t_old);

    // with the reader gone the queue drains
    engine.epoch().drain();
    assert_eq!(engine.epoch().backlog(), 0);

    // new readers resolve from the merged generation
    let t_new = engine.begin();
    let sum_new = table.scan_sum(&t_new, 1, u64::MAX).unwrap();
    assert_eq!(sum_new, sum_before);
}

/// Historical answers never change across merge plus deallocation: the
/// snapshot tail records preserve pre-update originals.
#[test]
fn no_information_loss_across_merge_and_dealloc() {
    let engine = engine_manual();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 16);
    let mut rng = StdRng::seed_from_u64(42);
    let mut probe_times = Vec::new();
    for round in 0..8u64 {
        for _ in 0..10 {
            let rid = rng.gen_range(0..16u64);
            upd(&engine, &table, rid, rng.gen_range(1..4), round * 100 + rid);
        }
        probe_times.push(engine.clock().now());
    }

    // record answers for every (rid, time) probe before any merge
    let t = engine.begin();
    let mut expected = Vec::new();
    for rid in 0..16u64 {
        for &at in &probe_times {
            expected.push((rid, at, table.select_version(&t, rid, at, 0b1110).unwrap()));
        }
    }
    drop(t);

    table.merge_now(0).unwrap();
    engine.epoch().drain();
    table.compress_historic(0).unwrap();
    engine.epoch().drain();

    let t = engine.begin();
    for (rid, at, want) in expected {
        let got = table.select_version(&t, rid, at, 0b1110).unwrap();
        assert_eq!(got, want, "rid {rid} as of {at}");
    }
}

/// Foreground transactions keep completing while the merge worker is
/// stalled with a loaded queue: the merge holds no latch any foreground
/// path needs.
#[test]
fn foreground_progress_with_stalled_merge_worker() {
    let engine = Arc::new(
        Engine::new(EngineConfig {
            background_merge: true,
            merge_threshold: Some(32),
            merge_span_ranges: 1,
            compress_after_merges: 0,
            ..EngineConfig::default()
        })
        .unwrap(),
    );
    let table = engine.create_table(4, 0, None).unwrap();
    for k in 0..64u64 {
        let mut t = engine.begin();
        table.insert(&mut t, &[k, 0, 0, 0]).unwrap();
        engine.commit(&mut t).unwrap();
    }
    table.rotate_insert_range().unwrap();
    // let the worker consolidate the insert range, then stall it
    std::thread::sleep(std::time::Duration::from_millis(30));
    engine.pause_merge(&table);

    let stop = Arc::new(AtomicBool::new(false));
    let mut handles = Vec::new();
    for ti in 0..4u64 {
        let engine = Arc::clone(&engine);
        let table = Arc::clone(&table);
        let stop = Arc::clone(&stop);
        handles.push(std::thread::spawn(move || {
            let mut rng = StdRng::seed_from_u64(ti);
            let mut done = 0u64;
            while !stop.load(Ordering::Relaxed) {
                let rid = rng.gen_range(0..64u64);
                let mut t = engine.begin_with(Isolation::ReadCommitted);
                if table.update(&mut t, rid, &[(1, rng.gen())]).is_ok() {
                    let _ = engine.commit(&mut t);
                }
                done += 1;
            }
            done
        }));
    }
    std::thread::sleep(std::time::Duration::from_millis(200));
    stop.store(true, Ordering::Relaxed);
    let total: u64 = handles.into_iter().map(|h| h.join().unwrap()).sum();
    // thousands of operations complete while merges are parked
    assert!(total > 500, "foreground stalled: only {total} ops");
    engine.resume_merge(&table);
    engine.wait_merge_idle();
    assert!(engine.metrics().merges_completed.load(Ordering::Relaxed) > 0);
}

#[test]
fn compression_space_no_worse_than_raw_tails() {
    let engine = engine_manual();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 8);
    // cumulative history: repeated updates of a couple of records
    for i in 0..200u64 {
        upd(&engine, &table, i % 2, 1 + (i % 3) as u32, i);
    }
    table.merge_now(0).unwrap();
    let upto = table.published_tps(0);
    let raw = table.tail_span_logical_bytes(0, 1, upto);
    let span = table.compress_historic(0).unwrap().unwrap();
    assert_eq!(span, (1, upto));
    let pages = table.historic_pages(0);
    let compressed: usize = pages.iter().map(|p| p.compressed_bytes()).sum();
    assert!(
        (compressed as u64) <= raw,
        "compressed {compressed} vs raw {raw}"
    );
}

#[test]
fn insert_range_merge_empty_is_noop() {
    let engine = engine_manual();
    let table = engine.create_table(4, 0, None).unwrap();
    table.rotate_insert_range().unwrap();
    // no rows were inserted: eligible and trivially merged
    assert!(table.merge_insert_range(0).unwrap());
    let mut t = engine.begin();
    assert!(table.select_latest(&mut t, 0, 1).unwrap().is_none());
}
