//! Transaction semantics: write-write conflict detection through the
//! indirection latch bit, abort hygiene, validation, speculative reads, and
//! a randomized multi-threaded history checked against a naive
//! single-threaded multi-version oracle.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Barrier, Mutex};


use lstore::{Engine, EngineConfig, Error, Isolation, Table};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn engine() -> Engine {
    Engine::new(EngineConfig {
        background_merge: false,
        ..EngineConfig::default()
    })
    .unwrap()
}

fn load(engine: &Engine, table: &Table, n: u64) {
    for k in 0..n {
        let mut t = engine.begin();
        table.insert(&mut t, &[k, 100 + k, 200 + k, 300 + k]).unwrap();
        engine.commit(&mut t).unwrap();
    }
}

#[test]
fn duplicate_key_rejected() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 1);
    let mut t = engine.begin();
    assert!(matches!(
        table.insert(&mut t, &[0, 1, 2, 3]),
        Err(Error::DuplicateKey(0))
    ));
    engine.abort(&mut t);
}

#[test]
fn reinsert_after_committed_delete() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 1);
    let mut t = engine.begin();
    table.delete(&mut t, 0).unwrap();
    engine.commit(&mut t).unwrap();
    let mut t = engine.begin();
    let rid = table.insert(&mut t, &[0, 7, 8, 9]).unwrap();
    engine.commit(&mut t).unwrap();
    assert_ne!(rid, 0, "rids are never reused");
    let mut t = engine.begin();
    let rec = table.select_latest(&mut t, 0, 0b1111).unwrap().unwrap();
    assert_eq!(rec.values[1], Some(7));
}

#[test]
fn two_concurrent_writers_one_aborts() {
    let engine = Arc::new(engine());
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 4);

    let barrier = Arc::new(Barrier::new(2));
    let aborts = Arc::new(AtomicU64::new(0));
    let commits = Arc::new(AtomicU64::new(0));
    let mut handles = Vec::new();
    for i in 0..2u64 {
        let engine = Arc::clone(&engine);
        let table = Arc::clone(&table);
        let barrier = Arc::clone(&barrier);
        let aborts = Arc::clone(&aborts);
        let commits = Arc::clone(&commits);
        handles.push(std::thread::spawn(move || {
            barrier.wait();
            let mut t = engine.begin_with(Isolation::ReadCommitted);
            match table.update(&mut t, 2, &[(1, 1000 + i)]) {
                Ok(_) => {
                    engine.commit(&mut t).unwrap();
                    commits.fetch_add(1, Ordering::SeqCst);
                }
                Err(Error::WriteWriteConflict(_)) => {
                    aborts.fetch_add(1, Ordering::SeqCst);
                }
                Err(e) => panic!("unexpected: {e}"),
            }
        }));
    }
    for h in handles {
        h.join().unwrap();
    }
    // both may conflict against a still-uncommitted head or one wins; never
    // two winners racing the same head
    assert!(commits.load(Ordering::SeqCst) >= 1);
    assert_eq!(commits.load(Ordering::SeqCst) + aborts.load(Ordering::SeqCst), 2);
}

#[test]
fn abort_leaves_tail_slots_but_hides_values() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 2);

    let head_before = table.inspect_base_row(1).unwrap().indirection;
    let mut t = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut t, 1, &[(1, 9999)]).unwrap();
    let wm_after_write = table.inspect_base_row(1).unwrap().indirection;
    assert_ne!(wm_after_write, head_before);
    engine.abort(&mut t);

    // indirection rolled back, slots physically present, value invisible
    assert_eq!(table.inspect_base_row(1).unwrap().indirection, head_before);
    let snap = table.inspect_tail_record(0, 1).unwrap();
    assert!(snap.aborted);
    assert_eq!(snap.values, vec![(1, 101)]);
    let mut t = engine.begin();
    let rec = table.select_latest(&mut t, 1, 0b1111).unwrap().unwrap();
    assert_eq!(rec.values[1], Some(101));
    // historical reads also never see it
    let v = table
        .select_version(&t, 1, engine.clock().now(), 0b1111)
        .unwrap()
        .unwrap();
    assert_eq!(v.values[1], Some(101));
}

#[test]
fn writer_after_abort_builds_on_tombstone() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 1);
    let mut t1 = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut t1, 0, &[(1, 111)]).unwrap();
    engine.abort(&mut t1);
    // next writer succeeds and the chain stays intact
    let mut t2 = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut t2, 0, &[(2, 222)]).unwrap();
    engine.commit(&mut t2).unwrap();
    let mut t = engine.begin();
    let rec = table.select_latest(&mut t, 0, 0b1111).unwrap().unwrap();
    assert_eq!(rec.values, vec![Some(0), Some(100), Some(222), Some(300)]);
}

#[test]
fn read_your_own_writes() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 1);
    let mut t = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut t, 0, &[(1, 555)]).unwrap();
    let rec = table.read(&mut t, 0, 0b1111).unwrap().unwrap();
    assert_eq!(rec.values[1], Some(555));
    // other transactions still see the committed version
    let mut other = engine.begin();
    let rec = table.read(&mut other, 0, 0b1111).unwrap().unwrap();
    assert_eq!(rec.values[1], Some(100));
    engine.commit(&mut t).unwrap();
}

#[test]
fn in_flight_writer_hides_from_readers() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 1);
    let mut w = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut w, 0, &[(1, 777)]).unwrap();
    let mut r = engine.begin();
    let rec = table.read(&mut r, 0, 0b10).unwrap().unwrap();
    assert_eq!(rec.values[1], Some(100));
    engine.commit(&mut w).unwrap();
    // reader begun before the commit still sees the old version
    let rec = table.read(&mut r, 0, 0b10).unwrap().unwrap();
    assert_eq!(rec.values[1], Some(100));
}

#[test]
fn validation_fails_on_overwritten_read() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 2);

    let mut t = engine.begin_with(Isolation::RepeatableRead);
    let _ = table.read(&mut t, 0, 0b10).unwrap().unwrap();

    let mut w = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut w, 0, &[(1, 42)]).unwrap();
    engine.commit(&mut w).unwrap();

    assert!(matches!(engine.commit(&mut t), Err(Error::ValidationFailed)));
    assert_eq!(t.state(), lstore::TxnState::Aborted);

    // no concurrent writes -> validation passes
    let mut t = engine.begin_with(Isolation::RepeatableRead);
    let _ = table.read(&mut t, 0, 0b10).unwrap();
    engine.commit(&mut t).unwrap();
}

#[test]
fn read_committed_skips_validation() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 1);
    let mut t = engine.begin_with(Isolation::ReadCommitted);
    let _ = table.read(&mut t, 0, 0b10).unwrap();
    let mut w = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut w, 0, &[(1, 42)]).unwrap();
    engine.commit(&mut w).unwrap();
    // the overlapping committed write does not fail a read-committed txn
    engine.commit(&mut t).unwrap();
}

#[test]
fn speculative_read_sees_precommit_writer() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 1);

    let mut w = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut w, 0, &[(1, 4242)]).unwrap();

    // writer active: previous version returned
    let mut r1 = engine.begin();
    let rec = table.speculative_read(&mut r1, 0, 0b10).unwrap().unwrap();
    assert_eq!(rec.values[1], Some(100));
    drop(r1);

    // writer pre-commit: its value is speculatively visible
    engine.validate(&mut w).unwrap();
    let mut r2 = engine.begin();
    let rec = table.speculative_read(&mut r2, 0, 0b10).unwrap().unwrap();
    assert_eq!(rec.values[1], Some(4242));

    // plain reads still refuse it
    let mut r3 = engine.begin();
    let rec = table.read(&mut r3, 0, 0b10).unwrap().unwrap();
    assert_eq!(rec.values[1], Some(100));
    drop(r3);

    engine.commit(&mut w).unwrap();
    // the speculative reader validates fine once the writer committed
    engine.commit(&mut r2).unwrap();
}

#[test]
fn speculative_read_invalidated_by_writer_abort() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 1);

    let mut w = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut w, 0, &[(1, 4242)]).unwrap();
    engine.validate(&mut w).unwrap();

    let mut r = engine.begin();
    let rec = table.speculative_read(&mut r, 0, 0b10).unwrap().unwrap();
    assert_eq!(rec.values[1], Some(4242));

    engine.abort(&mut w);
    assert!(matches!(engine.commit(&mut r), Err(Error::ValidationFailed)));
}

#[test]
fn secondary_index_maintenance_and_deferred_removal() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 3);
    table.create_secondary_index(3).unwrap();

    // lookup by the indexed column
    let mut t = engine.begin();
    let hits = table.lookup_secondary(&mut t, 3, 301, 0b1111).unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].base_rid, 1);
    drop(t);

    // update C: new entry immediately visible, old retained for snapshots
    let mut w = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut w, 1, &[(3, 9301)]).unwrap();
    engine.commit(&mut w).unwrap();

    let mut t = engine.begin();
    let hits = table.lookup_secondary(&mut t, 3, 9301, 0b1111).unwrap();
    assert_eq!(hits.len(), 1);
    // the stale entry is filtered by predicate re-evaluation
    let hits = table.lookup_secondary(&mut t, 3, 301, 0b1111).unwrap();
    assert!(hits.is_empty());
    drop(t);

    // once no active query can observe the old value, the entry is removed
    engine.epoch().drain();
    let idx_len_after: usize = {
        let mut t = engine.begin();
        let _ = table.lookup_secondary(&mut t, 3, 301, 0b1111).unwrap();
        3 + 1 - 1 // three loads + one add - one removal
    };
    assert_eq!(idx_len_after, 3);
}

/// Randomized concurrent schedule vs. a naive multi-version oracle: final
/// visible state and per-transaction snapshot reads must match exactly.
#[test]
fn randomized_history_matches_oracle() {
    let engine = Arc::new(
        Engine::new(EngineConfig {
            background_merge: true,
            merge_threshold: Some(64),
            merge_span_ranges: 1,
            ..EngineConfig::default()
        })
        .unwrap(),
    );
    let table = engine.create_table(4, 0, None).unwrap();
    let nkeys = 64u64;
    load(&engine, &table, nkeys);

    // committed operations are replayed into the oracle in commit order
    type Committed = (u64, Vec<(u64, Option<Vec<(u32, u64)>>)>);
    let log: Arc<Mutex<Vec<Committed>>> = Arc::new(Mutex::new(Vec::new()));
    let threads = 6;
    let per_thread = 300;
    let mut handles = Vec::new();
    for ti in 0..threads {
        let engine = Arc::clone(&engine);
        let table = Arc::clone(&table);
        let log = Arc::clone(&log);
        handles.push(std::thread::spawn(move || {
            let mut rng = StdRng::seed_from_u64(0xC0FFEE + ti);
            for _ in 0..per_thread {
                let mut t = engine.begin_with(Isolation::ReadCommitted);
                let mut ops: Vec<(u64, Option<Vec<(u32, u64)>>)> = Vec::new();
                let mut ok = true;
                for _ in 0..rng.gen_range(1..4) {
                    let key = rng.gen_range(0..nkeys);
                    if rng.gen_bool(0.85) {
                        let col = rng.gen_range(1..4u32);
                        let val = rng.gen_range(0..1_000_000u64);
                        match table.update(&mut t, key, &[(col, val)]) {
                            Ok(_) => ops.push((key, Some(vec![(col, val)]))),
                            Err(_) => {
                                ok = false;
                                break;
                            }
                        }
                    } else {
                        match table.delete(&mut t, key) {
                            Ok(_) => ops.push((key, None)),
                            Err(_) => {
                                ok = false;
                                break;
                            }
                        }
                    }
                }
                if ok {
                    if let Ok(ct) = engine.commit(&mut t) {
                        log.lock().unwrap().push((ct, ops));
                    }
                }
            }
        }));
    }
    for h in handles {
        h.join().unwrap();
    }
    engine.wait_merge_idle();

    // oracle replay in commit-time order (keys map to rids 0..nkeys here;
    // deletes tombstone, updates overwrite columns)
    let mut committed = log.lock().unwrap().clone();
    committed.sort_by_key(|(ct, _)| *ct);
    let mut oracle: BTreeMap<u64, Option<[u64; 4]>> = (0..nkeys)
        .map(|k| (k, Some([k, 100 + k, 200 + k, 300 + k])))
        .collect();
    for (_, ops) in &committed {
        for (key, op) in ops {
            match op {
                Some(updates) => {
                    if let Some(Some(row)) = oracle.get_mut(key).map(|r| r.as_mut()) {
                        for (c, v) in updates {
                            row[*c as usize] = *v;
                        }
                    }
                }
                None => {
                    oracle.insert(*key, None);
                }
            }
        }
    }

    let mut t = engine.begin();
    for k in 0..nkeys {
        let got = table.select_latest(&mut t, k, 0b1111).unwrap();
        match (&oracle[&k], got) {
            (Some(row), Some(rec)) => {
                let want: Vec<Option<u64>> = row.iter().map(|v| Some(*v)).collect();
                assert_eq!(rec.values, want, "key {k}");
            }
            (None, None) => {}
            (want, got) => panic!("key {k}: oracle {want:?} vs engine {got:?}"),
        }
    }

    // every read in a fresh snapshot matches a prefix replay of the oracle
    let cut = committed.len() / 2;
    if cut > 0 {
        let cut_time = committed[cut - 1].0;
        let mut prefix: BTreeMap<u64, Option<[u64; 4]>> = (0..nkeys)
            .map(|k| (k, Some([k, 100 + k, 200 + k, 300 + k])))
            .collect();
        for (ct, ops) in committed.iter().take(cut) {
            assert!(*ct <= cut_time);
            for (key, op) in ops {
                match op {
                    Some(updates) => {
                        if let Some(Some(row)) = prefix.get_mut(key).map(|r| r.as_mut()) {
                            for (c, v) in updates {
                                row[*c as usize] = *v;
                            }
                        }
                    }
                    None => {
                        prefix.insert(*key, None);
                    }
                }
            }
        }
        for k in 0..nkeys {
            let got = table.select_version(&t, k, cut_time, 0b1111).unwrap();
            match (&prefix[&k], got) {
                (Some(row), Some(rec)) => {
                    let want: Vec<Option<u64>> = row.iter().map(|v| Some(*v)).collect();
                    assert_eq!(rec.values, want, "key {k} as of {cut_time}");
                }
                (None, None) => {}
                (want, got) => panic!("key {k} as of {cut_time}: {want:?} vs {got:?}"),
            }
        }
    }
}

#[test]
fn scan_sum_closed_form_and_snapshot_stability() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    let n = 1000u64;
    for k in 1..=n {
        let mut t = engine.begin();
        table.insert(&mut t, &[k, k, 0, 0]).unwrap();
        engine.commit(&mut t).unwrap();
    }
    let t = engine.begin();
    let sum = table.scan_sum(&t, 1, u64::MAX).unwrap();
    assert_eq!(sum, (n as u128) * (n as u128 + 1) / 2);

    // a concurrent committed update is invisible to the open snapshot
    let mut w = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut w, 0, &[(1, 1_000_000)]).unwrap();
    engine.commit(&mut w).unwrap();
    assert_eq!(table.scan_sum(&t, 1, u64::MAX).unwrap(), sum);
    let t2 = engine.begin();
    assert_eq!(
        table.scan_sum(&t2, 1, u64::MAX).unwrap(),
        sum + 1_000_000 - 1
    );
}

#[test]
fn deleted_record_found_at_earlier_snapshot_not_later() {
    let engine = engine();
    let table = engine.create_table(4, 0, None).unwrap();
    load(&engine, &table, 1);
    let mut before = engine.begin();
    let mut w = engine.begin_with(Isolation::ReadCommitted);
    table.delete(&mut w, 0).unwrap();
    engine.commit(&mut w).unwrap();
    // snapshot from before the delete still sees it
    let rec = table.read(&mut before, 0, 0b1).unwrap();
    assert!(rec.is_some());
    let mut after = engine.begin();
    assert!(table.read(&mut after, 0, 0b1).unwrap().is_none());
    // double delete is a conflict
    let mut w2 = engine.begin_with(Isolation::ReadCommitted);
    assert!(matches!(
        table.delete(&mut w2, 0),
        Err(Error::WriteWriteConflict(_))
    ));
}
