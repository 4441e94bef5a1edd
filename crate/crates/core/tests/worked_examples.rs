//! End-to-end fidelity tests for the canonical four-column example history:
//! three pre-loaded rows, a sequence of updates and a delete producing tail
//! records t1..t8, a merge of t1..t7, further updates t9..t12 exercising
//! cumulation reset, and historic compression of the merged-out records.
//!
//! Times are minute-coded integers (13:04 -> m(1304)).

use lstore::historic::VersionCell;
use lstore::indirection::Link;
use lstore::merge::MergeBatch;
use lstore::{Engine, EngineConfig, Isolation, Table};
use std::sync::Arc;

// column layout: Key=0, A=1, B=2, C=3
const KEY: u32 = 0;
const A: u32 = 1;
const B: u32 = 2;
const C: u32 = 3;

const K1: u64 = 0xF1;
const K2: u64 = 0xF2;
const K3: u64 = 0xF3;

const fn m(hhmm: u64) -> u64 {
    hhmm * 10
}

fn engine() -> Engine {
    let cfg = EngineConfig {
        background_merge: false,
        compress_after_merges: 0,
        ..EngineConfig::default()
    };
    Engine::new(cfg).unwrap()
}

/// Insert k1..k3 at their insert times and consolidate the insert range so
/// they sit in partitioned base records, as the example's starting state.
fn setup(engine: &Engine) -> Arc<Table> {
    let table = engine.create_table(4, KEY, None).unwrap();
    for (t, key, vals) in [
        (m(1002), K1, [K1, 0xA1, 0xB1, 0xC1]),
        (m(1304), K2, [K2, 0xA2, 0xB2, 0xC2]),
        (m(1505), K3, [K3, 0xA3, 0xB3, 0xC3]),
    ] {
        engine.clock().set_next(t - 1);
        let mut txn = engine.begin();
        table.insert(&mut txn, &vals).unwrap();
        let ct = engine.commit(&mut txn).unwrap();
        assert_eq!(ct, t, "commit time pinned for key {key:#x}");
    }
    table.rotate_insert_range().unwrap();
    assert!(table.merge_insert_range(0).unwrap());
    table
}

fn committed_update(engine: &Engine, table: &Table, at: u64, rid: u64, updates: &[(u32, u64)]) {
    engine.clock().set_next(at - 1);
    let mut txn = engine.begin_with(Isolation::ReadCommitted);
    table.update(&mut txn, rid, updates).unwrap();
    assert_eq!(engine.commit(&mut txn).unwrap(), at);
}

fn committed_delete(engine: &Engine, table: &Table, at: u64, rid: u64) {
    engine.clock().set_next(at - 1);
    let mut txn = engine.begin_with(Isolation::ReadCommitted);
    table.delete(&mut txn, rid).unwrap();
    assert_eq!(engine.commit(&mut txn).unwrap(), at);
}

/// Drive the example's t1..t8: updates of b2's A (twice), b2's C, b3's C,
/// and a delete of b1.
fn apply_update_history(engine: &Engine, table: &Table) -> (u64, u64, u64) {
    let (b1, b2, b3) = (0u64, 1u64, 2u64);
    committed_update(engine, table, m(1921), b2, &[(A, 0xA21)]); // t1 snapshot + t2
    committed_update(engine, table, m(1924), b2, &[(A, 0xA22)]); // t3
    committed_update(engine, table, m(1925), b2, &[(C, 0xC21)]); // t4 snapshot + t5
    committed_update(engine, table, m(1945), b3, &[(C, 0xC31)]); // t6 snapshot + t7
    committed_delete(engine, table, m(2015), b1); // t8
    (b1, b2, b3)
}

#[test]
fn base_state_after_insert_consolidation() {
    let engine = engine();
    let table = setup(&engine);
    for (rid, key, start) in [(0u64, K1, m(1002)), (1, K2, m(1304)), (2, K3, m(1505))] {
        let row = table.inspect_base_row(rid).unwrap();
        assert_eq!(row.indirection, Link::Null);
        assert_eq!(row.start_cell, start);
        assert_eq!(row.last_updated, Some(start));
        assert_eq!(row.data[KEY as usize], Some(key));
        assert_eq!(row.enc_bits, 0);
    }
    // reads come entirely from base pages: one record location
    let mut txn = engine.begin();
    let rec = table.select_latest(&mut txn, K1, 0b1111).unwrap().unwrap();
    assert_eq!(rec.values, vec![Some(K1), Some(0xA1), Some(0xB1), Some(0xC1)]);
    assert_eq!(txn.last_read_locations, 1);
    engine.commit(&mut txn).unwrap();
}

#[test]
fn update_and_delete_produce_the_exact_tail_records() {
    let engine = engine();
    let table = setup(&engine);
    let (b1, b2, b3) = apply_update_history(&engine, &table);

    let t = |seq: u64| table.inspect_tail_record(0, seq).unwrap();
    let rid = |seq: u64| table.tail_rid_of_seq(0, seq).unwrap();

    // t1: snapshot of the original A, start = b2's original time
    let t1 = t(1);
    assert!(t1.snapshot);
    assert_eq!(t1.enc_bits, 1 << A);
    assert_eq!(t1.start_cell, m(1304));
    assert_eq!(t1.values, vec![(A, 0xA2)]);
    assert_eq!(t1.backlink, Link::Base(b2));
    assert_eq!(t1.base_rid, b2);

    // t2: the new value record
    let t2 = t(2);
    assert!(!t2.snapshot);
    assert_eq!(t2.enc_bits, 1 << A);
    assert_eq!(t2.start_time, Some(m(1921)));
    assert_eq!(t2.values, vec![(A, 0xA21)]);
    assert_eq!(t2.backlink, Link::Tail(rid(1)));

    // t3: later update of A, no new snapshot
    let t3 = t(3);
    assert!(!t3.snapshot);
    assert_eq!(t3.enc_bits, 1 << A);
    assert_eq!(t3.start_time, Some(m(1924)));
    assert_eq!(t3.values, vec![(A, 0xA22)]);
    assert_eq!(t3.backlink, Link::Tail(rid(2)));

    // t4: snapshot of the original C at b2's original time
    let t4 = t(4);
    assert!(t4.snapshot);
    assert_eq!(t4.enc_bits, 1 << C);
    assert_eq!(t4.start_cell, m(1304));
    assert_eq!(t4.values, vec![(C, 0xC2)]);
    assert_eq!(t4.backlink, Link::Tail(rid(3)));

    // t5: cumulative value record carrying A and C
    let t5 = t(5);
    assert!(!t5.snapshot);
    assert_eq!(t5.enc_bits, 1 << A | 1 << C);
    assert_eq!(t5.start_time, Some(m(1925)));
    assert_eq!(t5.values, vec![(A, 0xA22), (C, 0xC21)]);
    assert_eq!(t5.backlink, Link::Tail(rid(4)));

    // t6/t7: b3's C updated once
    let t6 = t(6);
    assert!(t6.snapshot);
    assert_eq!(t6.enc_bits, 1 << C);
    assert_eq!(t6.start_cell, m(1505));
    assert_eq!(t6.values, vec![(C, 0xC3)]);
    assert_eq!(t6.backlink, Link::Base(b3));
    let t7 = t(7);
    assert_eq!(t7.enc_bits, 1 << C);
    assert_eq!(t7.start_time, Some(m(1945)));
    assert_eq!(t7.values, vec![(C, 0xC31)]);
    assert_eq!(t7.backlink, Link::Tail(rid(6)));

    // t8: delete of b1 encodes the all-clear bitmap with no values
    let t8 = t(8);
    assert!(t8.delete);
    assert!(!t8.snapshot);
    assert_eq!(t8.enc_bits, 0);
    assert_eq!(t8.start_time, Some(m(2015)));
    assert_eq!(t8.values, vec![]);
    assert_eq!(t8.backlink, Link::Base(b1));

    // forward pointers
    assert_eq!(table.inspect_base_row(b1).unwrap().indirection, Link::Tail(rid(8)));
    assert_eq!(table.inspect_base_row(b2).unwrap().indirection, Link::Tail(rid(5)));
    assert_eq!(table.inspect_base_row(b3).unwrap().indirection, Link::Tail(rid(7)));

    // tail rids descend from the ceiling
    assert!(rid(1) > rid(2) && rid(2) > rid(3));

    // reads: latest b2 resolved from base + t5 only (two locations)
    let mut txn = engine.begin();
    let rec = table.select_latest(&mut txn, K2, 0b1111).unwrap().unwrap();
    assert_eq!(
        rec.values,
        vec![Some(K2), Some(0xA22), Some(0xB2), Some(0xC21)]
    );
    assert_eq!(txn.last_read_locations, 2);
    // deleted b1 is gone at the latest snapshot
    assert!(table.select_latest(&mut txn, K1, 0b1111).unwrap().is_none());
    // ... but visible before the delete
    let old = table.select_version(&txn, b1, m(2014), 0b1111).unwrap().unwrap();
    assert_eq!(old.values[A as usize], Some(0xA1));
    engine.commit(&mut txn).unwrap();
}

#[test]
fn time_travel_reads_across_the_history() {
    let engine = engine();
    let table = setup(&engine);
    let (_b1, b2, _b3) = apply_update_history(&engine, &table);

    let txn = engine.begin();
    // as of 14:00: the original row
    let v = table.select_version(&txn, b2, m(1400), 0b1111).unwrap().unwrap();
    assert_eq!(v.values, vec![Some(K2), Some(0xA2), Some(0xB2), Some(0xC2)]);
    assert_eq!(v.start_time, m(1304));
    // as of 19:30: a22 applied, c21 applied, b unchanged
    let v = table.select_version(&txn, b2, m(1930), 0b1111).unwrap().unwrap();
    assert_eq!(v.values, vec![Some(K2), Some(0xA22), Some(0xB2), Some(0xC21)]);
    assert_eq!(v.start_time, m(1925));
    // between the two A updates
    let v = table.select_version(&txn, b2, m(1922), 0b1111).unwrap().unwrap();
    assert_eq!(v.values, vec![Some(K2), Some(0xA21), Some(0xB2), Some(0xC2)]);
    // before insertion
    assert!(table.select_version(&txn, b2, m(1200), 0b1111).unwrap().is_none());
}

#[test]
fn merge_of_t1_to_t7_reproduces_consolidated_rows() {
    let engine = engine();
    let table = setup(&engine);
    let (b1, b2, b3) = apply_update_history(&engine, &table);

    // consolidate exactly the first seven tail records
    let batch = MergeBatch {
        range_id: 0,
        from_seq: 1,
        to_seq: 7,
        columns: None,
    };
    table.enqueue_merge(batch).unwrap();
    assert_eq!(table.published_tps(0), 7);

    // merged b1: untouched by the span, last-updated stays its start
    let r1 = table.inspect_base_row(b1).unwrap();
    assert_eq!(r1.enc_bits, 0);
    assert_eq!(r1.start_cell, m(1002));
    assert_eq!(r1.last_updated, Some(m(1002)));
    assert_eq!(
        r1.data,
        vec![Some(K1), Some(0xA1), Some(0xB1), Some(0xC1)]
    );
    assert!(!r1.deleted);

    // merged b2: a22 and c21 applied, encoding 0101, original start kept
    let r2 = table.inspect_base_row(b2).unwrap();
    assert_eq!(r2.enc_bits, 1 << A | 1 << C);
    assert_eq!(r2.start_cell, m(1304));
    assert_eq!(r2.last_updated, Some(m(1925)));
    assert_eq!(
        r2.data,
        vec![Some(K2), Some(0xA22), Some(0xB2), Some(0xC21)]
    );

    // merged b3: c31 applied
    let r3 = table.inspect_base_row(b3).unwrap();
    assert_eq!(r3.enc_bits, 1 << C);
    assert_eq!(r3.start_cell, m(1505));
    assert_eq!(r3.last_updated, Some(m(1945)));
    assert_eq!(
        r3.data,
        vec![Some(K3), Some(0xA3), Some(0xB3), Some(0xC31)]
    );

    // TPS watermark on the updated columns' pages
    assert_eq!(r2.column_tps[A as usize], 7);
    assert_eq!(r2.column_tps[C as usize], 7);
    // indirection untouched by the merge
    let rid = |seq: u64| table.tail_rid_of_seq(0, seq).unwrap();
    assert_eq!(r2.indirection, Link::Tail(rid(5)));
    assert_eq!(r3.indirection, Link::Tail(rid(7)));

    // a latest read of b2 now resolves entirely from the merged page
    let mut txn = engine.begin();
    let rec = table.select_latest(&mut txn, K2, 0b1111).unwrap().unwrap();
    assert_eq!(
        rec.values,
        vec![Some(K2), Some(0xA22), Some(0xB2), Some(0xC21)]
    );
    assert_eq!(txn.last_read_locations, 1);
    // b1's delete (t8) is outside the merged span: still found deleted via chain
    assert!(table.select_latest(&mut txn, K1, 0b1111).unwrap().is_none());
    // historical values unchanged by the merge (the snapshots carry them)
    let v = table.select_version(&txn, b2, m(1400), 0b1111).unwrap().unwrap();
    assert_eq!(v.values, vec![Some(K2), Some(0xA2), Some(0xB2), Some(0xC2)]);
    engine.commit(&mut txn).unwrap();
}

#[test]
fn merge_is_idempotent_bit_for_bit() {
    let engine = engine();
    let table = setup(&engine);
    apply_update_history(&engine, &table);
    let batch = MergeBatch {
        range_id: 0,
        from_seq: 1,
        to_seq: 7,
        columns: None,
    };
    let first = table.merge_images(&batch).unwrap();
    let second = table.merge_images(&batch).unwrap();
    assert!(!first.is_empty());
    assert_eq!(first, second);
}

/// The post-merge scenario: cumulation reset at the merge boundary, updates
/// t9..t12, and reads that must stitch tail records with merged pages.
#[test]
fn cumulation_reset_after_merge_requires_two_tail_reads() {
    let engine = engine();
    let table = setup(&engine);
    let (_b1, b2, b3) = apply_update_history(&engine, &table);
    table
        .enqueue_merge(MergeBatch {
            range_id: 0,
            from_seq: 1,
            to_seq: 7,
            columns: None,
        })
        .unwrap();

    // t9 snapshot of original B + t10 value (cumulation reset at TPS 7, so
    // t10 carries only B), then t11 on b3, then t12 carrying A+B
    committed_update(&engine, &table, m(2125), b2, &[(B, 0xB21)]); // t9 + t10
    committed_update(&engine, &table, m(2130), b3, &[(C, 0xC32)]); // t11
    committed_update(&engine, &table, m(2155), b2, &[(A, 0xA23)]); // t12

    let t9 = table.inspect_tail_record(0, 9).unwrap();
    assert!(t9.snapshot);
    assert_eq!(t9.values, vec![(B, 0xB2)]);
    assert_eq!(t9.start_cell, m(1304));
    let t10 = table.inspect_tail_record(0, 10).unwrap();
    assert_eq!(t10.enc_bits, 1 << B);
    assert_eq!(t10.values, vec![(B, 0xB21)]);
    let t11 = table.inspect_tail_record(0, 11).unwrap();
    assert_eq!(t11.enc_bits, 1 << C);
    assert_eq!(t11.values, vec![(C, 0xC32)]);
    // t12 cumulative since the reset: carries B but not C
    let t12 = table.inspect_tail_record(0, 12).unwrap();
    assert_eq!(t12.enc_bits, 1 << A | 1 << B);
    assert_eq!(t12.values, vec![(A, 0xA23), (B, 0xB21)]);

    // reading b2 from the TPS-7 pages: t12 + merged page suffices (2 hops)
    let mut txn = engine.begin();
    let rec = table.select_latest(&mut txn, K2, 0b1111).unwrap().unwrap();
    assert_eq!(
        rec.values,
        vec![Some(K2), Some(0xA23), Some(0xB21), Some(0xC21)]
    );
    assert_eq!(txn.last_read_locations, 2);
    engine.commit(&mut txn).unwrap();
}

#[test]
fn compression_reproduces_the_inlined_ordered_records() {
    let engine = engine();
    let table = setup(&engine);
    let (_b1, b2, b3) = apply_update_history(&engine, &table);
    table
        .enqueue_merge(MergeBatch {
            range_id: 0,
            from_seq: 1,
            to_seq: 7,
            columns: None,
        })
        .unwrap();

    let span = table.compress_historic(0).unwrap().expect("compression ran");
    assert_eq!(span, (1, 7));
    assert_eq!(table.compressed_upto(0), 7);

    let pages = table.historic_pages(0);
    assert_eq!(pages.len(), 1);
    let page = &pages[0];
    assert_eq!(page.records.len(), 2);

    // c1: b2 with union 0101, four inline versions
    let c1 = page.find(b2).unwrap();
    assert_eq!(c1.union_bits, 1 << A | 1 << C);
    assert_eq!(c1.times, vec![m(1304), m(1921), m(1924), m(1925)]);
    let a_stream: &Vec<VersionCell> = &c1.cols.iter().find(|(c, _)| *c == A).unwrap().1;
    assert_eq!(
        a_stream,
        &vec![
            VersionCell::Value(0xA2),
            VersionCell::Value(0xA21),
            VersionCell::Value(0xA22),
            VersionCell::Unchanged
        ]
    );
    let c_stream: &Vec<VersionCell> = &c1.cols.iter().find(|(c, _)| *c == C).unwrap().1;
    assert_eq!(
        c_stream,
        &vec![
            VersionCell::Value(0xC2),
            VersionCell::Unchanged,
            VersionCell::Unchanged,
            VersionCell::Value(0xC21)
        ]
    );

    // c2: b3 with union 0001, two versions
    let c2 = page.find(b3).unwrap();
    assert_eq!(c2.union_bits, 1 << C);
    assert_eq!(c2.times, vec![m(1505), m(1945)]);
    assert!(c2.cols.iter().all(|(c, _)| *c != A));

    // worked point lookups through the compressed form
    assert_eq!(c1.col_at(A, m(1924)), Some(0xA22));
    assert_eq!(c1.col_at(C, m(1925)), Some(0xC21));
    assert_eq!(c1.version_at(1303), None);

    // every pre-compression read answers identically post-compression
    let txn = engine.begin();
    let v = table.select_version(&txn, b2, m(1922), 0b1111).unwrap().unwrap();
    assert_eq!(v.values, vec![Some(K2), Some(0xA21), Some(0xB2), Some(0xC2)]);
    let v = table.select_version(&txn, b2, m(1400), 0b1111).unwrap().unwrap();
    assert_eq!(v.values, vec![Some(K2), Some(0xA2), Some(0xB2), Some(0xC2)]);
    let v = table.select_version(&txn, b3, m(1950), 0b1111).unwrap().unwrap();
    assert_eq!(v.values, vec![Some(K3), Some(0xA3), Some(0xB3), Some(0xC31)]);
}

/// Insert-range mechanics: aligned table-level tail rids, null indirection,
/// and regular updates layered on freshly inserted records.
#[test]
fn insert_with_concurrent_update_layout() {
    let engine = engine();
    let table = engine.create_table(4, KEY, None).unwrap();

    let (k7, k8, k9) = (0xF7u64, 0xF8, 0xF9);
    engine.clock().set_next(m(1830) - 1);
    let mut txn = engine.begin();
    let b7 = table.insert(&mut txn, &[k7, 0xA7, 0xB7, 0xC7]).unwrap();
    engine.commit(&mut txn).unwrap();
    engine.clock().set_next(m(1845) - 1);
    let mut txn = engine.begin();
    let b8 = table.insert(&mut txn, &[k8, 0xA8, 0xB8, 0xC8]).unwrap();
    engine.commit(&mut txn).unwrap();
    engine.clock().set_next(m(1905) - 1);
    let mut txn = engine.begin();
    let b9 = table.insert(&mut txn, &[k9, 0xA9, 0xB9, 0xC9]).unwrap();
    engine.commit(&mut txn).unwrap();

    assert_eq!((b7, b8, b9), (0, 1, 2));
    // base indirection starts null; rows live in table-level tail pages
    assert_eq!(table.inspect_base_row(b7).unwrap().indirection, Link::Null);

    // update C of b8 -> snapshot t1 (c8 at insert time) + value t2
    committed_update(&engine, &table, m(2225), b8, &[(C, 0xC81)]);
    let t1 = table.inspect_tail_record(0, 1).unwrap();
    assert!(t1.snapshot);
    assert_eq!(t1.values, vec![(C, 0xC8)]);
    assert_eq!(t1.start_cell, m(1845));
    assert_eq!(t1.backlink, Link::Base(b8));
    let t2 = table.inspect_tail_record(0, 2).unwrap();
    assert_eq!(t2.values, vec![(C, 0xC81)]);
    assert_eq!(t2.start_time, Some(m(2225)));
    let rid2 = table.tail_rid_of_seq(0, 2).unwrap();
    assert_eq!(table.inspect_base_row(b8).unwrap().indirection, Link::Tail(rid2));

    // reads resolve through the unmerged insert range
    let mut txn = engine.begin();
    let rec = table.select_latest(&mut txn, k8, 0b1111).unwrap().unwrap();
    assert_eq!(
        rec.values,
        vec![Some(k8), Some(0xA8), Some(0xB8), Some(0xC81)]
    );
    let rec = table.select_latest(&mut txn, k7, 0b1111).unwrap().unwrap();
    assert_eq!(rec.values, vec![Some(k7), Some(0xA7), Some(0xB7), Some(0xC7)]);
    engine.commit(&mut txn).unwrap();

    // consolidating the insert range leaves b8's regular chain untouched
    table.rotate_insert_range().unwrap();
    assert!(table.merge_insert_range(0).unwrap());
    let r8 = table.inspect_base_row(b8).unwrap();
    assert_eq!(r8.data[C as usize], Some(0xC8)); // base keeps the original
    assert_eq!(r8.indirection, Link::Tail(rid2));
    let mut txn = engine.begin();
    let rec = table.select_latest(&mut txn, k8, 0b1111).unwrap().unwrap();
    assert_eq!(rec.values[C as usize], Some(0xC81));
    // post-merge update flows through the regular path
    engine.commit(&mut txn).unwrap();
    committed_update(&engine, &table, m(2245), b9, &[(A, 0xA91)]);
    let mut txn = engine.begin();
    let rec = table.select_latest(&mut txn, k9, 0b1111).unwrap().unwrap();
    assert_eq!(rec.values[A as usize], Some(0xA91));
    engine.commit(&mut txn).unwrap();
}
