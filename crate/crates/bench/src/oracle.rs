//! Naive single-threaded multi-version oracle: the reference answer for
//! snapshot reads, scans, and final states. Committed transactions are
//! replayed in commit-time order; each key keeps its full version history.

use std::collections::BTreeMap;

/// One committed operation against a key.
#[derive(Clone, Debug)]
pub enum OracleOp {
    Insert(Vec<u64>),
    Update(Vec<(u32, u64)>),
    Delete,
}

/// A committed transaction: commit time plus its operations in statement
/// order.
#[derive(Clone, Debug)]
pub struct CommittedTxn {
    pub commit_time: u64,
    pub ops: Vec<(u64, OracleOp)>,
}

/// Ascending (time, row-or-tombstone) pairs.
type VersionHistory = Vec<(u64, Option<Vec<u64>>)>;

#[derive(Default)]
pub struct Oracle {
    versions: BTreeMap<u64, VersionHistory>,
}

impl Oracle {
    pub fn new() -> Oracle {
        Oracle::default()
    }

    /// Replay committed transactions; `txns` need not be sorted.
    pub fn replay(&mut self, mut txns: Vec<CommittedTxn>) {
        txns.sort_by_key(|t| t.commit_time);
        for t in txns {
            self.apply(&t);
        }
    }

    pub fn apply(&mut self, txn: &CommittedTxn) {
        for (key, op) in &txn.ops {
            let hist = self.versions.entry(*key).or_default();
            match op {
                OracleOp::Insert(values) => {
                    hist.push((txn.commit_time, Some(values.clone())));
                }
                OracleOp::Update(updates) => {
                    let mut row = hist
                        .last()
                        .and_then(|(_, r)| r.clone())
                        .expect("update of a live row");
                    for (c, v) in updates {
                        row[*c as usize] = *v;
                    }
                    hist.push((txn.commit_time, Some(row)));
                }
                OracleOp::Delete => hist.push((txn.commit_time, None)),
            }
        }
    }

    /// Row visible strictly before `begin` (snapshot semantics).
    pub fn row_at(&self, key: u64, begin: u64) -> Option<&Vec<u64>> {
        let hist = self.versions.get(&key)?;
        let idx = hist.partition_point(|(t, _)| *t < begin);
        if idx == 0 {
            return None;
        }
        hist[idx - 1].1.as_ref()
    }

    pub fn latest(&self, key: u64) -> Option<&Vec<u64>> {
        self.versions.get(&key).and_then(|h| h.last()?.1.as_ref())
    }

    /// SUM of `column` over keys < `key_limit` at the snapshot `begin`.
    pub fn sum_at(&self, column: u32, key_limit: u64, begin: u64) -> u128 {
        let mut sum = 0u128;
        for (key, _) in self.versions.range(0..key_limit) {
            if let Some(row) = self.row_at(*key, begin) {
                sum += row[column as usize] as u128;
            }
        }
        sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn versioned_rows() {
        let mut o = Oracle::new();
        o.replay(vec![
            CommittedTxn {
                commit_time: 10,
                ops: vec![(1, OracleOp::Insert(vec![1, 100]))],
            },
            CommittedTxn {
                commit_time: 20,
                ops: vec![(1, OracleOp::Update(vec![(1, 200)]))],
            },
            CommittedTxn {
                commit_time: 30,
                ops: vec![(1, OracleOp::Delete)],
            },
        ]);
        assert_eq!(o.row_at(1, 10), None);
        assert_eq!(o.row_at(1, 11), Some(&vec![1, 100]));
        assert_eq!(o.row_at(1, 25), Some(&vec![1, 200]));
        assert_eq!(o.row_at(1, 31), None);
        assert_eq!(o.latest(1), None);
        assert_eq!(o.sum_at(1, 10, 25), 200);
    }
}
