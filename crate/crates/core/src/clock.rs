use std::sync::atomic::{AtomicU64, Ordering};

/// Process-wide logical clock. Timestamps and transaction ids are drawn from
/// the same monotone counter; time is advanced before it is returned, so no
/// two draws observe the same value.
///
/// `set_next` exists for deterministic replay (tests pin exact times, recovery
/// restores the clock past the largest persisted time).
#[derive(Debug)]
pub struct LogicalClock {
    counter: AtomicU64,
}

impl LogicalClock {
    pub fn new() -> Self {
        LogicalClock {
            counter: AtomicU64::new(0),
        }
    }

    /// Advance the clock and return the new value. Values start at 1.
    pub fn next(&self) -> u64 {
        self.counter.fetch_add(1, Ordering::SeqCst) + 1
    }

    /// Current value without advancing.
    pub fn now(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }

    /// Make the next `next()` call return exactly `v`. Only moves forward.
    pub fn set_next(&self, v: u64) {
        let target = v.saturating_sub(1);
        self.counter.fetch_max(target, Ordering::SeqCst);
    }
}

impl Default for LogicalClock {
    fn default() -> Self {
        Self::new()
    }
}
