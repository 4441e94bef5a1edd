//! Ownership-relaying pageLSN maintenance.
//!
//! Writers hold a compatible shared latch on the page while appending and
//! logging; the writer holding the highest LSN of a burst becomes the page
//! owner, promotes its shared latch to an exclusive one, and updates the
//! pageLSN on behalf of everyone. A page is only ever flushed under the
//! exclusive latch, so a flushed image never contains a change newer than
//! its recorded pageLSN.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

const EXCLUSIVE: u32 = u32::MAX;

/// Per-page state for the ownership-relaying protocol.
#[derive(Debug)]
pub struct OrState {
    /// Highest LSN any writer of the current burst has claimed.
    pub owner_lsn: AtomicU64,
    /// Shared-holder count; `EXCLUSIVE` while one thread holds it exclusively.
    holders: AtomicU32,
    /// Shared grants since the last forced flush.
    grants: AtomicU32,
    /// Set while a forced drain-and-flush is in progress.
    draining: AtomicU32,
}

impl Default for OrState {
    fn default() -> Self {
        OrState {
            owner_lsn: AtomicU64::new(0),
            holders: AtomicU32::new(0),
            grants: AtomicU32::new(0),
            draining: AtomicU32::new(0),
        }
    }
}

impl OrState {
    /// Acquire a shared latch. `theta_s` of 0 disables the forced-flush gate
    /// (tail pages drain naturally when full and need no intervention).
    pub fn acquire_shared(&self, theta_s: u32) {
        loop {
            if theta_s != 0 {
                while self.draining.load(Ordering::Acquire) != 0 {
                    std::hint::spin_loop();
                }
            }
            let cur = self.holders.load(Ordering::Acquire);
            if cur == EXCLUSIVE {
                std::hint::spin_loop();
                continue;
            }
            if self
                .holders
                .compare_exchange_weak(cur, cur + 1, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                if theta_s != 0 {
                    self.grants.fetch_add(1, Ordering::AcqRel);
                }
                return;
            }
        }
    }

    pub fn release_shared(&self) {
        let prev = self.holders.fetch_sub(1, Ordering::AcqRel);
        debug_assert!(prev != 0 && prev != EXCLUSIVE);
    }

    /// Exclusive acquisition for flushers (not holding a shared latch).
    pub fn acquire_exclusive(&self) {
        loop {
            if self
                .holders
                .compare_exchange_weak(0, EXCLUSIVE, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                return;
            }
            std::hint::spin_loop();
        }
    }

    pub fn release_exclusive(&self) {
        let prev = self.holders.swap(0, Ordering::AcqRel);
        debug_assert_eq!(prev, EXCLUSIVE);
    }

    pub fn grants_since_flush(&self) -> u32 {
        self.grants.load(Ordering::Acquire)
    }

    pub fn reset_grants(&self) {
        self.grants.store(0, Ordering::Release);
    }

    /// Ownership resolution after a write. The caller holds a shared latch,
    /// has applied its change and appended its redo record with `writer_lsn`.
    /// Returns `true` if this writer ended up owning the page (and therefore
    /// published the pageLSN via `publish`). Either way the latch is released.
    pub fn record_write(&self, writer_lsn: u64, publish: impl FnOnce(u64)) -> bool {
        // claim ownership if we carry the highest LSN so far
        let mut claimed = false;
        let mut cur = self.owner_lsn.load(Ordering::Acquire);
        while writer_lsn > cur {
            match self.owner_lsn.compare_exchange_weak(
                cur,
                writer_lsn,
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => {
                    claimed = true;
                    break;
                }
                Err(actual) => cur = actual,
            }
        }
        if !claimed {
            self.release_shared();
            return false;
        }
        // conditional promotion: wait to be the sole holder, abandoning if a
        // higher-LSN writer relays ownership away from us
        loop {
            if self.owner_lsn.load(Ordering::Acquire) != writer_lsn {
                self.release_shared();
                return false;
            }
            if self
                .holders
                .compare_exchange_weak(1, EXCLUSIVE, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                break;
            }
            std::hint::spin_loop();
        }
        // still the owner after the drain?
        let own = self.owner_lsn.load(Ordering::Acquire);
        publish(own);
        self.release_exclusive();
        true
    }
}

impl OrState {
    /// Forced drain-and-flush once `theta_s` shared grants have accumulated:
    /// new writers are held off, current holders drain, `flush` runs under
    /// the exclusive latch, and the grant counter resets. Returns whether
    /// this call performed the flush. Callers must not hold the latch.
    pub fn try_force_drain(&self, theta_s: u32, flush: impl FnOnce()) -> bool {
        if theta_s == 0 || self.grants.load(Ordering::Acquire) < theta_s {
            return false;
        }
        if self
            .draining
            .compare_exchange(0, 1, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return false;
        }
        self.acquire_exclusive();
        flush();
        self.reset_grants();
        self.release_exclusive();
        self.draining.store(0, Ordering::Release);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn single_writer_owns() {
        let st = OrState::default();
        st.acquire_shared(0);
        let mut published = 0;
        assert!(st.record_write(7, |lsn| published = lsn));
        assert_eq!(published, 7);
        assert_eq!(st.holders.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn max_lsn_writer_publishes() {
        let st = Arc::new(OrState::default());
        let page_lsn = Arc::new(AtomicU64::new(0));
        let n = 64;
        let mut handles = Vec::new();
        for lsn in 1..=n {
            let st = Arc::clone(&st);
            let page_lsn = Arc::clone(&page_lsn);
            handles.push(std::thread::spawn(move || {
                st.acquire_shared(0);
                st.record_write(lsn, |l| {
                    page_lsn.fetch_max(l, Ordering::SeqCst);
                });
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(page_lsn.load(Ordering::SeqCst), n);
        assert_eq!(st.owner_lsn.load(Ordering::SeqCst), n);
        assert_eq!(st.holders.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn exclusive_waits_for_shared_drain() {
        let st = Arc::new(OrState::default());
        st.acquire_shared(0);
        let st2 = Arc::clone(&st);
        let h = std::thread::spawn(move || {
            st2.acquire_exclusive();
            st2.release_exclusive();
        });
        std::thread::sleep(std::time::Duration::from_millis(20));
        assert!(!h.is_finished());
        st.release_shared();
        h.join().unwrap();
    }
}
