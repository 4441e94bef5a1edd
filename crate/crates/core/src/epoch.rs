//! Epoch-based reclamation. Displaced pages (and deferred index removals)
//! wait in a queue stamped with their retire time; they are freed only once
//! every query that began before that time has finished, so freeing never
//! blocks queries and queries never observe freed pages.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::metrics::Metrics;
use crate::page::Page;

pub enum Retired {
    Pages(Vec<Arc<Page>>),
    /// Deferred action (index entry removal) run at reclamation time.
    Action(Box<dyn FnOnce() + Send>),
}

struct QueueItem {
    retire_time: u64,
    item: Retired,
}

const SLOTS: usize = 128;

pub struct EpochRegistry {
    /// Active query begin times: a lock-free slot array with a locked
    /// overflow map for bursts beyond `SLOTS` concurrent queries.
    slots: Box<[crossbeam_utils::CachePadded<std::sync::atomic::AtomicU64>]>,
    overflow: Mutex<BTreeMap<u64, u32>>,
    queue: Mutex<VecDeque<QueueItem>>,
    queue_len: std::sync::atomic::AtomicUsize,
    next_slot: std::sync::atomic::AtomicUsize,
    metrics: Arc<Metrics>,
}

impl EpochRegistry {
    pub fn new(metrics: Arc<Metrics>) -> Self {
        EpochRegistry {
            slots: (0..SLOTS)
                .map(|_| crossbeam_utils::CachePadded::new(std::sync::atomic::AtomicU64::new(0)))
                .collect(),
            overflow: Mutex::new(BTreeMap::new()),
            queue: Mutex::new(VecDeque::new()),
            queue_len: std::sync::atomic::AtomicUsize::new(0),
            next_slot: std::sync::atomic::AtomicUsize::new(0),
            metrics,
        }
    }

    /// Register a query/transaction with its begin time. Dropping the guard
    /// deregisters and advances the epoch.
    pub fn register(self: &Arc<Self>, begin: u64) -> QueryGuard {
        let start = self.next_slot.fetch_add(1, Ordering::Relaxed) % SLOTS;
        for k in 0..SLOTS {
            let i = (start + k) % SLOTS;
            if self.slots[i]
                .compare_exchange(0, begin, Ordering::AcqRel, Ordering::Relaxed)
                .is_ok()
            {
                return QueryGuard {
                    registry: Arc::clone(self),
                    begin,
                    slot: Some(i),
                };
            }
        }
        *self.overflow.lock().entry(begin).or_insert(0) += 1;
        QueryGuard {
            registry: Arc::clone(self),
            begin,
            slot: None,
        }
    }

    /// Minimum begin time over active queries; `u64::MAX` when idle.
    pub fn floor(&self) -> u64 {
        let mut min = u64::MAX;
        for s in self.slots.iter() {
            let v = s.load(Ordering::Acquire);
            if v != 0 && v < min {
                min = v;
            }
        }
        if let Some((&k, _)) = self.overflow.lock().iter().next() {
            min = min.min(k);
        }
        min
    }

    pub fn retire_pages(&self, retire_time: u64, pages: Vec<Arc<Page>>) {
        if pages.is_empty() {
            return;
        }
        self.metrics
            .dealloc_enqueued
            .fetch_add(pages.len() as u64, Ordering::Relaxed);
        self.queue.lock().push_back(QueueItem {
            retire_time,
            item: Retired::Pages(pages),
        });
        self.queue_len.fetch_add(1, Ordering::Release);
    }

    pub fn retire_action(&self, retire_time: u64, action: Box<dyn FnOnce() + Send>) {
        self.queue.lock().push_back(QueueItem {
            retire_time,
            item: Retired::Action(action),
        });
        self.queue_len.fetch_add(1, Ordering::Release);
    }

    /// Free every queued item whose retire time precedes the epoch floor.
    /// Returns the number of items reclaimed.
    pub fn drain(&self) -> usize {
        if self.queue_len.load(Ordering::Acquire) == 0 {
            return 0;
        }
        let floor = self.floor();
        let mut ready = Vec::new();
        {
            let mut q = self.queue.lock();
            while let Some(front) = q.front() {
                if front.retire_time < floor {
                    ready.push(q.pop_front().unwrap());
                } else {
                    break;
                }
            }
            self.queue_len.store(q.len(), Ordering::Release);
        }
        let n = ready.len();
        for qi in ready {
            match qi.item {
                Retired::Pages(pages) => {
                    self.metrics
                        .dealloc_freed
                        .fetch_add(pages.len() as u64, Ordering::Relaxed);
                    for p in pages {
                        p.poison();
                    }
                }
                Retired::Action(f) => f(),
            }
        }
        n
    }

    pub fn backlog(&self) -> usize {
        self.queue_len.load(Ordering::Acquire)
    }

    fn deregister(&self, begin: u64, slot: Option<usize>) {
        match slot {
            Some(i) => {
                self.slots[i].store(0, Ordering::Release);
            }
            None => {
                let mut active = self.overflow.lock();
                if let Some(cnt) = active.get_mut(&begin) {
                    *cnt -= 1;
                    if *cnt == 0 {
                        active.remove(&begin);
                    }
                }
            }
        }
    }
}

/// RAII registration of an active query.
pub struct QueryGuard {
    registry: Arc<EpochRegistry>,
    begin: u64,
    slot: Option<usize>,
}

impl QueryGuard {
    pub fn begin(&self) -> u64 {
        self.begin
    }
}

impl Drop for QueryGuard {
    fn drop(&mut self) {
        self.registry.deregister(self.begin, self.slot);
        self.registry.drain();
    }
}
