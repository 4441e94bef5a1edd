//! Table-embedded indirection cells.
//!
//! One 64-bit cell per record: bit 63 is a latch bit reserved for
//! write-write conflict detection, the low 63 bits encode the link. A link
//! is either null, a base rid, or a tail rid. Tail rids live at the top of
//! the 64-bit rid space and therefore cannot be stored verbatim in 63 bits;
//! they are stored as their distance from the rid ceiling instead, which
//! caps the usable tail depth at 2^62 - 1 rids.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::rid::{is_tail_rid, Rid};

const LATCH_BIT: u64 = 1 << 63;
const PAYLOAD_MASK: u64 = LATCH_BIT - 1;
const TAIL_TAG: u64 = 1 << 62;
const NULL_PAYLOAD: u64 = PAYLOAD_MASK;

/// Highest tail-rid distance from the ceiling that still encodes.
pub const MAX_TAIL_DEPTH: u64 = TAIL_TAG - 2;
/// Base rids must stay below this to encode in a link.
pub const MAX_BASE_LINK: u64 = TAIL_TAG;

/// Decoded state of an indirection cell.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Link {
    Null,
    Base(Rid),
    Tail(Rid),
}

impl Link {
    pub fn of(rid: Rid) -> Link {
        if is_tail_rid(rid) {
            Link::Tail(rid)
        } else {
            Link::Base(rid)
        }
    }

    pub fn as_tail(self) -> Option<Rid> {
        match self {
            Link::Tail(r) => Some(r),
            _ => None,
        }
    }
}

pub fn encode(link: Link) -> u64 {
    match link {
        Link::Null => NULL_PAYLOAD,
        Link::Base(r) => {
            assert!(r < MAX_BASE_LINK, "base rid too large to link");
            r
        }
        Link::Tail(r) => {
            let depth = u64::MAX - r;
            assert!(depth <= MAX_TAIL_DEPTH, "tail rid too deep to link");
            TAIL_TAG + depth
        }
    }
}

pub fn decode(cell: u64) -> Link {
    let payload = cell & PAYLOAD_MASK;
    if payload == NULL_PAYLOAD {
        Link::Null
    } else if payload < TAIL_TAG {
        Link::Base(payload)
    } else {
        Link::Tail(u64::MAX - (payload - TAIL_TAG))
    }
}

#[inline]
pub fn is_latched(cell: u64) -> bool {
    cell & LATCH_BIT != 0
}

/// Atomic operations over an indirection cell stored in a page slot.
pub struct IndirectionCell<'a>(pub &'a AtomicU64);

impl<'a> IndirectionCell<'a> {
    /// Current link, ignoring the latch bit.
    pub fn load(&self) -> Link {
        decode(self.0.load(Ordering::Acquire))
    }

    /// Set the latch bit. Fails (returning `None`) if it is already set —
    /// the caller must treat that as a write-write conflict. On success
    /// returns the link observed under the latch.
    pub fn try_latch(&self) -> Option<Link> {
        let cur = self.0.load(Ordering::Acquire);
        if is_latched(cur) {
            return None;
        }
        match self
            .0
            .compare_exchange(cur, cur | LATCH_BIT, Ordering::AcqRel, Ordering::Acquire)
        {
            Ok(_) => Some(decode(cur)),
            Err(_) => None,
        }
    }

    /// Clear the latch bit without changing the link.
    pub fn unlatch(&self) {
        self.0.fetch_and(!LATCH_BIT, Ordering::AcqRel);
    }

    /// Publish a new link and clear the latch in one store. Caller must hold
    /// the latch.
    pub fn publish_and_unlatch(&self, link: Link) {
        debug_assert!(is_latched(self.0.load(Ordering::Relaxed)));
        self.0.store(encode(link), Ordering::Release);
    }

    /// Roll the link back from `expect` to `prev` if and only if it still
    /// reads `expect` unlatched. Used on abort; a failure means a later
    /// writer already replaced the link and nothing must be done.
    pub fn rollback(&self, expect: Link, prev: Link) -> bool {
        self.0
            .compare_exchange(
                encode(expect),
                encode(prev),
                Ordering::AcqRel,
                Ordering::Acquire,
            )
            .is_ok()
    }
}
