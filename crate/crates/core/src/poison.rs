//! Debug poisoning of reclaimed memory.
//!
//! When enabled (debug builds, or the `poison` feature), memory released by
//! the collector is not returned to the allocator straight away. Its header
//! word is overwritten with [`DEAD`] and the allocation is parked in a
//! fixed-size quarantine ring; it is only really freed once enough newer
//! allocations have pushed it out. Every traversal checks the header of the
//! nodes and items it touches, so a premature free shows up as a canary read
//! instead of silent corruption.

use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicU64, AtomicUsize, Ordering};

/// Header value of a live allocation.
pub const LIVE: u64 = 0x11FE_C0DE_A11C_0001;
/// Header value written over reclaimed allocations.
pub const DEAD: u64 = 0xDEAD_BEEF_DEAD_BEEF;

const QUARANTINE_LEN: usize = 1 << 16;

static CANARY_READS: AtomicU64 = AtomicU64::new(0);

/// Whether reclaimed memory is poisoned and quarantined.
#[inline]
pub const fn enabled() -> bool {
    cfg!(any(debug_assertions, feature = "poison"))
}

/// Number of times a traversal observed a poisoned header.
pub fn canary_reads() -> u64 {
    CANARY_READS.load(Ordering::Relaxed)
}

#[inline]
pub(crate) fn check(magic: &AtomicU64) {
    if enabled() && magic.load(Ordering::Relaxed) == DEAD {
        CANARY_READS.fetch_add(1, Ordering::Relaxed);
    }
}

/// A heap object that carries a poisonable header word.
pub trait Poison {
    fn header(&self) -> Option<&AtomicU64> {
        None
    }
}

struct Parked {
    ptr: *mut u8,
    drop_fn: unsafe fn(*mut u8),
}

static RING: [AtomicPtr<Parked>; QUARANTINE_LEN] =
    [const { AtomicPtr::new(ptr::null_mut()) }; QUARANTINE_LEN];
static RING_HEAD: AtomicUsize = AtomicUsize::new(0);

unsafe fn drop_box<T>(p: *mut u8) {
    drop(Box::from_raw(p as *mut T));
}

/// Releases a boxed allocation, through the quarantine when poisoning is on.
///
/// # Safety
/// `p` must come from `Box::into_raw` and be unreachable by any thread that
/// could still dereference it outside a poisoned-header check.
pub(crate) unsafe fn release<T: Poison>(p: *mut T) {
    if !enabled() {
        drop(Box::from_raw(p));
        return;
    }
    if let Some(h) = (*p).header() {
        h.store(DEAD, Ordering::Relaxed);
    }
    let parked = Box::into_raw(Box::new(Parked {
        ptr: p as *mut u8,
        drop_fn: drop_box::<T>,
    }));
    let slot = RING_HEAD.fetch_add(1, Ordering::Relaxed) % QUARANTINE_LEN;
    let evicted = RING[slot].swap(parked, Ordering::AcqRel);
    if !evicted.is_null() {
        let evicted = Box::from_raw(evicted);
        (evicted.drop_fn)(evicted.ptr);
    }
}
