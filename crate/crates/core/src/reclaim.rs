//! Epoch-based reclamation that only advances under memory pressure.
//!
//! Threads bracket every access to shared structures with [`Collector::enter`],
//! which announces the global epoch in the thread's slot. Unlinked memory is
//! [retired](Guard::retire) into one of three per-slot bags, tagged with the
//! global epoch at retire time, and may be freed once the global epoch is at
//! least two past that tag.
//!
//! Unlike general-purpose schemes, entering and leaving a critical section
//! never tries to advance the epoch. Advancing happens only inside
//! [`Collector::try_reclaim`], which the cache calls when an allocation does
//! not fit its budget. A cache with spare memory therefore never pays for
//! reclamation at all.

use std::cell::RefCell;
use std::ptr;
use std::sync::atomic::{fence, AtomicBool, AtomicPtr, AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use crate::poison::{self, Poison};

const ACTIVE: u64 = 1;
const BAGS: usize = 3;

/// Default number of thread slots.
pub const DEFAULT_SLOTS: usize = 128;

struct Retired {
    ptr: *mut u8,
    free: unsafe fn(*mut u8),
    bytes: u64,
    epoch: u64,
    next: *mut Retired,
}

#[repr(align(128))]
struct Slot {
    /// `epoch << 1 | ACTIVE`.
    state: AtomicU64,
    claimed: AtomicBool,
    bags: [AtomicPtr<Retired>; BAGS],
}

impl Slot {
    fn new() -> Self {
        Slot {
            state: AtomicU64::new(0),
            claimed: AtomicBool::new(false),
            bags: [const { AtomicPtr::new(ptr::null_mut()) }; BAGS],
        }
    }
}

struct Inner {
    id: u64,
    epoch: AtomicU64,
    slots: Box<[Slot]>,
    retired_bytes: AtomicU64,
    advances: AtomicU64,
}

unsafe impl Send for Inner {}
unsafe impl Sync for Inner {}

impl Inner {
    fn claim_slot(&self) -> Option<usize> {
        self.slots.iter().position(|s| {
            !s.claimed.load(Ordering::Relaxed)
                && s
                    .claimed
                    .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
                    .is_ok()
        })
    }

    fn release_slot(&self, slot: usize) {
        self.slots[slot].claimed.store(false, Ordering::Release);
    }
}

impl Drop for Inner {
    fn drop(&mut self) {
        for slot in self.slots.iter() {
            for bag in &slot.bags {
                let mut cur = bag.swap(ptr::null_mut(), Ordering::Acquire);
                while !cur.is_null() {
                    let r = unsafe { Box::from_raw(cur) };
                    cur = r.next;
                    unsafe { (r.free)(r.ptr) };
                }
            }
        }
    }
}

struct Registration {
    id: u64,
    inner: Weak<Inner>,
    slot: usize,
}

#[derive(Default)]
struct Registry {
    entries: RefCell<Vec<Registration>>,
}

impl Drop for Registry {
    fn drop(&mut self) {
        for r in self.entries.get_mut().drain(..) {
            if let Some(inner) = r.inner.upgrade() {
                inner.release_slot(r.slot);
            }
        }
    }
}

thread_local! {
    static REGISTRY: Registry = Registry::default();
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

unsafe fn free_erased<T: Poison>(p: *mut u8) {
    poison::release(p as *mut T);
}

/// Shared epoch state plus a fixed table of thread slots.
#[derive(Clone)]
pub struct Collector {
    inner: Arc<Inner>,
}

impl Default for Collector {
    fn default() -> Self {
        Self::new(DEFAULT_SLOTS)
    }
}

impl std::fmt::Debug for Collector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Collector")
            .field("epoch", &self.epoch())
            .field("retired_bytes", &self.retired_bytes())
            .field("advances", &self.advances())
            .finish()
    }
}

impl Collector {
    pub fn new(slots: usize) -> Self {
        assert!(slots > 0, "collector needs at least one thread slot");
        Collector {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                epoch: AtomicU64::new(0),
                slots: (0..slots).map(|_| Slot::new()).collect(),
                retired_bytes: AtomicU64::new(0),
                advances: AtomicU64::new(0),
            }),
        }
    }

    /// Current global epoch.
    pub fn epoch(&self) -> u64 {
        self.inner.epoch.load(Ordering::SeqCst)
    }

    /// Bytes retired but not yet freed.
    pub fn retired_bytes(&self) -> u64 {
        self.inner.retired_bytes.load(Ordering::Relaxed)
    }

    /// Successful global epoch advances so far.
    pub fn advances(&self) -> u64 {
        self.inner.advances.load(Ordering::Relaxed)
    }

    pub fn slot_count(&self) -> usize {
        self.inner.slots.len()
    }

    /// The calling thread's slot, claiming one on first use.
    ///
    /// # Panics
    /// If every slot is held by a live thread.
    pub fn local_slot(&self) -> usize {
        let id = self.inner.id;
        REGISTRY.with(|reg| {
            let mut entries = reg.entries.borrow_mut();
            if let Some(r) = entries.iter().find(|r| r.id == id) {
                return r.slot;
            }
            entries.retain(|r| r.inner.strong_count() > 0);
            let slot = self
                .inner
                .claim_slot()
                .expect("all reclamation thread slots are in use");
            entries.push(Registration {
                id,
                inner: Arc::downgrade(&self.inner),
                slot,
            });
            slot
        })
    }

    /// `(slot, epoch)` for every thread currently inside a critical section.
    pub fn active_slots(&self) -> Vec<(usize, u64)> {
        self.inner
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                let st = s.state.load(Ordering::SeqCst);
                (st & ACTIVE != 0).then_some((i, st >> 1))
            })
            .collect()
    }

    /// Announced epoch of the calling thread, if it is inside a critical section.
    pub fn announced(&self) -> Option<u64> {
        let s = self.inner.slots[self.local_slot()]
            .state
            .load(Ordering::SeqCst);
        (s & ACTIVE != 0).then_some(s >> 1)
    }

    /// Enters a critical section. Leaving happens when the guard drops.
    ///
    /// Critical sections must not nest on one thread; debug builds panic.
    pub fn enter(&self) -> Guard<'_> {
        let slot = self.local_slot();
        let state = &self.inner.slots[slot].state;
        debug_assert!(
            state.load(Ordering::Relaxed) & ACTIVE == 0,
            "nested reclamation critical section"
        );
        loop {
            let e = self.inner.epoch.load(Ordering::SeqCst);
            state.store((e << 1) | ACTIVE, Ordering::SeqCst);
            fence(Ordering::SeqCst);
            if self.inner.epoch.load(Ordering::SeqCst) == e {
                return Guard {
                    collector: self,
                    slot,
                    epoch: e,
                };
            }
        }
    }

    /// Advances the global epoch by one if every active thread has announced
    /// the current epoch. Returns whether the epoch moved, by us or a racer.
    fn try_advance(&self) -> bool {
        let e = self.inner.epoch.load(Ordering::SeqCst);
        fence(Ordering::SeqCst);
        for slot in self.inner.slots.iter() {
            let s = slot.state.load(Ordering::SeqCst);
            if s & ACTIVE != 0 && s >> 1 != e {
                return false;
            }
        }
        match self
            .inner
            .epoch
            .compare_exchange(e, e + 1, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(_) => {
                self.inner.advances.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(_) => true,
        }
    }

    /// Frees every retired entry whose tag is at least two epochs old.
    fn free_safe(&self) -> u64 {
        let global = self.epoch();
        if global < 2 {
            return 0;
        }
        let mut freed = 0;
        for slot in self.inner.slots.iter() {
            for bag in &slot.bags {
                if bag.load(Ordering::Relaxed).is_null() {
                    continue;
                }
                let mut cur = bag.swap(ptr::null_mut(), Ordering::AcqRel);
                let mut keep_head: *mut Retired = ptr::null_mut();
                let mut keep_tail: *mut Retired = ptr::null_mut();
                while !cur.is_null() {
                    let next = unsafe { (*cur).next };
                    if unsafe { (*cur).epoch } + 2 <= global {
                        let r = unsafe { Box::from_raw(cur) };
                        freed += r.bytes;
                        unsafe { (r.free)(r.ptr) };
                    } else {
                        unsafe { (*cur).next = keep_head };
                        if keep_tail.is_null() {
                            keep_tail = cur;
                        }
                        keep_head = cur;
                    }
                    cur = next;
                }
                if !keep_head.is_null() {
                    push_chain(bag, keep_head, keep_tail);
                }
            }
        }
        if freed > 0 {
            self.inner.retired_bytes.fetch_sub(freed, Ordering::Relaxed);
        }
        freed
    }

    /// Frees retired memory, advancing the epoch at most twice when already
    /// safe memory does not reach `target_bytes`. Returns the bytes freed.
    ///
    /// Safe to call inside the caller's own critical section: it never frees
    /// anything younger than the oldest active announcement allows.
    pub fn try_reclaim(&self, target_bytes: u64) -> u64 {
        if self.retired_bytes() == 0 {
            return 0;
        }
        let mut freed = self.free_safe();
        let mut advanced = 0;
        while freed < target_bytes && advanced < 2 {
            if !self.try_advance() {
                break;
            }
            advanced += 1;
            freed += self.free_safe();
        }
        freed
    }
}

fn push_chain(bag: &AtomicPtr<Retired>, head: *mut Retired, tail: *mut Retired) {
    let mut cur = bag.load(Ordering::Relaxed);
    loop {
        unsafe { (*tail).next = cur };
        match bag.compare_exchange_weak(cur, head, Ordering::Release, Ordering::Relaxed) {
            Ok(_) => return,
            Err(actual) => cur = actual,
        }
    }
}

/// An active critical section.
pub struct Guard<'c> {
    collector: &'c Collector,
    slot: usize,
    epoch: u64,
}

impl Guard<'_> {
    /// Epoch announced when the section was entered.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn collector(&self) -> &Collector {
        self.collector
    }

    /// Hands a boxed object to the collector. `bytes` is added to the
    /// collector's retired-bytes counter until the object is freed.
    ///
    /// # Safety
    /// `ptr` must come from `Box::into_raw`, must already be unreachable for
    /// critical sections that start after this call, and must not be retired
    /// twice.
    pub unsafe fn retire<T: Poison>(&self, ptr: *mut T, bytes: u64) {
        let inner = &self.collector.inner;
        let epoch = inner.epoch.load(Ordering::SeqCst);
        let r = Box::into_raw(Box::new(Retired {
            ptr: ptr as *mut u8,
            free: free_erased::<T>,
            bytes,
            epoch,
            next: ptr::null_mut(),
        }));
        inner.retired_bytes.fetch_add(bytes, Ordering::Relaxed);
        let bag = &inner.slots[self.slot].bags[(epoch % BAGS as u64) as usize];
        push_chain(bag, r, r);
    }
}

impl Drop for Guard<'_> {
    fn drop(&mut self) {
        self.collector.inner.slots[self.slot]
            .state
            .store(self.epoch << 1, Ordering::Release);
    }
}
