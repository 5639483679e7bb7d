//! Sorted non-blocking singly linked list used as a hash bucket.
//!
//! This is Harris's list: a node is deleted by setting a mark bit in its own
//! `next` word, after which any traversal may unlink it with a single
//! compare-and-swap on the predecessor. Keys are ordered by `(hash, bytes)`.
//!
//! Values live behind a separate, swappable `item` word so that a `set` on an
//! existing key is one compare-and-swap and keeps the node in place. Removal
//! is therefore two-phase: the item word is tagged [`DELETED`] (the logical
//! delete) and then the `next` word is marked so the node can be unlinked.
//! Any thread that meets a node in the in-between state helps mark it.
//!
//! A list can be detached for table migration. Detaching sets [`FROZEN`] on
//! the head and on every `next` word of the chain, so no later insert or
//! unlink can succeed there, and operations that see a frozen word report
//! [`Moved`] so the caller can retry against the new table.

use std::cmp::Ordering as KeyOrder;
use std::fmt;
use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use crate::poison::{self, Poison};

/// Tag on a `next` word: the owning node is logically deleted.
pub const MARK: usize = 0b01;
/// Tag on an `item` word: the value was removed.
pub const DELETED: usize = 0b01;
/// Tag on `next`, `item` and head words: the list was detached for migration.
pub const FROZEN: usize = 0b10;
const TAGS: usize = 0b11;

/// The atomic machine word the list is built from.
///
/// Implemented for [`AtomicUsize`], and for loom's atomics with the `loom`
/// feature so the list can be model checked.
pub trait AtomicWord: Send + Sync {
    fn new(v: usize) -> Self;
    fn load(&self, order: Ordering) -> usize;
    fn store(&self, v: usize, order: Ordering);
    fn compare_exchange(
        &self,
        current: usize,
        new: usize,
        success: Ordering,
        failure: Ordering,
    ) -> Result<usize, usize>;
    fn fetch_or(&self, v: usize, order: Ordering) -> usize;
}

macro_rules! impl_atomic_word {
    ($t:ty) => {
        impl AtomicWord for $t {
            #[inline]
            fn new(v: usize) -> Self {
                <$t>::new(v)
            }
            #[inline]
            fn load(&self, order: Ordering) -> usize {
                <$t>::load(self, order)
            }
            #[inline]
            fn store(&self, v: usize, order: Ordering) {
                <$t>::store(self, v, order)
            }
            #[inline]
            fn compare_exchange(
                &self,
                current: usize,
                new: usize,
                success: Ordering,
                failure: Ordering,
            ) -> Result<usize, usize> {
                <$t>::compare_exchange(self, current, new, success, failure)
            }
            #[inline]
            fn fetch_or(&self, v: usize, order: Ordering) -> usize {
                <$t>::fetch_or(self, v, order)
            }
        }
    };
}

impl_atomic_word!(AtomicUsize);
#[cfg(feature = "loom")]
impl_atomic_word!(loom::sync::atomic::AtomicUsize);

/// The list was detached by a table migration; retry through the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Moved;

impl fmt::Display for Moved {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("bucket moved")
    }
}

/// Outcome of [`List::insert`].
#[derive(Debug, PartialEq, Eq)]
pub enum Insert<V> {
    Inserted,
    /// The key existed; its previous item is returned for retirement.
    Replaced(*mut V),
}

/// Receives nodes that a list operation physically unlinked.
pub trait Retire<V, W: AtomicWord> {
    /// # Safety
    /// `node` is unreachable for new traversals and is passed exactly once.
    unsafe fn retire_node(&self, node: *mut Node<V, W>);
}

/// A list element.
pub struct Node<V, W: AtomicWord = AtomicUsize> {
    magic: AtomicU64,
    hash: u64,
    key: Box<[u8]>,
    item: W,
    next: W,
    _item: PhantomData<*mut V>,
}

unsafe impl<V: Send + Sync, W: AtomicWord> Send for Node<V, W> {}
unsafe impl<V: Send + Sync, W: AtomicWord> Sync for Node<V, W> {}

impl<V, W: AtomicWord> Poison for Node<V, W> {
    fn header(&self) -> Option<&AtomicU64> {
        Some(&self.magic)
    }
}

impl<V, W: AtomicWord> Node<V, W> {
    fn new(hash: u64, key: &[u8], item: *mut V) -> Self {
        const { assert!(std::mem::align_of::<V>() > TAGS) };
        Node {
            magic: AtomicU64::new(poison::LIVE),
            hash,
            key: key.into(),
            item: W::new(item as usize),
            next: W::new(0),
            _item: PhantomData,
        }
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn key(&self) -> &[u8] {
        &self.key
    }

    /// Current item word including tag bits.
    pub fn item_word(&self) -> usize {
        self.item.load(Ordering::Acquire)
    }

    /// Current next word including tag bits.
    pub fn next_word(&self) -> usize {
        self.next.load(Ordering::Acquire)
    }

    #[inline]
    fn cmp_key(&self, hash: u64, key: &[u8]) -> KeyOrder {
        self.hash
            .cmp(&hash)
            .then_with(|| self.key[..].cmp(key))
    }

    /// Freezes the item word for migration. Returns the item unless it was
    /// already removed, in which case the remover owns it.
    pub fn freeze_item(&self) -> Option<*mut V> {
        loop {
            let it = self.item.load(Ordering::Acquire);
            if it & DELETED != 0 {
                return None;
            }
            debug_assert_eq!(it & FROZEN, 0, "item frozen twice");
            if self
                .item
                .compare_exchange(it, it | FROZEN, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                return Some((it & !TAGS) as *mut V);
            }
        }
    }
}

#[inline]
unsafe fn node<'a, V, W: AtomicWord>(p: usize) -> &'a Node<V, W> {
    let n = &*(p as *const Node<V, W>);
    poison::check(&n.magic);
    n
}

/// A chain detached from a list by [`List::detach`].
pub struct Detached<V, W: AtomicWord = AtomicUsize> {
    first: usize,
    _item: PhantomData<*mut V>,
    _word: PhantomData<W>,
}

impl<V, W: AtomicWord> Detached<V, W> {
    /// Raw pointers of every node in the chain, in list order.
    pub fn nodes(&self) -> Vec<*mut Node<V, W>> {
        let mut out = Vec::new();
        let mut p = self.first;
        while p != 0 {
            out.push(p as *mut Node<V, W>);
            p = unsafe { node::<V, W>(p) }.next.load(Ordering::Acquire) & !TAGS;
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.first == 0
    }
}

/// A sorted lock-free list; the head word doubles as the head sentinel and a
/// null pointer plays the tail sentinel.
pub struct List<V, W: AtomicWord = AtomicUsize> {
    head: W,
    _item: PhantomData<*mut V>,
}

unsafe impl<V: Send + Sync, W: AtomicWord> Send for List<V, W> {}
unsafe impl<V: Send + Sync, W: AtomicWord> Sync for List<V, W> {}

impl<V, W: AtomicWord> Default for List<V, W> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V, W: AtomicWord> List<V, W> {
    pub fn new() -> Self {
        List {
            head: W::new(0),
            _item: PhantomData,
        }
    }

    /// Whether the list was detached by a migration.
    pub fn is_moved(&self) -> bool {
        self.head.load(Ordering::Acquire) & FROZEN != 0
    }

    /// Harris search: returns the link word of the last unmarked node below
    /// the key and the first unmarked node at or above it (0 for the tail),
    /// unlinking any marked nodes found between them.
    fn search<G: Retire<V, W>>(
        &self,
        hash: u64,
        key: &[u8],
        guard: &G,
    ) -> Result<(&W, usize), Moved> {
        'retry: loop {
            let head = self.head.load(Ordering::Acquire);
            if head & FROZEN != 0 {
                return Err(Moved);
            }
            let mut left_link: &W = &self.head;
            let mut left_next = head;
            let mut t_next = head;
            let right = loop {
                let t = t_next & !TAGS;
                if t == 0 {
                    break 0;
                }
                let n = unsafe { node::<V, W>(t) };
                t_next = n.next.load(Ordering::Acquire);
                if t_next & FROZEN != 0 {
                    return Err(Moved);
                }
                if t_next & MARK == 0 {
                    if n.cmp_key(hash, key) != KeyOrder::Less {
                        break t;
                    }
                    left_link = &n.next;
                    left_next = t_next;
                }
            };

            if left_next != right {
                if left_link
                    .compare_exchange(left_next, right, Ordering::AcqRel, Ordering::Acquire)
                    .is_err()
                {
                    continue 'retry;
                }
                let mut p = left_next;
                while p != right {
                    let next = unsafe { node::<V, W>(p) }.next.load(Ordering::Acquire) & !TAGS;
                    unsafe { guard.retire_node(p as *mut Node<V, W>) };
                    p = next;
                }
            }
            if right != 0 && unsafe { node::<V, W>(right) }.next.load(Ordering::Acquire) & MARK != 0
            {
                continue 'retry;
            }
            return Ok((left_link, right));
        }
    }

    /// Test hook exposing [`search`](Self::search) as `(left node, right node)`
    /// raw pointers; a left of 0 means the head sentinel.
    #[doc(hidden)]
    pub fn search_nodes<G: Retire<V, W>>(
        &self,
        hash: u64,
        key: &[u8],
        guard: &G,
    ) -> Result<(usize, usize), Moved> {
        let (left, right) = self.search(hash, key, guard)?;
        let left = if std::ptr::eq(left, &self.head) {
            0
        } else {
            (left as *const W as usize) - std::mem::offset_of!(Node<V, W>, next)
        };
        Ok((left, right))
    }

    /// Inserts `item` under the key, or swaps it into the existing node.
    ///
    /// On success the list owns `item`. On [`Moved`] ownership stays with the
    /// caller.
    pub fn insert<G: Retire<V, W>>(
        &self,
        hash: u64,
        key: &[u8],
        item: *mut V,
        guard: &G,
    ) -> Result<Insert<V>, Moved> {
        debug_assert_eq!(item as usize & TAGS, 0);
        let mut fresh: *mut Node<V, W> = std::ptr::null_mut();
        let out = loop {
            let (left, right) = match self.search(hash, key, guard) {
                Ok(lr) => lr,
                Err(m) => break Err(m),
            };
            if right != 0 {
                let n = unsafe { node::<V, W>(right) };
                if n.cmp_key(hash, key) == KeyOrder::Equal {
                    let it = n.item.load(Ordering::Acquire);
                    if it & FROZEN != 0 {
                        break Err(Moved);
                    }
                    if it & DELETED != 0 {
                        n.next.fetch_or(MARK, Ordering::AcqRel);
                        continue;
                    }
                    if n
                        .item
                        .compare_exchange(it, item as usize, Ordering::AcqRel, Ordering::Acquire)
                        .is_ok()
                    {
                        break Ok(Insert::Replaced(it as *mut V));
                    }
                    continue;
                }
            }
            if fresh.is_null() {
                fresh = Box::into_raw(Box::new(Node::new(hash, key, item)));
            }
            unsafe { &*fresh }.next.store(right, Ordering::Relaxed);
            if left
                .compare_exchange(right, fresh as usize, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                fresh = std::ptr::null_mut();
                break Ok(Insert::Inserted);
            }
        };
        if !fresh.is_null() {
            // Never published.
            drop(unsafe { Box::from_raw(fresh) });
        }
        out
    }

    /// Removes the key if `pred` accepts its current item. The removed item
    /// is returned to the caller; the node is retired by whichever thread
    /// unlinks it.
    pub fn remove_if<G: Retire<V, W>>(
        &self,
        hash: u64,
        key: &[u8],
        pred: impl Fn(*mut V) -> bool,
        guard: &G,
    ) -> Result<Option<*mut V>, Moved> {
        loop {
            let (left, right) = self.search(hash, key, guard)?;
            if right == 0 {
                return Ok(None);
            }
            let n = unsafe { node::<V, W>(right) };
            if n.cmp_key(hash, key) != KeyOrder::Equal {
                return Ok(None);
            }
            let it = n.item.load(Ordering::Acquire);
            if it & FROZEN != 0 {
                return Err(Moved);
            }
            if it & DELETED != 0 {
                n.next.fetch_or(MARK, Ordering::AcqRel);
                continue;
            }
            if !pred(it as *mut V) {
                return Ok(None);
            }
            if n
                .item
                .compare_exchange(it, it | DELETED, Ordering::AcqRel, Ordering::Acquire)
                .is_err()
            {
                continue;
            }
            let succ = n.next.fetch_or(MARK, Ordering::AcqRel);
            if succ & FROZEN == 0
                && left
                    .compare_exchange(right, succ & !TAGS, Ordering::AcqRel, Ordering::Relaxed)
                    .is_ok()
            {
                unsafe { guard.retire_node(right as *mut Node<V, W>) };
            }
            return Ok(Some(it as *mut V));
        }
    }

    pub fn remove<G: Retire<V, W>>(
        &self,
        hash: u64,
        key: &[u8],
        guard: &G,
    ) -> Result<Option<*mut V>, Moved> {
        self.remove_if(hash, key, |_| true, guard)
    }

    /// Read-only lookup. Never unlinks; marked nodes are stepped over.
    pub fn find<G>(&self, hash: u64, key: &[u8], _guard: &G) -> Result<Option<*mut V>, Moved> {
        let mut link = self.head.load(Ordering::Acquire);
        if link & FROZEN != 0 {
            return Err(Moved);
        }
        loop {
            let p = link & !TAGS;
            if p == 0 {
                return Ok(None);
            }
            let n = unsafe { node::<V, W>(p) };
            let next = n.next.load(Ordering::Acquire);
            if next & FROZEN != 0 {
                return Err(Moved);
            }
            match n.cmp_key(hash, key) {
                KeyOrder::Less => {}
                KeyOrder::Greater => return Ok(None),
                KeyOrder::Equal if next & MARK == 0 => {
                    let it = n.item.load(Ordering::Acquire);
                    if it & FROZEN != 0 {
                        return Err(Moved);
                    }
                    if it & DELETED != 0 {
                        return Ok(None);
                    }
                    return Ok(Some(it as *mut V));
                }
                KeyOrder::Equal => {}
            }
            link = next;
        }
    }

    /// First node holding a live item, for whole-bucket eviction.
    pub fn first_live<'g, G>(&self, _guard: &'g G) -> Result<Option<&'g Node<V, W>>, Moved> {
        let mut link = self.head.load(Ordering::Acquire);
        loop {
            if link & FROZEN != 0 {
                return Err(Moved);
            }
            let p = link & !TAGS;
            if p == 0 {
                return Ok(None);
            }
            let n = unsafe { node::<V, W>(p) };
            let next = n.next.load(Ordering::Acquire);
            if next & MARK == 0 && n.item.load(Ordering::Acquire) & (DELETED | FROZEN) == 0 {
                return Ok(Some(n));
            }
            link = next;
        }
    }

    /// Live `(key, item)` pairs in list order.
    pub fn live_entries<'g, G>(&self, _guard: &'g G) -> Vec<(&'g [u8], *mut V)>
    where
        V: 'g,
        W: 'g,
    {
        let mut out = Vec::new();
        let mut link = self.head.load(Ordering::Acquire) & !FROZEN;
        while link & !TAGS != 0 {
            let n = unsafe { node::<V, W>(link & !TAGS) };
            let next = n.next.load(Ordering::Acquire);
            let it = n.item.load(Ordering::Acquire);
            if next & MARK == 0 && it & DELETED == 0 {
                out.push((&n.key[..], (it & !TAGS) as *mut V));
            }
            link = next;
        }
        out
    }

    /// Every reachable node, marked or not, as `(hash, key, marked)`.
    pub fn raw_nodes<G>(&self, _guard: &G) -> Vec<(u64, Vec<u8>, bool)> {
        let mut out = Vec::new();
        let mut link = self.head.load(Ordering::Acquire);
        while link & !TAGS != 0 {
            let n = unsafe { node::<V, W>(link & !TAGS) };
            let next = n.next.load(Ordering::Acquire);
            out.push((n.hash, n.key.to_vec(), next & MARK != 0));
            link = next;
        }
        out
    }

    /// Detaches the whole chain for migration, freezing every link so that no
    /// later insert or unlink can land in it. Returns `None` if the list was
    /// already detached.
    pub fn detach(&self) -> Option<Detached<V, W>> {
        let old = self.head.fetch_or(FROZEN, Ordering::AcqRel);
        if old & FROZEN != 0 {
            return None;
        }
        let first = old & !TAGS;
        let mut p = first;
        while p != 0 {
            let next = unsafe { node::<V, W>(p) }.next.fetch_or(FROZEN, Ordering::AcqRel);
            p = next & !TAGS;
        }
        Some(Detached {
            first,
            _item: PhantomData,
            _word: PhantomData,
        })
    }

    /// Frees every node still linked, handing each live item to `f`.
    ///
    /// # Safety
    /// No other thread may access the list. A detached list is left alone:
    /// its nodes belong to the migrator.
    pub unsafe fn drain(&mut self, mut f: impl FnMut(*mut V)) {
        let head = self.head.load(Ordering::Acquire);
        if head & FROZEN != 0 {
            return;
        }
        self.head.store(0, Ordering::Relaxed);
        let mut p = head & !TAGS;
        while p != 0 {
            let n = Box::from_raw(p as *mut Node<V, W>);
            let it = n.item.load(Ordering::Relaxed);
            if it & (DELETED | FROZEN) == 0 {
                f(it as *mut V);
            }
            p = n.next.load(Ordering::Relaxed) & !TAGS;
        }
    }
}

impl<V, W: AtomicWord> Drop for List<V, W> {
    fn drop(&mut self) {
        // Items are owned by the table layer, which drains before dropping.
        unsafe { self.drain(|_| {}) };
    }
}

impl<V> Retire<V, AtomicUsize> for crate::reclaim::Guard<'_> {
    unsafe fn retire_node(&self, node: *mut Node<V, AtomicUsize>) {
        self.retire(node, 0);
    }
}
