//! Lock-free hash table with CLOCK eviction at bucket granularity.
//!
//! Every bucket is a [`List`] plus a small recency counter in `[0, K]`.
//! A hit or a write sets the counter to `K`; the eviction hand, a monotone
//! counter taken modulo the bucket count, decrements it, and a bucket whose
//! counter is already zero is evicted whole. Because expansion keeps the load
//! factor at or below 1.5, each counter speaks for very few items, and the
//! hand walks a contiguous array instead of chasing list pointers.
//!
//! # Expansion
//!
//! When the item count passes 1.5 × the bucket count, the inserting thread
//! allocates an array twice as large and publishes it as the table's
//! expansion. From then on:
//!
//! - any operation on old bucket `i` first makes sure `i` has been migrated,
//!   claiming and migrating it itself when nobody else has, or waiting for
//!   the claimant otherwise;
//! - every `put` additionally migrates up to `migrate_batch` buckets in index
//!   order so the expansion finishes without a background thread;
//! - migrating `i` detaches (freezes) its chain, copies the bucket's counter
//!   to new buckets `i` and `i + len`, and relinks each live item there.
//!
//! The thread that migrates the last bucket swings the table to the new
//! array and retires the old one.

use std::ptr;
use std::sync::atomic::{AtomicIsize, AtomicPtr, AtomicU64, AtomicU8, AtomicUsize, Ordering};

use crate::hash::bucket_of;
use crate::item::Item;
use crate::list::{Insert, List, Moved};
use crate::poison::Poison;
use crate::reclaim::Guard;

const UNCLAIMED: u8 = 0;
const MIGRATING: u8 = 1;
const MIGRATED: u8 = 2;

/// Load factor above which the table expands, as a ratio `NUM / DEN`.
const LOAD_NUM: usize = 3;
const LOAD_DEN: usize = 2;

#[derive(Debug, Clone, Copy)]
pub struct TableConfig {
    /// Power of two.
    pub initial_buckets: usize,
    /// Upper bound `K` of the per-bucket counters, at least 1.
    pub clock_max: u8,
    /// Buckets migrated by every `put` while an expansion is running.
    pub migrate_batch: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            initial_buckets: 1024,
            clock_max: 3,
            migrate_batch: 2,
        }
    }
}

pub struct Bucket {
    list: List<Item>,
    clock: AtomicU8,
}

impl Bucket {
    fn new() -> Self {
        Bucket {
            list: List::new(),
            clock: AtomicU8::new(0),
        }
    }

    #[inline]
    fn touch(&self, k: u8) {
        if self.clock.load(Ordering::Relaxed) != k {
            self.clock.store(k, Ordering::Relaxed);
        }
    }

    pub fn clock(&self) -> u8 {
        self.clock.load(Ordering::Relaxed)
    }

    pub fn list(&self) -> &List<Item> {
        &self.list
    }
}

struct BucketArray {
    buckets: Box<[Bucket]>,
    mask: usize,
    expansion: AtomicPtr<Expansion>,
}

impl BucketArray {
    fn new(len: usize) -> Self {
        debug_assert!(len.is_power_of_two());
        BucketArray {
            buckets: (0..len).map(|_| Bucket::new()).collect(),
            mask: len - 1,
            expansion: AtomicPtr::new(ptr::null_mut()),
        }
    }

    #[inline]
    fn len(&self) -> usize {
        self.mask + 1
    }

    #[inline]
    fn bucket(&self, hash: u64) -> &Bucket {
        &self.buckets[bucket_of(hash, self.len())]
    }

    fn expansion<'g>(&self, _guard: &'g Guard<'_>) -> Option<&'g Expansion> {
        unsafe { self.expansion.load(Ordering::Acquire).as_ref() }
    }
}

impl Drop for BucketArray {
    fn drop(&mut self) {
        for b in self.buckets.iter_mut() {
            unsafe { b.list.drain(|it| drop(Box::from_raw(it))) };
        }
        let exp = *self.expansion.get_mut();
        if !exp.is_null() {
            // The target array is owned by whoever ends up current.
            drop(unsafe { Box::from_raw(exp) });
        }
    }
}

impl Poison for BucketArray {}

struct Expansion {
    new: *mut BucketArray,
    markers: Box<[AtomicU8]>,
    next_to_migrate: AtomicUsize,
    migrated: AtomicUsize,
}

impl Expansion {
    fn new(new: *mut BucketArray, old_len: usize) -> Self {
        Expansion {
            new,
            markers: (0..old_len).map(|_| AtomicU8::new(UNCLAIMED)).collect(),
            next_to_migrate: AtomicUsize::new(0),
            migrated: AtomicUsize::new(0),
        }
    }

    fn target(&self) -> &BucketArray {
        unsafe { &*self.new }
    }
}

/// Result of [`ClockTable::put`].
#[derive(Debug)]
pub enum Put<'g> {
    Inserted,
    /// The previous item, already retired.
    Replaced(&'g Item),
}

/// Result of one [`ClockTable::evict_step`].
#[derive(Debug)]
pub enum Evict<'g> {
    /// Items removed from a bucket whose counter was zero, already retired,
    /// with their total charge.
    Evicted(Vec<&'g Item>, u64),
    Decremented,
    Skipped,
}

/// Point-in-time facts about the table layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableInfo {
    pub bucket_count: usize,
    pub item_count: usize,
    pub expansion_in_progress: bool,
    pub expansions_started: u64,
    pub expansions: u64,
    pub hand: u64,
}

pub struct ClockTable {
    current: AtomicPtr<BucketArray>,
    /// Can dip below zero while an insert has not been counted yet and a
    /// racing removal already has.
    item_count: AtomicIsize,
    hand: AtomicU64,
    clock_max: u8,
    migrate_batch: usize,
    expansions_started: AtomicU64,
    expansions: AtomicU64,
}

unsafe impl Send for ClockTable {}
unsafe impl Sync for ClockTable {}

impl ClockTable {
    pub fn new(config: TableConfig) -> Self {
        assert!(config.initial_buckets.is_power_of_two());
        assert!(config.clock_max >= 1);
        ClockTable {
            current: AtomicPtr::new(Box::into_raw(Box::new(BucketArray::new(
                config.initial_buckets,
            )))),
            item_count: AtomicIsize::new(0),
            hand: AtomicU64::new(0),
            clock_max: config.clock_max,
            migrate_batch: config.migrate_batch,
            expansions_started: AtomicU64::new(0),
            expansions: AtomicU64::new(0),
        }
    }

    pub fn clock_max(&self) -> u8 {
        self.clock_max
    }

    pub fn item_count(&self) -> usize {
        self.item_count.load(Ordering::Relaxed).max(0) as usize
    }

    /// Bucket count of the current array (the old one while expanding).
    pub fn bucket_count(&self) -> usize {
        unsafe { &*self.current.load(Ordering::Acquire) }.len()
    }

    pub fn info(&self, guard: &Guard<'_>) -> TableInfo {
        let arr = self.array(guard);
        TableInfo {
            bucket_count: arr.len(),
            item_count: self.item_count(),
            expansion_in_progress: arr.expansion(guard).is_some(),
            expansions_started: self.expansions_started.load(Ordering::Relaxed),
            expansions: self.expansions.load(Ordering::Relaxed),
            hand: self.hand.load(Ordering::Relaxed),
        }
    }

    #[inline]
    fn array<'g>(&self, _guard: &'g Guard<'_>) -> &'g BucketArray {
        unsafe { &*self.current.load(Ordering::Acquire) }
    }

    /// Runs `f` on the bucket that owns `hash`, migrating the old bucket first
    /// if an expansion is under way, and retrying whenever the list moved.
    fn with_bucket<'g, R>(
        &self,
        hash: u64,
        guard: &'g Guard<'_>,
        mut f: impl FnMut(&'g Bucket) -> Result<R, Moved>,
    ) -> R {
        loop {
            let arr = self.array(guard);
            let bucket = match arr.expansion(guard) {
                None => arr.bucket(hash),
                Some(exp) => {
                    self.ensure_migrated(arr, exp, bucket_of(hash, arr.len()), guard);
                    exp.target().bucket(hash)
                }
            };
            if let Ok(r) = f(bucket) {
                return r;
            }
        }
    }

    pub fn get<'g>(&self, hash: u64, key: &[u8], guard: &'g Guard<'_>) -> Option<&'g Item> {
        self.with_bucket(hash, guard, |b| {
            let found = b.list.find(hash, key, guard)?;
            Ok(found.map(|p| {
                b.touch(self.clock_max);
                let item = unsafe { &*p };
                item.check_canary();
                item
            }))
        })
    }

    /// Inserts or replaces. The table takes ownership of `item`; a replaced
    /// item is retired with its charge before being returned.
    pub fn put<'g>(&self, hash: u64, item: Box<Item>, guard: &'g Guard<'_>) -> Put<'g> {
        self.drive_expansion(guard);
        let raw = Box::into_raw(item);
        let key = unsafe { (*raw).key() };
        let out = self.with_bucket(hash, guard, |b| {
            let r = b.list.insert(hash, key, raw, guard)?;
            b.touch(self.clock_max);
            Ok(r)
        });
        match out {
            Insert::Inserted => {
                let count = self.item_count.fetch_add(1, Ordering::AcqRel) + 1;
                self.maybe_expand(count.max(0) as usize, guard);
                Put::Inserted
            }
            Insert::Replaced(old) => unsafe {
                guard.retire(old, (*old).charged_bytes());
                Put::Replaced(&*old)
            },
        }
    }

    /// Removes the key if `pred` accepts its current item; the removed item
    /// is retired with its charge before being returned.
    pub fn remove_if<'g>(
        &self,
        hash: u64,
        key: &[u8],
        pred: impl Fn(&Item) -> bool,
        guard: &'g Guard<'_>,
    ) -> Option<&'g Item> {
        let removed = self.with_bucket(hash, guard, |b| {
            b.list.remove_if(hash, key, |p| pred(unsafe { &*p }), guard)
        })?;
        Some(self.retire_removed(removed, guard))
    }

    pub fn remove<'g>(&self, hash: u64, key: &[u8], guard: &'g Guard<'_>) -> Option<&'g Item> {
        self.remove_if(hash, key, |_| true, guard)
    }

    fn retire_removed<'g>(&self, p: *mut Item, guard: &'g Guard<'_>) -> &'g Item {
        self.item_count.fetch_sub(1, Ordering::AcqRel);
        unsafe {
            guard.retire(p, (*p).charged_bytes());
            &*p
        }
    }

    /// Claims the next hand position and applies the CLOCK rule to it.
    pub fn evict_step<'g>(&self, guard: &'g Guard<'_>) -> Evict<'g> {
        let arr = self.array(guard);
        let pos = self.hand.fetch_add(1, Ordering::Relaxed);
        let i = (pos as usize) & arr.mask;
        if let Some(exp) = arr.expansion(guard) {
            if exp.markers[i].load(Ordering::Acquire) != UNCLAIMED {
                return Evict::Skipped;
            }
        }
        let b = &arr.buckets[i];
        let clock = b.clock.load(Ordering::Acquire);
        if clock > 0 {
            let _ = b.clock.compare_exchange(
                clock,
                clock - 1,
                Ordering::AcqRel,
                Ordering::Relaxed,
            );
            return Evict::Decremented;
        }
        let mut items = Vec::new();
        let mut bytes = 0;
        // Stop early if the bucket is touched while we empty it.
        while b.clock.load(Ordering::Relaxed) == 0 {
            let n = match b.list.first_live(guard) {
                Ok(Some(n)) => n,
                _ => break,
            };
            match b.list.remove(n.hash(), n.key(), guard) {
                Ok(Some(p)) => {
                    let item = self.retire_removed(p, guard);
                    bytes += item.charged_bytes();
                    items.push(item);
                }
                Ok(None) => continue,
                Err(Moved) => break,
            }
        }
        if items.is_empty() {
            Evict::Skipped
        } else {
            Evict::Evicted(items, bytes)
        }
    }

    fn maybe_expand(&self, count: usize, guard: &Guard<'_>) {
        let arr = self.array(guard);
        if count * LOAD_DEN <= arr.len() * LOAD_NUM
            || !arr.expansion.load(Ordering::Acquire).is_null()
        {
            return;
        }
        let new = Box::into_raw(Box::new(BucketArray::new(arr.len() * 2)));
        let exp = Box::into_raw(Box::new(Expansion::new(new, arr.len())));
        match arr.expansion.compare_exchange(
            ptr::null_mut(),
            exp,
            Ordering::AcqRel,
            Ordering::Acquire,
        ) {
            Ok(_) => {
                self.expansions_started.fetch_add(1, Ordering::Relaxed);
            }
            Err(_) => unsafe {
                drop(Box::from_raw(exp));
                drop(Box::from_raw(new));
            },
        }
    }

    /// Migrates up to `migrate_batch` old buckets in index order.
    pub fn drive_expansion(&self, guard: &Guard<'_>) {
        if self.migrate_batch == 0 {
            return;
        }
        let arr = self.array(guard);
        let Some(exp) = arr.expansion(guard) else {
            return;
        };
        for _ in 0..self.migrate_batch {
            let j = exp.next_to_migrate.fetch_add(1, Ordering::Relaxed);
            if j >= arr.len() {
                break;
            }
            if exp.markers[j]
                .compare_exchange(UNCLAIMED, MIGRATING, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                self.migrate(arr, exp, j, guard);
            }
        }
    }

    /// Migrates every remaining bucket, including any expansion that the
    /// completion of this one triggers.
    pub fn finish_expansion(&self, guard: &Guard<'_>) {
        loop {
            let arr = self.array(guard);
            let Some(exp) = arr.expansion(guard) else {
                return;
            };
            for i in 0..arr.len() {
                self.ensure_migrated(arr, exp, i, guard);
            }
            std::hint::spin_loop();
        }
    }

    /// Migrates old bucket `i` unless it already is; waits for another
    /// thread's claim to finish.
    fn ensure_migrated(&self, arr: &BucketArray, exp: &Expansion, i: usize, guard: &Guard<'_>) {
        let marker = &exp.markers[i];
        let mut spins = 0u32;
        loop {
            match marker.load(Ordering::Acquire) {
                MIGRATED => return,
                UNCLAIMED => {
                    if marker
                        .compare_exchange(UNCLAIMED, MIGRATING, Ordering::AcqRel, Ordering::Acquire)
                        .is_ok()
                    {
                        self.migrate(arr, exp, i, guard);
                        return;
                    }
                }
                _ => {
                    spins += 1;
                    if spins < 64 {
                        std::hint::spin_loop();
                    } else {
                        std::thread::yield_now();
                    }
                }
            }
        }
    }

    /// Moves old bucket `i` into the expansion target. Caller holds the claim.
    fn migrate(&self, arr: &BucketArray, exp: &Expansion, i: usize, guard: &Guard<'_>) {
        let old = &arr.buckets[i];
        let target = exp.target();
        let clock = old.clock.load(Ordering::Acquire);
        target.buckets[i].clock.store(clock, Ordering::Relaxed);
        target.buckets[i + arr.len()].clock.store(clock, Ordering::Relaxed);
        if let Some(chain) = old.list.detach() {
            for p in chain.nodes() {
                let n = unsafe { &*p };
                if let Some(item) = n.freeze_item() {
                    let r = target
                        .bucket(n.hash())
                        .list
                        .insert(n.hash(), n.key(), item, guard);
                    debug_assert!(matches!(r, Ok(Insert::Inserted)));
                }
                unsafe { guard.retire(p, 0) };
            }
        }
        exp.markers[i].store(MIGRATED, Ordering::Release);
        if exp.migrated.fetch_add(1, Ordering::AcqRel) + 1 == arr.len() {
            self.complete(arr, exp, guard);
        }
    }

    fn complete(&self, arr: &BucketArray, exp: &Expansion, guard: &Guard<'_>) {
        let old = arr as *const BucketArray as *mut BucketArray;
        if self
            .current
            .compare_exchange(old, exp.new, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
        {
            self.expansions.fetch_add(1, Ordering::Relaxed);
            unsafe { guard.retire(old, 0) };
            self.maybe_expand(self.item_count(), guard);
        }
    }

    /// Counter values of the current array.
    pub fn clocks(&self, guard: &Guard<'_>) -> Vec<u8> {
        self.array(guard).buckets.iter().map(Bucket::clock).collect()
    }

    /// Live keys of bucket `i` in the current array, in list order.
    pub fn bucket_keys(&self, i: usize, guard: &Guard<'_>) -> Vec<Vec<u8>> {
        self.array(guard).buckets[i]
            .list
            .live_entries(guard)
            .into_iter()
            .map(|(k, _)| k.to_vec())
            .collect()
    }

    /// Calls `f` on every live item, in the expansion target as well as in
    /// unmigrated old buckets.
    pub fn for_each_item(&self, guard: &Guard<'_>, mut f: impl FnMut(&Item)) {
        let arr = self.array(guard);
        let mut visit = |a: &BucketArray| {
            for b in a.buckets.iter().filter(|b| !b.list.is_moved()) {
                for (_, it) in b.list.live_entries(guard) {
                    f(unsafe { &*it });
                }
            }
        };
        visit(arr);
        if let Some(exp) = arr.expansion(guard) {
            visit(exp.target());
        }
    }
}

impl Drop for ClockTable {
    fn drop(&mut self) {
        let cur = *self.current.get_mut();
        unsafe {
            let exp = (*cur).expansion.load(Ordering::Acquire);
            if !exp.is_null() {
                drop(Box::from_raw((*exp).new));
            }
            drop(Box::from_raw(cur));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash::hash;
    use crate::reclaim::Collector;

    fn table(len: usize, k: u8, batch: usize) -> ClockTable {
        ClockTable::new(TableConfig {
            initial_buckets: len,
            clock_max: k,
            migrate_batch: batch,
        })
    }

    fn item(key: &str) -> Box<Item> {
        Box::new(Item::new(key.as_bytes(), 0, 0, b"v"))
    }

    fn put(t: &ClockTable, c: &Collector, key: &str) -> bool {
        let g = c.enter();
        matches!(t.put(hash(key.as_bytes()), item(key), &g), Put::Inserted)
    }

    fn get(t: &ClockTable, c: &Collector, key: &str) -> bool {
        let g = c.enter();
        t.get(hash(key.as_bytes()), key.as_bytes(), &g).is_some()
    }

    /// Keys whose hash lands in `bucket` of a `len`-bucket table.
    fn keys_in(bucket: usize, len: usize, n: usize) -> Vec<String> {
        (0..)
            .map(|i| format!("k{i}"))
            .filter(|k| bucket_of(hash(k.as_bytes()), len) == bucket)
            .take(n)
            .collect()
    }

    #[test]
    fn get_on_empty_table_leaves_clocks() {
        let c = Collector::new(4);
        let t = table(4, 3, 2);
        assert!(!get(&t, &c, "a"));
        assert_eq!(t.clocks(&c.enter()), vec![0; 4]);
    }

    #[test]
    fn hit_sets_clock_to_k() {
        let c = Collector::new(4);
        let t = table(4, 3, 2);
        put(&t, &c, "a");
        let b = bucket_of(hash(b"a"), 4);
        let g = c.enter();
        t.array(&g).buckets[b].clock.store(0, Ordering::Relaxed);
        assert!(t.get(hash(b"a"), b"a", &g).is_some());
        assert_eq!(t.clocks(&g)[b], 3);
    }

    #[test]
    fn put_counts_and_replaces() {
        let c = Collector::new(4);
        let t = table(2, 3, 2);
        assert!(put(&t, &c, "a"));
        assert_eq!(t.item_count(), 1);
        assert!(!put(&t, &c, "a"));
        assert_eq!(t.item_count(), 1);
        assert_eq!(c.retired_bytes(), Item::charge_for(1, 1));
    }

    #[test]
    fn fourth_item_triggers_expansion_of_two_buckets() {
        let c = Collector::new(4);
        let t = table(2, 3, 2);
        for k in ["a", "b", "c"] {
            put(&t, &c, k);
        }
        assert!(!t.info(&c.enter()).expansion_in_progress);
        put(&t, &c, "d");
        let info = t.info(&c.enter());
        assert!(info.expansion_in_progress);
        assert_eq!(info.expansions_started, 1);
    }

    #[test]
    fn remove_present_and_absent() {
        let c = Collector::new(4);
        let t = table(4, 3, 2);
        put(&t, &c, "a");
        let g = c.enter();
        assert!(t.remove(hash(b"a"), b"a", &g).is_some());
        assert_eq!(t.item_count(), 0);
        assert!(t.remove(hash(b"a"), b"a", &g).is_none());
    }

    #[test]
    fn evict_zero_clock_bucket() {
        let c = Collector::new(4);
        let t = table(2, 2, 2);
        let a = keys_in(0, 2, 1).pop().unwrap();
        put(&t, &c, &a);
        let g = c.enter();
        t.array(&g).buckets[0].clock.store(0, Ordering::Relaxed);
        t.array(&g).buckets[1].clock.store(2, Ordering::Relaxed);
        match t.evict_step(&g) {
            Evict::Evicted(items, bytes) => {
                assert_eq!(items.len(), 1);
                assert_eq!(items[0].key(), a.as_bytes());
                assert_eq!(bytes, items[0].charged_bytes());
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.info(&g).hand, 1);
        assert_eq!(t.item_count(), 0);
    }

    #[test]
    fn evict_decrements_nonzero_clock() {
        let c = Collector::new(4);
        let t = table(2, 2, 2);
        let g = c.enter();
        t.array(&g).buckets[0].clock.store(2, Ordering::Relaxed);
        assert!(matches!(t.evict_step(&g), Evict::Decremented));
        assert_eq!(t.clocks(&g), vec![1, 0]);
        assert_eq!(t.info(&g).hand, 1);
        // Bucket 1 is empty with a zero counter.
        assert!(matches!(t.evict_step(&g), Evict::Skipped));
    }

    /// Hand simulation oracle: with every counter at K, the bucket holding
    /// the only item is evicted on the visit after K full sweeps.
    #[test]
    fn full_clock_needs_k_sweeps() {
        let c = Collector::new(4);
        let len = 4;
        let t = table(len, 3, 2);
        let a = keys_in(0, len, 1).pop().unwrap();
        put(&t, &c, &a);
        let g = c.enter();
        for b in t.array(&g).buckets.iter() {
            b.clock.store(3, Ordering::Relaxed);
        }
        // Oracle: replay the rule on plain integers.
        let mut clocks = [3u8; 4];
        let mut expected_steps = 0;
        loop {
            let i = expected_steps % len;
            expected_steps += 1;
            if clocks[i] > 0 {
                clocks[i] -= 1;
            } else if i == 0 {
                break;
            }
        }
        assert_eq!(expected_steps, 3 * len + 1);
        let mut steps = 0;
        loop {
            steps += 1;
            if let Evict::Evicted(..) = t.evict_step(&g) {
                break;
            }
        }
        assert_eq!(steps, expected_steps);
    }

    #[test]
    fn migration_splits_bucket_and_copies_clock() {
        let c = Collector::new(4);
        let t = table(2, 3, 0);
        let keys = keys_in(0, 2, 4);
        for k in &keys {
            put(&t, &c, k);
        }
        let g = c.enter();
        assert!(t.info(&g).expansion_in_progress);
        t.array(&g).buckets[0].clock.store(2, Ordering::Relaxed);
        let arr = t.array(&g);
        let exp = arr.expansion(&g).unwrap();
        assert!(exp.markers[0]
            .compare_exchange(UNCLAIMED, MIGRATING, Ordering::AcqRel, Ordering::Acquire)
            .is_ok());
        t.migrate(arr, exp, 0, &g);
        assert!(arr.buckets[0].list.is_moved());
        assert_eq!(exp.target().buckets[0].clock(), 2);
        assert_eq!(exp.target().buckets[2].clock(), 2);
        for k in &keys {
            let h = hash(k.as_bytes());
            let b = exp.target().bucket(h);
            assert_eq!(bucket_of(h, 4) & 1, 0);
            assert!(b.list.find(h, k.as_bytes(), &g).unwrap().is_some());
        }
        // A second claim is refused, so migration happens once.
        assert!(exp.markers[0]
            .compare_exchange(UNCLAIMED, MIGRATING, Ordering::AcqRel, Ordering::Acquire)
            .is_err());
        assert!(arr.buckets[0].list.detach().is_none());
    }

    #[test]
    fn get_and_remove_during_expansion() {
        let c = Collector::new(4);
        let t = table(2, 3, 0);
        let keys: Vec<String> = (0..4).map(|i| format!("x{i}")).collect();
        for k in &keys {
            put(&t, &c, k);
        }
        assert!(t.info(&c.enter()).expansion_in_progress);
        // Access helps migrate the key's bucket, then finds it in the new array.
        assert!(get(&t, &c, &keys[0]));
        let g = c.enter();
        let removed = t.remove(hash(keys[1].as_bytes()), keys[1].as_bytes(), &g);
        assert!(removed.is_some());
        drop(g);
        assert!(!get(&t, &c, &keys[1]));
        let g = c.enter();
        t.finish_expansion(&g);
        let info = t.info(&g);
        assert!(!info.expansion_in_progress);
        assert_eq!(info.bucket_count, 4);
        assert_eq!(info.expansions, 1);
        drop(g);
        for k in [&keys[0], &keys[2], &keys[3]] {
            assert!(get(&t, &c, k));
        }
        assert!(!get(&t, &c, &keys[1]));
    }

    #[test]
    fn batch_drive_finishes_within_bound() {
        // 128 old buckets, two per put: at most 64 puts after the trigger.
        let c = Collector::new(4);
        let t = table(128, 3, 2);
        let mut i = 0;
        while !t.info(&c.enter()).expansion_in_progress {
            put(&t, &c, &format!("key-{i}"));
            i += 1;
        }
        let mut puts = 0;
        while t.info(&c.enter()).expansion_in_progress {
            put(&t, &c, &format!("key-{i}"));
            i += 1;
            puts += 1;
        }
        assert!(puts <= 64, "took {puts} puts");
        assert_eq!(t.bucket_count(), 256);
    }

    #[test]
    fn no_drive_still_completes_through_access() {
        use rand::{Rng, SeedableRng};
        let c = Collector::new(4);
        let t = table(8, 3, 0);
        let keys: Vec<String> = (0..13).map(|i| format!("r{i}")).collect();
        for k in &keys {
            put(&t, &c, k);
        }
        assert!(t.info(&c.enter()).expansion_in_progress);
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let mut n = 0;
        while t.info(&c.enter()).expansion_in_progress {
            let k = &keys[rng.gen_range(0..keys.len())];
            assert!(get(&t, &c, k));
            n += 1;
            assert!(n < 10_000);
        }
        for k in &keys {
            assert!(get(&t, &c, k));
        }
    }

    #[test]
    fn concurrent_inserts_across_expansions_lose_nothing() {
        for threads in [1usize, 4, 8] {
            let c = Collector::new(32);
            let t = table(2, 3, 2);
            let per = 2_000;
            std::thread::scope(|s| {
                for th in 0..threads {
                    let (t, c) = (&t, &c);
                    s.spawn(move || {
                        for i in 0..per {
                            assert!(put(t, c, &format!("t{th}-{i}")));
                        }
                    });
                }
            });
            let g = c.enter();
            t.finish_expansion(&g);
            let info = t.info(&g);
            assert!(info.expansions >= 2);
            assert_eq!(info.item_count, threads * per);
            assert!(info.item_count * 2 <= info.bucket_count * 3);
            drop(g);
            for th in 0..threads {
                for i in 0..per {
                    assert!(get(&t, &c, &format!("t{th}-{i}")));
                }
            }
        }
    }

    #[test]
    fn concurrent_get_while_bucket_migrates() {
        let c = Collector::new(16);
        let t = table(2, 3, 0);
        let keys: Vec<String> = (0..4).map(|i| format!("m{i}")).collect();
        for k in &keys {
            put(&t, &c, k);
        }
        std::thread::scope(|s| {
            let (t, c, keys) = (&t, &c, &keys);
            s.spawn(move || {
                let g = c.enter();
                t.finish_expansion(&g);
            });
            for _ in 0..2 {
                s.spawn(move || {
                    for _ in 0..200 {
                        for k in keys {
                            assert!(get(t, c, k));
                        }
                    }
                });
            }
        });
    }

    #[test]
    fn clocks_stay_in_range_under_churn() {
        let c = Collector::new(16);
        let t = table(16, 3, 2);
        std::thread::scope(|s| {
            for th in 0..4 {
                let (t, c) = (&t, &c);
                s.spawn(move || {
                    for i in 0..3_000 {
                        let k = format!("c{}", (i * 31 + th) % 200);
                        if i % 3 == 0 {
                            put(t, c, &k);
                        } else if i % 3 == 1 {
                            get(t, c, &k);
                        } else {
                            let g = c.enter();
                            let _ = t.evict_step(&g);
                        }
                        if i % 100 == 0 {
                            let g = c.enter();
                            assert!(t.clocks(&g).iter().all(|&v| v <= 3));
                        }
                    }
                });
            }
        });
    }
}
