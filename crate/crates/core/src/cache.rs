//! The cache: a [`ClockTable`] plus a byte budget and an epoch collector.
//!
//! The budget counts every byte the cache is responsible for: live items and
//! retired items the collector has not freed yet. A `set` first reserves its
//! item's charge. When that fails it runs the pressure loop: reclaim what is
//! already safe, then move the eviction hand one bucket at a time, reclaiming
//! again after every eviction, until the reservation fits or the hand has
//! made `K + 1` full sweeps (at which point every bucket that could be
//! evicted has been).

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::hash::hash;
use crate::item::Item;
use crate::reclaim::{Collector, DEFAULT_SLOTS};
use crate::table::{ClockTable, Evict, Put, TableConfig, TableInfo};
use crate::time::{Clock, MonotonicClock};
use crate::MAX_KEY_LEN;

/// Extra rounds a `set` may run after backing off, so a reader that was
/// descheduled inside its critical section gets to release pinned memory.
const PRESSURE_ROUNDS: u32 = 16;

/// Yields for the first few rounds, then sleeps for doubling intervals
/// starting at 20 us; all rounds together wait about a third of a second.
fn backoff(round: u32) {
    if round <= 3 {
        std::thread::yield_now();
    } else {
        std::thread::sleep(Duration::from_micros(20 << (round - 4)));
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("key longer than {MAX_KEY_LEN} bytes")]
    KeyTooLong,
    #[error("value larger than the configured maximum")]
    ValueTooLarge,
    #[error("out of memory storing object")]
    OutOfMemory,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone)]
pub struct CacheConfig {
    /// Memory budget in bytes, including the per-item overhead.
    pub max_bytes: u64,
    /// Largest CLOCK counter value `K`.
    pub clock_max: u8,
    /// Initial bucket count, a power of two.
    pub initial_buckets: usize,
    /// Buckets each `set` migrates while the table is expanding.
    pub migrate_batch: usize,
    /// Maximum number of threads using the cache at the same time.
    pub thread_slots: usize,
    pub max_value_bytes: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            max_bytes: 64 << 20,
            clock_max: 3,
            initial_buckets: 1024,
            migrate_batch: 2,
            thread_slots: DEFAULT_SLOTS,
            max_value_bytes: 1 << 20,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        if !self.initial_buckets.is_power_of_two() {
            return Err(CacheError::InvalidConfig("initial_buckets must be a power of two"));
        }
        if self.clock_max == 0 {
            return Err(CacheError::InvalidConfig("clock_max must be at least 1"));
        }
        if self.thread_slots == 0 {
            return Err(CacheError::InvalidConfig("thread_slots must be at least 1"));
        }
        if self.max_bytes <= Item::charge_for(1, 0) {
            return Err(CacheError::InvalidConfig("max_bytes cannot hold a single item"));
        }
        Ok(())
    }
}

/// Called with each evicted item while it is still readable.
pub type EvictionListener = Box<dyn Fn(&Item) + Send + Sync>;

/// A successful lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hit {
    pub flags: u32,
    pub value: Vec<u8>,
}

/// Snapshot of cache counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stats {
    pub get_hits: u64,
    pub get_misses: u64,
    pub sets: u64,
    pub deletes: u64,
    pub delete_misses: u64,
    pub evictions: u64,
    pub evicted_bytes: u64,
    pub expired_reclaimed: u64,
    /// Charged bytes of live items.
    pub bytes_in_use: u64,
    /// Bytes retired and not yet freed.
    pub retired_bytes: u64,
    pub max_bytes: u64,
    pub item_count: u64,
    pub bucket_count: u64,
    pub epoch_advances: u64,
    pub expansions: u64,
}

#[derive(Default)]
#[repr(align(128))]
struct Counters {
    get_hits: AtomicU64,
    get_misses: AtomicU64,
    sets: AtomicU64,
    deletes: AtomicU64,
    delete_misses: AtomicU64,
    evictions: AtomicU64,
    evicted_bytes: AtomicU64,
    expired_reclaimed: AtomicU64,
}

#[inline]
fn bump(c: &AtomicU64, by: u64) {
    c.fetch_add(by, Ordering::Relaxed);
}

pub struct Cache {
    table: ClockTable,
    collector: Collector,
    config: CacheConfig,
    /// Live plus retired-but-unfreed bytes.
    reserved: AtomicU64,
    live_bytes: AtomicU64,
    counters: Box<[Counters]>,
    clock: Arc<dyn Clock>,
    listener: Option<EvictionListener>,
}

impl std::fmt::Debug for Cache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cache")
            .field("config", &self.config)
            .field("stats", &self.stats())
            .finish()
    }
}

impl Cache {
    pub fn new(config: CacheConfig) -> Result<Self, CacheError> {
        Self::with_clock(config, Arc::new(MonotonicClock::new()))
    }

    pub fn with_clock(config: CacheConfig, clock: Arc<dyn Clock>) -> Result<Self, CacheError> {
        config.validate()?;
        Ok(Cache {
            table: ClockTable::new(TableConfig {
                initial_buckets: config.initial_buckets,
                clock_max: config.clock_max,
                migrate_batch: config.migrate_batch,
            }),
            collector: Collector::new(config.thread_slots),
            reserved: AtomicU64::new(0),
            live_bytes: AtomicU64::new(0),
            counters: (0..config.thread_slots).map(|_| Counters::default()).collect(),
            config,
            clock,
            listener: None,
        })
    }

    /// Installs a callback run for every evicted item.
    pub fn with_eviction_listener(mut self, f: EvictionListener) -> Self {
        self.listener = Some(f);
        self
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn clock(&self) -> &dyn Clock {
        &*self.clock
    }

    pub fn collector(&self) -> &Collector {
        &self.collector
    }

    pub fn table_info(&self) -> TableInfo {
        self.table.info(&self.collector.enter())
    }

    /// Looks `key` up and runs `f` on the item without copying it.
    pub fn get_with<R>(&self, key: &[u8], f: impl FnOnce(&Item) -> R) -> Option<R> {
        let h = hash(key);
        let guard = self.collector.enter();
        let c = &self.counters[guard.slot()];
        let Some(item) = self.table.get(h, key, &guard) else {
            bump(&c.get_misses, 1);
            return None;
        };
        if item.expiry() != 0 && item.is_expired(self.clock.now()) {
            let target = item as *const Item;
            let pred = |it: &Item| std::ptr::eq(it, target);
            if let Some(old) = self.table.remove_if(h, key, pred, &guard) {
                self.live_bytes.fetch_sub(old.charged_bytes(), Ordering::Relaxed);
                bump(&c.expired_reclaimed, 1);
            }
            bump(&c.get_misses, 1);
            return None;
        }
        bump(&c.get_hits, 1);
        Some(f(item))
    }

    pub fn get(&self, key: &[u8]) -> Option<Hit> {
        self.get_with(key, |it| Hit {
            flags: it.flags(),
            value: it.value().to_vec(),
        })
    }

    /// Stores `value` under `key`, replacing any previous value. `expiry` is
    /// absolute cache time, 0 for never.
    pub fn set(&self, key: &[u8], flags: u32, expiry: u64, value: &[u8]) -> Result<(), CacheError> {
        if key.len() > MAX_KEY_LEN {
            return Err(CacheError::KeyTooLong);
        }
        if value.len() > self.config.max_value_bytes {
            return Err(CacheError::ValueTooLarge);
        }
        let charged = Item::charge_for(key.len(), value.len());
        if charged > self.config.max_bytes {
            return Err(CacheError::OutOfMemory);
        }
        self.reserve(charged)?;
        let item = Box::new(Item::new(key, flags, expiry, value));
        let guard = self.collector.enter();
        self.live_bytes.fetch_add(charged, Ordering::Relaxed);
        if let Put::Replaced(old) = self.table.put(hash(key), item, &guard) {
            self.live_bytes.fetch_sub(old.charged_bytes(), Ordering::Relaxed);
        }
        bump(&self.counters[guard.slot()].sets, 1);
        Ok(())
    }

    /// Removes `key`. Returns whether a live, unexpired value was removed.
    pub fn delete(&self, key: &[u8]) -> bool {
        let guard = self.collector.enter();
        let c = &self.counters[guard.slot()];
        match self.table.remove(hash(key), key, &guard) {
            Some(item) => {
                self.live_bytes.fetch_sub(item.charged_bytes(), Ordering::Relaxed);
                if item.expiry() != 0 && item.is_expired(self.clock.now()) {
                    bump(&c.expired_reclaimed, 1);
                    bump(&c.delete_misses, 1);
                    false
                } else {
                    bump(&c.deletes, 1);
                    true
                }
            }
            None => {
                bump(&c.delete_misses, 1);
                false
            }
        }
    }

    fn try_reserve(&self, bytes: u64) -> bool {
        let max = self.config.max_bytes;
        let mut cur = self.reserved.load(Ordering::Relaxed);
        loop {
            if cur + bytes > max {
                return false;
            }
            match self.reserved.compare_exchange_weak(
                cur,
                cur + bytes,
                Ordering::AcqRel,
                Ordering::Relaxed,
            ) {
                Ok(_) => return true,
                Err(actual) => cur = actual,
            }
        }
    }

    fn reserve(&self, bytes: u64) -> Result<(), CacheError> {
        if self.try_reserve(bytes) {
            return Ok(());
        }
        for round in 0..=PRESSURE_ROUNDS {
            if round > 0 {
                backoff(round);
            }
            // The hand only walks the current array; an expansion in flight
            // would make it skip migrated buckets.
            self.table.finish_expansion(&self.collector.enter());
            let bound = (self.config.clock_max as usize + 1) * self.table.bucket_count();
            self.reclaim_for(bytes);
            for _ in 0..bound {
                if self.try_reserve(bytes) {
                    return Ok(());
                }
                if self.pinned(bytes) {
                    // Evicting more would not help until the reader leaves.
                    break;
                }
                if self.evict_one_step() {
                    self.reclaim_for(bytes);
                }
            }
            if self.try_reserve(bytes) {
                return Ok(());
            }
        }
        Err(CacheError::OutOfMemory)
    }

    /// Whether retired bytes alone would cover the shortfall, meaning some
    /// thread inside an old critical section is all that stands in the way.
    fn pinned(&self, bytes: u64) -> bool {
        let short = (self.reserved.load(Ordering::Relaxed) + bytes)
            .saturating_sub(self.config.max_bytes);
        short > 0 && self.collector.retired_bytes() >= short
    }

    /// One hand step in its own critical section. Returns whether it evicted.
    fn evict_one_step(&self) -> bool {
        let guard = self.collector.enter();
        match self.table.evict_step(&guard) {
            Evict::Evicted(items, bytes) => {
                self.live_bytes.fetch_sub(bytes, Ordering::Relaxed);
                let c = &self.counters[guard.slot()];
                bump(&c.evictions, items.len() as u64);
                bump(&c.evicted_bytes, bytes);
                if let Some(l) = &self.listener {
                    for it in items {
                        l(it);
                    }
                }
                true
            }
            Evict::Decremented | Evict::Skipped => false,
        }
    }

    /// Asks the collector for the bytes `bytes` is short by. Must run outside
    /// a critical section, or the caller's own epoch would block progress.
    fn reclaim_for(&self, bytes: u64) {
        let reserved = self.reserved.load(Ordering::Relaxed);
        let short = (reserved + bytes).saturating_sub(self.config.max_bytes).max(1);
        let freed = self.collector.try_reclaim(short);
        if freed > 0 {
            self.reserved.fetch_sub(freed, Ordering::AcqRel);
        }
    }

    /// Frees every retired byte that can be freed now. With no thread inside
    /// a critical section this empties the collector.
    pub fn quiesce(&self) {
        for _ in 0..4 {
            if self.collector.retired_bytes() == 0 {
                break;
            }
            let freed = self.collector.try_reclaim(u64::MAX);
            if freed > 0 {
                self.reserved.fetch_sub(freed, Ordering::AcqRel);
            }
        }
    }

    /// Completes any in-progress table expansion.
    pub fn finish_expansion(&self) {
        self.table.finish_expansion(&self.collector.enter());
    }

    /// Bytes counted against the budget: live plus awaiting reclamation.
    pub fn reserved_bytes(&self) -> u64 {
        self.reserved.load(Ordering::Relaxed)
    }

    /// Sum of charged bytes over a traversal of every live item. Only
    /// meaningful while no writer runs.
    pub fn traverse_live_bytes(&self) -> (u64, u64) {
        let guard = self.collector.enter();
        let (mut n, mut bytes) = (0, 0);
        self.table.for_each_item(&guard, |it| {
            n += 1;
            bytes += it.charged_bytes();
        });
        (n, bytes)
    }

    pub fn stats(&self) -> Stats {
        let mut s = Stats::default();
        for c in self.counters.iter() {
            let r = |a: &AtomicU64| a.load(Ordering::Relaxed);
            s.get_hits += r(&c.get_hits);
            s.get_misses += r(&c.get_misses);
            s.sets += r(&c.sets);
            s.deletes += r(&c.deletes);
            s.delete_misses += r(&c.delete_misses);
            s.evictions += r(&c.evictions);
            s.evicted_bytes += r(&c.evicted_bytes);
            s.expired_reclaimed += r(&c.expired_reclaimed);
        }
        s.bytes_in_use = self.live_bytes.load(Ordering::Relaxed);
        s.retired_bytes = self.collector.retired_bytes();
        s.max_bytes = self.config.max_bytes;
        s.item_count = self.table.item_count() as u64;
        s.bucket_count = self.table.bucket_count() as u64;
        s.epoch_advances = self.collector.advances();
        s.expansions = self.table.info(&self.collector.enter()).expansions;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::ManualClock;

    fn small(max_bytes: u64, buckets: usize) -> Cache {
        Cache::new(CacheConfig {
            max_bytes,
            initial_buckets: buckets,
            thread_slots: 8,
            ..CacheConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn set_then_get() {
        let c = small(1 << 20, 16);
        c.set(b"k", 7, 0, b"hello").unwrap();
        assert_eq!(c.get(b"k"), Some(Hit { flags: 7, value: b"hello".to_vec() }));
        let s = c.stats();
        assert_eq!((s.get_hits, s.sets, s.item_count), (1, 1, 1));
        assert_eq!(s.bytes_in_use, 64 + 1 + 5);
    }

    #[test]
    fn miss_counts() {
        let c = small(1 << 20, 16);
        assert_eq!(c.get(b"nope"), None);
        assert_eq!(c.stats().get_misses, 1);
    }

    #[test]
    fn overwrite_replaces_charge() {
        let c = small(1 << 20, 16);
        c.set(b"k", 0, 0, b"aaaa").unwrap();
        c.set(b"k", 0, 0, b"bb").unwrap();
        assert_eq!(c.get(b"k").unwrap().value, b"bb");
        assert_eq!(c.stats().bytes_in_use, 64 + 1 + 2);
        assert_eq!(c.stats().item_count, 1);
    }

    #[test]
    fn delete_semantics() {
        let c = small(1 << 20, 16);
        assert!(!c.delete(b"k"));
        c.set(b"k", 0, 0, b"v").unwrap();
        assert!(c.delete(b"k"));
        assert_eq!(c.get(b"k"), None);
        let s = c.stats();
        assert_eq!((s.deletes, s.delete_misses, s.bytes_in_use), (1, 1, 0));
    }

    #[test]
    fn rejects_oversized_inputs() {
        let c = small(1 << 20, 16);
        assert_eq!(c.set(&[b'a'; 251], 0, 0, b""), Err(CacheError::KeyTooLong));
        assert!(c.set(&[b'a'; 250], 0, 0, b"").is_ok());
        let big = vec![0u8; (1 << 20) + 1];
        assert_eq!(c.set(b"k", 0, 0, &big), Err(CacheError::ValueTooLarge));
    }

    #[test]
    fn item_larger_than_budget_is_out_of_memory() {
        let c = small(1_000, 16);
        assert_eq!(c.set(b"k", 0, 0, &[0u8; 1_000]), Err(CacheError::OutOfMemory));
        assert_eq!(c.stats().item_count, 0);
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut CacheConfig)| {
            let mut cfg = CacheConfig::default();
            f(&mut cfg);
            Cache::new(cfg).is_err()
        };
        assert!(bad(|c| c.initial_buckets = 3));
        assert!(bad(|c| c.clock_max = 0));
        assert!(bad(|c| c.max_bytes = 10));
        assert!(!bad(|_| ()));
    }

    #[test]
    fn expired_get_is_a_miss_and_reclaims() {
        let clock = Arc::new(ManualClock::new());
        let c = Cache::with_clock(CacheConfig::default(), clock.clone()).unwrap();
        let t = clock.now() + 10;
        c.set(b"k", 0, t, b"v").unwrap();
        assert!(c.get(b"k").is_some());
        clock.advance(10);
        assert!(c.get(b"k").is_none());
        let s = c.stats();
        assert_eq!((s.expired_reclaimed, s.item_count, s.bytes_in_use), (1, 0, 0));
    }

    #[test]
    fn pressure_evicts_the_cold_bucket() {
        // Budget for exactly two 100-byte items.
        let per = Item::charge_for(2, 100 - 64 - 2);
        assert_eq!(per, 100);
        let c = small(2 * per, 2);
        let v = vec![1u8; 34];
        let keys: Vec<Vec<u8>> = (0..3).map(|i| format!("k{i}").into_bytes()).collect();
        c.set(&keys[0], 0, 0, &v).unwrap();
        c.set(&keys[1], 0, 0, &v).unwrap();
        c.set(&keys[2], 0, 0, &v).unwrap();
        let s = c.stats();
        assert!(s.evictions >= 1);
        assert!(s.bytes_in_use <= 2 * per);
        assert!(c.get(&keys[2]).is_some());
        assert!(c.reserved_bytes() <= 2 * per);
    }

    #[test]
    fn listener_sees_evicted_keys() {
        let seen = Arc::new(AtomicU64::new(0));
        let sink = seen.clone();
        let c = small(500, 4).with_eviction_listener(Box::new(move |it| {
            assert!(it.key().starts_with(b"key"));
            sink.fetch_add(1, Ordering::Relaxed);
        }));
        for i in 0..50 {
            c.set(format!("key{i}").as_bytes(), 0, 0, b"0123456789").unwrap();
        }
        let evicted = seen.load(Ordering::Relaxed);
        assert_eq!(evicted, c.stats().evictions);
        assert!(evicted > 0);
    }

    #[test]
    fn quiesce_drains_retired() {
        let c = small(1 << 20, 16);
        for i in 0..100 {
            c.set(b"same", 0, 0, format!("{i}").as_bytes()).unwrap();
        }
        assert!(c.stats().retired_bytes > 0);
        c.quiesce();
        assert_eq!(c.stats().retired_bytes, 0);
        assert_eq!(c.reserved_bytes(), c.stats().bytes_in_use);
    }
}
