//! Single-threaded reference models used as oracles.
//!
//! [`LruSim`] is an exact LRU cache over item counts. [`BucketClockSim`]
//! replays the cache's own policy step for step: the same hash and bucket
//! choice, the same hand, counters, expansion schedule, byte budget and
//! reclamation epochs. Driven from one thread, the real cache must produce
//! the same hits, misses and evictions, in the same order.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use fleec_core::{bucket_of, hash, Cache, CacheConfig, CacheError, Item, MAX_KEY_LEN};

/// Exact LRU with an item-count capacity.
#[derive(Debug)]
pub struct LruSim {
    capacity: usize,
    stamps: HashMap<u64, u64>,
    order: BTreeMap<u64, u64>,
    tick: u64,
}

impl LruSim {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        LruSim {
            capacity,
            stamps: HashMap::with_capacity(capacity + 1),
            order: BTreeMap::new(),
            tick: 0,
        }
    }

    /// Looks `key` up, inserting it on a miss. Returns whether it hit.
    pub fn access(&mut self, key: u64) -> bool {
        self.tick += 1;
        let hit = match self.stamps.insert(key, self.tick) {
            Some(old) => {
                self.order.remove(&old);
                true
            }
            None => false,
        };
        self.order.insert(self.tick, key);
        if self.stamps.len() > self.capacity {
            let (_, victim) = self.order.pop_first().unwrap();
            self.stamps.remove(&victim);
        }
        hit
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }
}

/// One operation of a replay trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceOp {
    Get(Vec<u8>),
    Set(Vec<u8>, usize),
    Delete(Vec<u8>),
}

/// Observable result of a [`TraceOp`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Hit,
    Miss,
    Stored,
    Failed(CacheError),
    Deleted(bool),
}

#[derive(Debug, Clone)]
struct SimItem {
    hash: u64,
    key: Vec<u8>,
    charged: u64,
}

#[derive(Debug, Clone, Default)]
struct SimBucket {
    items: Vec<SimItem>,
    clock: u8,
}

impl SimBucket {
    fn position(&self, hash: u64, key: &[u8]) -> Result<usize, usize> {
        self.items
            .binary_search_by(|it| it.hash.cmp(&hash).then_with(|| it.key.as_slice().cmp(key)))
    }

    fn insert_sorted(&mut self, it: SimItem) {
        let pos = self.position(it.hash, &it.key).unwrap_err();
        self.items.insert(pos, it);
    }
}

#[derive(Debug)]
struct SimExpansion {
    target: Vec<SimBucket>,
    migrated: Vec<bool>,
    next: usize,
    done: usize,
}

#[derive(Debug, Clone, Copy)]
enum Loc {
    Current(usize),
    Target(usize),
}

/// Summary counters of a simulation, mirroring the cache's stats.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub get_hits: u64,
    pub get_misses: u64,
    pub sets: u64,
    pub deletes: u64,
    pub evictions: u64,
    pub item_count: u64,
    pub bytes_in_use: u64,
    pub epoch_advances: u64,
    pub expansions: u64,
    pub bucket_count: u64,
}

/// Deterministic model of the cache's bucket-CLOCK policy.
#[derive(Debug)]
pub struct BucketClockSim {
    cfg: CacheConfig,
    arr: Vec<SimBucket>,
    exp: Option<SimExpansion>,
    item_count: usize,
    hand: u64,
    reserved: u64,
    live: u64,
    epoch: u64,
    retired: Vec<(u64, u64)>,
    retired_bytes: u64,
    evicted: Vec<Vec<u8>>,
    stats: SimStats,
}

/// Rounds of the pressure loop, matching the cache.
const PRESSURE_ROUNDS: u32 = 16;

impl BucketClockSim {
    pub fn new(cfg: CacheConfig) -> Self {
        cfg.validate().expect("invalid cache config");
        BucketClockSim {
            arr: vec![SimBucket::default(); cfg.initial_buckets],
            cfg,
            exp: None,
            item_count: 0,
            hand: 0,
            reserved: 0,
            live: 0,
            epoch: 0,
            retired: Vec::new(),
            retired_bytes: 0,
            evicted: Vec::new(),
            stats: SimStats::default(),
        }
    }

    pub fn stats(&self) -> SimStats {
        SimStats {
            item_count: self.item_count as u64,
            bytes_in_use: self.live,
            bucket_count: self.arr.len() as u64,
            ..self.stats.clone()
        }
    }

    /// Keys evicted since the last call, in eviction order.
    pub fn take_evicted(&mut self) -> Vec<Vec<u8>> {
        std::mem::take(&mut self.evicted)
    }

    pub fn apply(&mut self, op: &TraceOp) -> Outcome {
        match op {
            TraceOp::Get(k) => {
                if self.get(k) {
                    Outcome::Hit
                } else {
                    Outcome::Miss
                }
            }
            TraceOp::Set(k, n) => match self.set(k, *n) {
                Ok(()) => Outcome::Stored,
                Err(e) => Outcome::Failed(e),
            },
            TraceOp::Delete(k) => Outcome::Deleted(self.delete(k)),
        }
    }

    pub fn get(&mut self, key: &[u8]) -> bool {
        let h = hash(key);
        let k = self.cfg.clock_max;
        let hit = match self.route(h) {
            loc @ (Loc::Current(_) | Loc::Target(_)) => {
                let b = self.bucket_mut(loc);
                let hit = b.position(h, key).is_ok();
                if hit {
                    b.clock = k;
                }
                hit
            }
        };
        if hit {
            self.stats.get_hits += 1;
        } else {
            self.stats.get_misses += 1;
        }
        hit
    }

    pub fn set(&mut self, key: &[u8], value_len: usize) -> Result<(), CacheError> {
        if key.len() > MAX_KEY_LEN {
            return Err(CacheError::KeyTooLong);
        }
        if value_len > self.cfg.max_value_bytes {
            return Err(CacheError::ValueTooLarge);
        }
        let charged = Item::charge_for(key.len(), value_len);
        if charged > self.cfg.max_bytes {
            return Err(CacheError::OutOfMemory);
        }
        self.reserve(charged)?;
        self.live += charged;
        let h = hash(key);
        self.drive_expansion();
        let loc = self.route(h);
        let k = self.cfg.clock_max;
        let b = self.bucket_mut(loc);
        let replaced = match b.position(h, key) {
            Ok(i) => Some(std::mem::replace(
                &mut b.items[i],
                SimItem {
                    hash: h,
                    key: key.to_vec(),
                    charged,
                },
            )),
            Err(i) => {
                b.items.insert(
                    i,
                    SimItem {
                        hash: h,
                        key: key.to_vec(),
                        charged,
                    },
                );
                None
            }
        };
        b.clock = k;
        match replaced {
            Some(old) => {
                self.retire(old.charged);
                self.live -= old.charged;
            }
            None => {
                self.item_count += 1;
                self.maybe_expand(self.item_count);
            }
        }
        self.stats.sets += 1;
        Ok(())
    }

    pub fn delete(&mut self, key: &[u8]) -> bool {
        let h = hash(key);
        let loc = self.route(h);
        let b = self.bucket_mut(loc);
        match b.position(h, key) {
            Ok(i) => {
                let it = b.items.remove(i);
                self.item_count -= 1;
                self.retire(it.charged);
                self.live -= it.charged;
                self.stats.deletes += 1;
                true
            }
            Err(_) => false,
        }
    }

    fn bucket_mut(&mut self, loc: Loc) -> &mut SimBucket {
        match loc {
            Loc::Current(i) => &mut self.arr[i],
            Loc::Target(i) => &mut self.exp.as_mut().unwrap().target[i],
        }
    }

    /// Where the table would operate on `hash`, migrating first if needed.
    fn route(&mut self, h: u64) -> Loc {
        if self.exp.is_none() {
            return Loc::Current(bucket_of(h, self.arr.len()));
        }
        let generation = self.stats.expansions;
        self.ensure_migrated(bucket_of(h, self.arr.len()));
        if self.stats.expansions != generation {
            // That migration finished the expansion; its target is now the
            // current array, even if a further expansion just started.
            Loc::Current(bucket_of(h, self.arr.len()))
        } else {
            let target = &self.exp.as_ref().unwrap().target;
            Loc::Target(bucket_of(h, target.len()))
        }
    }

    fn ensure_migrated(&mut self, i: usize) {
        if !self.exp.as_ref().unwrap().migrated[i] {
            self.migrate(i);
        }
    }

    fn migrate(&mut self, i: usize) {
        let len = self.arr.len();
        let exp = self.exp.as_mut().unwrap();
        let clock = self.arr[i].clock;
        exp.target[i].clock = clock;
        exp.target[i + len].clock = clock;
        for it in std::mem::take(&mut self.arr[i].items) {
            let j = bucket_of(it.hash, 2 * len);
            exp.target[j].insert_sorted(it);
        }
        exp.migrated[i] = true;
        exp.done += 1;
        if exp.done == len {
            let exp = self.exp.take().unwrap();
            self.arr = exp.target;
            self.stats.expansions += 1;
            self.maybe_expand(self.item_count);
        }
    }

    fn maybe_expand(&mut self, count: usize) {
        let len = self.arr.len();
        if count * 2 > len * 3 && self.exp.is_none() {
            self.exp = Some(SimExpansion {
                target: vec![SimBucket::default(); 2 * len],
                migrated: vec![false; len],
                next: 0,
                done: 0,
            });
        }
    }

    fn drive_expansion(&mut self) {
        if self.cfg.migrate_batch == 0 || self.exp.is_none() {
            return;
        }
        let generation = self.stats.expansions;
        let len = self.arr.len();
        for _ in 0..self.cfg.migrate_batch {
            let exp = self.exp.as_mut().unwrap();
            let j = exp.next;
            exp.next += 1;
            if j >= len {
                break;
            }
            if !exp.migrated[j] {
                self.migrate(j);
                if self.stats.expansions != generation {
                    break;
                }
            }
        }
    }

    fn finish_expansion(&mut self) {
        while self.exp.is_some() {
            let generation = self.stats.expansions;
            for i in 0..self.arr.len() {
                if self.stats.expansions != generation {
                    break;
                }
                self.ensure_migrated(i);
            }
        }
    }

    fn evict_step(&mut self) -> Option<u64> {
        let pos = self.hand;
        self.hand += 1;
        let i = (pos as usize) & (self.arr.len() - 1);
        if let Some(exp) = &self.exp {
            if exp.migrated[i] {
                return None;
            }
        }
        let b = &mut self.arr[i];
        if b.clock > 0 {
            b.clock -= 1;
            return None;
        }
        let items = std::mem::take(&mut b.items);
        if items.is_empty() {
            return None;
        }
        let mut bytes = 0;
        for it in items {
            self.item_count -= 1;
            self.retire(it.charged);
            bytes += it.charged;
            self.stats.evictions += 1;
            self.evicted.push(it.key);
        }
        Some(bytes)
    }

    fn try_reserve(&mut self, bytes: u64) -> bool {
        if self.reserved + bytes > self.cfg.max_bytes {
            return false;
        }
        self.reserved += bytes;
        true
    }

    fn reserve(&mut self, bytes: u64) -> Result<(), CacheError> {
        if self.try_reserve(bytes) {
            return Ok(());
        }
        for _ in 0..=PRESSURE_ROUNDS {
            self.finish_expansion();
            let bound = (self.cfg.clock_max as usize + 1) * self.arr.len();
            self.reclaim_for(bytes);
            for _ in 0..bound {
                if self.try_reserve(bytes) {
                    return Ok(());
                }
                if self.pinned(bytes) {
                    break;
                }
                if let Some(evicted) = self.evict_step() {
                    self.live -= evicted;
                    self.reclaim_for(bytes);
                }
            }
            if self.try_reserve(bytes) {
                return Ok(());
            }
        }
        Err(CacheError::OutOfMemory)
    }

    fn shortfall(&self, bytes: u64) -> u64 {
        (self.reserved + bytes).saturating_sub(self.cfg.max_bytes)
    }

    fn pinned(&self, bytes: u64) -> bool {
        let short = self.shortfall(bytes);
        short > 0 && self.retired_bytes >= short
    }

    fn retire(&mut self, bytes: u64) {
        self.retired.push((self.epoch, bytes));
        self.retired_bytes += bytes;
    }

    fn free_safe(&mut self) -> u64 {
        if self.epoch < 2 {
            return 0;
        }
        let epoch = self.epoch;
        let mut freed = 0;
        self.retired.retain(|&(tag, bytes)| {
            let safe = tag + 2 <= epoch;
            if safe {
                freed += bytes;
            }
            !safe
        });
        self.retired_bytes -= freed;
        freed
    }

    fn try_reclaim(&mut self, target: u64) -> u64 {
        if self.retired_bytes == 0 {
            return 0;
        }
        let mut freed = self.free_safe();
        let mut advanced = 0;
        while freed < target && advanced < 2 {
            self.epoch += 1;
            self.stats.epoch_advances += 1;
            advanced += 1;
            freed += self.free_safe();
        }
        freed
    }

    fn reclaim_for(&mut self, bytes: u64) {
        let short = self.shortfall(bytes).max(1);
        let freed = self.try_reclaim(short);
        self.reserved -= freed;
    }
}

/// Eviction policy for [`replay_hit_ratio`].
#[derive(Debug, Clone, Copy)]
pub enum Policy {
    StrictLru,
    BucketClock {
        clock_max: u8,
        initial_buckets: usize,
    },
}

/// Fixed-width key for a rank, so every item of a replay has the same charge.
pub fn key_for(rank: u64) -> Vec<u8> {
    format!("key:{rank:010}").into_bytes()
}

/// Hit ratio of a demand-filled cache: every access is a get, and a miss is
/// followed by a set of the same key.
pub fn replay_hit_ratio(trace: &[u64], policy: Policy, capacity_items: usize, value_size: usize) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    let hits = match policy {
        Policy::StrictLru => {
            let mut lru = LruSim::new(capacity_items);
            trace.iter().filter(|&&k| lru.access(k)).count()
        }
        Policy::BucketClock {
            clock_max,
            initial_buckets,
        } => {
            let charge = Item::charge_for(key_for(0).len(), value_size);
            let mut sim = BucketClockSim::new(CacheConfig {
                max_bytes: charge * capacity_items as u64,
                clock_max,
                initial_buckets,
                ..CacheConfig::default()
            });
            let mut hits = 0;
            for &rank in trace {
                let key = key_for(rank);
                if sim.get(&key) {
                    hits += 1;
                } else {
                    sim.set(&key, value_size).expect("item fits the budget");
                }
            }
            hits
        }
    };
    hits as f64 / trace.len() as f64
}

/// First point where the cache and the simulator disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub step: usize,
    pub op: TraceOp,
    pub detail: String,
}

/// Replays `ops` on a real cache (from this thread only) and on the
/// simulator, comparing every outcome and every eviction.
pub fn check_equivalence(cfg: &CacheConfig, ops: &[TraceOp]) -> Result<SimStats, Divergence> {
    let evicted = Arc::new(Mutex::new(Vec::new()));
    let sink = evicted.clone();
    let cache = Cache::new(cfg.clone())
        .expect("invalid cache config")
        .with_eviction_listener(Box::new(move |it| sink.lock().unwrap().push(it.key().to_vec())));
    let mut sim = BucketClockSim::new(cfg.clone());
    let mut value = Vec::new();
    for (step, op) in ops.iter().enumerate() {
        let real = match op {
            TraceOp::Get(k) => {
                if cache.get_with(k, |_| ()).is_some() {
                    Outcome::Hit
                } else {
                    Outcome::Miss
                }
            }
            TraceOp::Set(k, n) => {
                value.resize(*n, b'v');
                match cache.set(k, 0, 0, &value) {
                    Ok(()) => Outcome::Stored,
                    Err(e) => Outcome::Failed(e),
                }
            }
            TraceOp::Delete(k) => Outcome::Deleted(cache.delete(k)),
        };
        let model = sim.apply(op);
        let fail = |detail: String| Divergence {
            step,
            op: op.clone(),
            detail,
        };
        if real != model {
            return Err(fail(format!("cache {real:?}, simulator {model:?}")));
        }
        let real_ev = std::mem::take(&mut *evicted.lock().unwrap());
        let model_ev = sim.take_evicted();
        if real_ev != model_ev {
            return Err(fail(format!("evictions differ: cache {real_ev:?}, simulator {model_ev:?}")));
        }
    }
    let (s, m) = (cache.stats(), sim.stats());
    let real = SimStats {
        get_hits: s.get_hits,
        get_misses: s.get_misses,
        sets: s.sets,
        deletes: s.deletes,
        evictions: s.evictions,
        item_count: s.item_count,
        bytes_in_use: s.bytes_in_use,
        epoch_advances: s.epoch_advances,
        expansions: s.expansions,
        bucket_count: s.bucket_count,
    };
    if real != m {
        return Err(Divergence {
            step: ops.len(),
            op: TraceOp::Get(Vec::new()),
            detail: format!("final stats differ: cache {real:?}, simulator {m:?}"),
        });
    }
    Ok(m)
}
