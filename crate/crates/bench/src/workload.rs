//! Closed-loop zipfian workloads against an in-process cache.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use fleec_core::{Cache, Stats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineCache;
use crate::sim::key_for;
use crate::zipf::Zipf;

/// Operations sampled for latency, one in this many.
pub const LATENCY_SAMPLE_EVERY: u64 = 64;

/// Latency samples kept per worker.
const RESERVOIR: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub alpha: f64,
    pub keyspace: u64,
    pub read_ratio: f64,
    pub value_size: usize,
    pub threads: usize,
    /// Total operations, split across threads.
    pub ops: u64,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            alpha: 0.99,
            keyspace: 100_000,
            read_ratio: 0.99,
            value_size: 100,
            threads: 1,
            ops: 1_000_000,
            seed: 42,
        }
    }
}

impl WorkloadSpec {
    /// Operations run by worker `rank`.
    pub fn ops_for(&self, rank: usize) -> u64 {
        let t = self.threads as u64;
        self.ops / t + u64::from((rank as u64) < self.ops % t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub system: String,
    pub alpha: f64,
    pub threads: usize,
    pub read_ratio: f64,
    pub keyspace: u64,
    pub value_size: usize,
    pub ops: u64,
    pub elapsed_s: f64,
    /// Operations per second.
    pub throughput: f64,
    /// Latencies in nanoseconds.
    pub p50: u64,
    pub p95: u64,
    pub p99: u64,
    pub hit_ratio: f64,
    pub evictions: u64,
    pub epoch_advances: u64,
    pub expansions: u64,
}

/// Anything the harness can drive.
pub trait CacheTarget: Sync {
    fn name(&self) -> &'static str;
    fn get(&self, key: &[u8]) -> bool;
    fn set(&self, key: &[u8], value: &[u8]);
    fn stats(&self) -> Stats;
}

impl CacheTarget for Cache {
    fn name(&self) -> &'static str {
        "fleec"
    }

    fn get(&self, key: &[u8]) -> bool {
        self.get_with(key, |it| it.value().len()).is_some()
    }

    fn set(&self, key: &[u8], value: &[u8]) {
        let _ = Cache::set(self, key, 0, 0, value);
    }

    fn stats(&self) -> Stats {
        Cache::stats(self)
    }
}

impl CacheTarget for BaselineCache {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn get(&self, key: &[u8]) -> bool {
        self.get_with(key, |it| it.value().len()).is_some()
    }

    fn set(&self, key: &[u8], value: &[u8]) {
        let _ = BaselineCache::set(self, key, 0, 0, value);
    }

    fn stats(&self) -> Stats {
        BaselineCache::stats(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Get(u64),
    Set(u64),
}

/// The operation sequence of one worker. Depends only on the seed, the
/// worker's rank and the workload's distribution, never on the thread count.
pub struct OpStream<'z> {
    rng: ChaCha8Rng,
    zipf: &'z Zipf,
    read_ratio: f64,
}

impl<'z> OpStream<'z> {
    pub fn new(seed: u64, rank: usize, zipf: &'z Zipf, read_ratio: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rank as u64 + 1);
        OpStream {
            rng,
            zipf,
            read_ratio,
        }
    }
}

impl Iterator for OpStream<'_> {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        let read = self.rng.gen_bool(self.read_ratio);
        let rank = self.zipf.sample(&mut self.rng);
        Some(if read { Op::Get(rank) } else { Op::Set(rank) })
    }
}

/// Inserts ranks in order until the cache first evicts or the keyspace runs
/// out. Returns how many keys went in.
pub fn prewarm(target: &dyn CacheTarget, keyspace: u64, value_size: usize) -> u64 {
    let value = vec![b'v'; value_size];
    for rank in 1..=keyspace {
        target.set(&key_for(rank), &value);
        if target.stats().evictions > 0 {
            return rank;
        }
    }
    keyspace
}

/// Fixed-size uniform sample of a stream (Algorithm R).
struct Reservoir {
    rng: ChaCha8Rng,
    seen: u64,
    samples: Vec<u64>,
}

impl Reservoir {
    fn new(seed: u64) -> Self {
        Reservoir {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seen: 0,
            samples: Vec::with_capacity(RESERVOIR),
        }
    }

    fn push(&mut self, v: u64) {
        self.seen += 1;
        if self.samples.len() < RESERVOIR {
            self.samples.push(v);
        } else {
            let j = self.rng.gen_range(0..self.seen);
            if (j as usize) < RESERVOIR {
                self.samples[j as usize] = v;
            }
        }
    }
}

fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let idx = ((sorted.len() as f64 * p).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

fn worker(target: &dyn CacheTarget, spec: &WorkloadSpec, zipf: &Zipf, rank: usize, go: &AtomicBool) -> Vec<u64> {
    let value = vec![b'w'; spec.value_size];
    let mut reservoir = Reservoir::new(spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(rank as u64 + 1)));
    let ops = OpStream::new(spec.seed, rank, zipf, spec.read_ratio).take(spec.ops_for(rank) as usize);
    while !go.load(Ordering::Acquire) {
        std::hint::spin_loop();
    }
    for (i, op) in ops.enumerate() {
        let sampled = i as u64 % LATENCY_SAMPLE_EVERY == 0;
        let start = sampled.then(Instant::now);
        match op {
            Op::Get(r) => {
                std::hint::black_box(target.get(&key_for(r)));
            }
            Op::Set(r) => target.set(&key_for(r), &value),
        }
        if let Some(t) = start {
            reservoir.push(t.elapsed().as_nanos() as u64);
        }
    }
    reservoir.samples
}

/// Runs `spec` against `target` (expected to be prewarmed) and reports
/// counters as deltas over the run.
pub fn run_workload(target: &dyn CacheTarget, spec: &WorkloadSpec) -> RunMetrics {
    assert!(spec.threads >= 1);
    assert!((0.0..=1.0).contains(&spec.read_ratio));
    let zipf = Zipf::new(spec.keyspace, spec.alpha);
    let before = target.stats();
    let go = AtomicBool::new(false);
    let (elapsed, mut latencies) = std::thread::scope(|s| {
        let handles: Vec<_> = (0..spec.threads)
            .map(|rank| {
                let (zipf, go) = (&zipf, &go);
                s.spawn(move || worker(target, spec, zipf, rank, go))
            })
            .collect();
        let start = Instant::now();
        go.store(true, Ordering::Release);
        let lat: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        (start.elapsed(), lat)
    });
    let after = target.stats();
    latencies.sort_unstable();
    let hits = after.get_hits - before.get_hits;
    let misses = after.get_misses - before.get_misses;
    let secs = elapsed.max(Duration::from_nanos(1)).as_secs_f64();
    RunMetrics {
        system: target.name().to_string(),
        alpha: spec.alpha,
        threads: spec.threads,
        read_ratio: spec.read_ratio,
        keyspace: spec.keyspace,
        value_size: spec.value_size,
        ops: spec.ops,
        elapsed_s: secs,
        throughput: spec.ops as f64 / secs,
        p50: percentile(&latencies, 0.50),
        p95: percentile(&latencies, 0.95),
        p99: percentile(&latencies, 0.99),
        hit_ratio: if hits + misses == 0 {
            0.0
        } else {
            hits as f64 / (hits + misses) as f64
        },
        evictions: after.evictions - before.evictions,
        epoch_advances: after.epoch_advances - before.epoch_advances,
        expansions: after.expansions - before.expansions,
    }
}
