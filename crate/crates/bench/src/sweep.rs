//! Batch experiments over the oracles: hit-ratio sweeps and randomized
//! equivalence checks. With the `parallel` feature they run on rayon's
//! pool; without it, serially. Results are identical either way.

use fleec_core::CacheConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::sim::{check_equivalence, replay_hit_ratio, Divergence, Policy, TraceOp};
use crate::zipf::Zipf;

/// A zipf-ranked key trace.
pub fn zipf_trace(n: u64, alpha: f64, len: usize, seed: u64) -> Vec<u64> {
    let z = Zipf::new(n, alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| z.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitRatioPoint {
    pub alpha: f64,
    pub lru: f64,
    pub clock: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepSpec {
    pub keyspace: u64,
    pub capacity_items: usize,
    pub ops: usize,
    pub value_size: usize,
    pub clock_max: u8,
    pub initial_buckets: usize,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            keyspace: 100_000,
            capacity_items: 10_000,
            ops: 1_000_000,
            value_size: 100,
            clock_max: 3,
            initial_buckets: 1024,
            seed: 7,
        }
    }
}

fn sweep_point(alpha: f64, spec: &SweepSpec, clock: bool) -> f64 {
    let trace = zipf_trace(spec.keyspace, alpha, spec.ops, spec.seed);
    let policy = if clock {
        Policy::BucketClock {
            clock_max: spec.clock_max,
            initial_buckets: spec.initial_buckets,
        }
    } else {
        Policy::StrictLru
    };
    replay_hit_ratio(&trace, policy, spec.capacity_items, spec.value_size)
}

fn assemble(alphas: &[f64], ratios: Vec<f64>) -> Vec<HitRatioPoint> {
    alphas
        .iter()
        .zip(ratios.chunks(2))
        .map(|(&alpha, r)| HitRatioPoint {
            alpha,
            lru: r[0],
            clock: r[1],
        })
        .collect()
}

/// Strict LRU against bucket CLOCK for each alpha, on the same trace.
pub fn hit_ratio_sweep(alphas: &[f64], spec: &SweepSpec) -> Vec<HitRatioPoint> {
    #[cfg(feature = "parallel")]
    {
        hit_ratio_sweep_par(alphas, spec)
    }
    #[cfg(not(feature = "parallel"))]
    {
        hit_ratio_sweep_seq(alphas, spec)
    }
}

pub fn hit_ratio_sweep_seq(alphas: &[f64], spec: &SweepSpec) -> Vec<HitRatioPoint> {
    let jobs: Vec<(f64, bool)> = alphas.iter().flat_map(|&a| [(a, false), (a, true)]).collect();
    let ratios = jobs.iter().map(|&(a, c)| sweep_point(a, spec, c)).collect();
    assemble(alphas, ratios)
}

#[cfg(feature = "parallel")]
pub fn hit_ratio_sweep_par(alphas: &[f64], spec: &SweepSpec) -> Vec<HitRatioPoint> {
    let jobs: Vec<(f64, bool)> = alphas.iter().flat_map(|&a| [(a, false), (a, true)]).collect();
    let ratios = jobs.par_iter().map(|&(a, c)| sweep_point(a, spec, c)).collect();
    assemble(alphas, ratios)
}

/// A small random configuration and trace, sized so that every code path
/// of the cache shows up: growth from tiny tables, eviction, replacement,
/// deletes, and oversize values.
pub fn random_case(seed: u64) -> (CacheConfig, Vec<TraceOp>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = CacheConfig {
        max_bytes: rng.gen_range(300..6_000),
        clock_max: rng.gen_range(1..=3),
        initial_buckets: 1 << rng.gen_range(0..4),
        migrate_batch: rng.gen_range(0..=3),
        thread_slots: 4,
        max_value_bytes: 160,
    };
    let keys = rng.gen_range(4..64u32);
    let len = rng.gen_range(50..400);
    let get_p = rng.gen_range(0.2..0.8);
    let ops = (0..len)
        .map(|_| {
            let key = format!("k{}", rng.gen_range(0..keys)).into_bytes();
            let roll: f64 = rng.gen();
            if roll < get_p {
                TraceOp::Get(key)
            } else if roll < 0.93 {
                TraceOp::Set(key, rng.gen_range(0..=180))
            } else {
                TraceOp::Delete(key)
            }
        })
        .collect();
    (cfg, ops)
}

fn check_case(seed: u64) -> Result<(), (u64, Divergence)> {
    let (cfg, ops) = random_case(seed);
    check_equivalence(&cfg, &ops).map(|_| ()).map_err(|d| (seed, d))
}

/// Checks `count` random cases starting at `first_seed`. On failure returns
/// the lowest failing seed.
pub fn equivalence_batch(first_seed: u64, count: u64) -> Result<u64, (u64, Divergence)> {
    let seeds = first_seed..first_seed + count;
    #[cfg(feature = "parallel")]
    let mut failures: Vec<_> = seeds.into_par_iter().filter_map(|s| check_case(s).err()).collect();
    #[cfg(not(feature = "parallel"))]
    let mut failures: Vec<_> = seeds.filter_map(|s| check_case(s).err()).collect();
    failures.sort_by_key(|f| f.0);
    match failures.into_iter().next() {
        Some(f) => Err(f),
        None => Ok(count),
    }
}
