use fleec_bench::workload::{Op, OpStream};
use fleec_bench::{key_for, prewarm, run_workload, BaselineCache, CacheTarget, WorkloadSpec, Zipf};
use fleec_core::{Cache, CacheConfig};

fn roomy() -> CacheConfig {
    CacheConfig {
        max_bytes: 64 << 20,
        ..CacheConfig::default()
    }
}

#[test]
fn all_resident_reads_always_hit() {
    let cache = Cache::new(roomy()).unwrap();
    let spec = WorkloadSpec {
        keyspace: 5_000,
        read_ratio: 1.0,
        threads: 4,
        ops: 100_000,
        ..WorkloadSpec::default()
    };
    assert_eq!(prewarm(&cache, spec.keyspace, spec.value_size), spec.keyspace);
    let m = run_workload(&cache, &spec);
    assert_eq!(m.hit_ratio, 1.0);
    assert_eq!(m.evictions, 0);
    assert_eq!(m.system, "fleec");
    assert!(m.p50 <= m.p95 && m.p95 <= m.p99);
}

#[test]
fn key_sequence_depends_on_rank_not_thread_count() {
    let z = Zipf::new(1000, 1.2);
    let one: Vec<Op> = OpStream::new(5, 0, &z, 0.9).take(1000).collect();
    let again: Vec<Op> = OpStream::new(5, 0, &z, 0.9).take(1000).collect();
    assert_eq!(one, again);
    // Rank 0 of an 8-thread run draws the same prefix as a 1-thread run.
    let spec8 = WorkloadSpec {
        threads: 8,
        ops: 8000,
        ..WorkloadSpec::default()
    };
    assert_eq!(spec8.ops_for(0), 1000);
}

#[test]
fn baseline_matches_cache_single_threaded() {
    let cfg = CacheConfig {
        max_bytes: 300_000,
        initial_buckets: 64,
        ..CacheConfig::default()
    };
    let spec = WorkloadSpec {
        alpha: 1.2,
        keyspace: 10_000,
        read_ratio: 0.9,
        threads: 1,
        ops: 50_000,
        ..WorkloadSpec::default()
    };
    let cache = Cache::new(cfg.clone()).unwrap();
    let base = BaselineCache::new(cfg).unwrap();
    let a = prewarm(&cache, spec.keyspace, spec.value_size);
    let b = prewarm(&base, spec.keyspace, spec.value_size);
    assert_eq!(a, b);
    let ma = run_workload(&cache, &spec);
    let mb = run_workload(&base, &spec);
    assert_eq!(CacheTarget::stats(&cache), CacheTarget::stats(&base));
    assert_eq!(ma.hit_ratio, mb.hit_ratio);
    assert_eq!(ma.evictions, mb.evictions);
    assert!(ma.evictions > 0);
}

#[test]
fn prewarm_stops_at_first_eviction() {
    let cache = Cache::new(CacheConfig {
        max_bytes: 100 * 178,
        ..CacheConfig::default()
    })
    .unwrap();
    let n = prewarm(&cache, 1000, 100);
    assert!(n < 1000);
    assert!(cache.stats().evictions > 0);
    assert!(cache.get(&key_for(n)).is_some());
}

#[test]
fn writes_only_have_no_hit_ratio() {
    let cache = Cache::new(roomy()).unwrap();
    let spec = WorkloadSpec {
        read_ratio: 0.0,
        ops: 1000,
        keyspace: 100,
        ..WorkloadSpec::default()
    };
    let m = run_workload(&cache, &spec);
    assert_eq!(m.hit_ratio, 0.0);
    assert_eq!(cache.stats().sets, 1000);
}
