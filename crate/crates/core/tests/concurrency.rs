use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};

use fleec_core::{poison, Cache, CacheConfig};

fn cache(max_bytes: u64, buckets: usize) -> Cache {
    Cache::new(CacheConfig {
        max_bytes,
        initial_buckets: buckets,
        thread_slots: 32,
        ..CacheConfig::default()
    })
    .unwrap()
}

#[test]
fn concurrent_writers_leave_a_last_write() {
    let c = cache(1 << 30, 2);
    let threads = 8;
    let keys = 50;
    std::thread::scope(|s| {
        for t in 0..threads {
            let c = &c;
            s.spawn(move || {
                for round in 0..200 {
                    for k in 0..keys {
                        let v = format!("{t}:{round}");
                        c.set(format!("k{k}").as_bytes(), 0, 0, v.as_bytes()).unwrap();
                    }
                }
            });
        }
    });
    // Every key ends on some thread's final write.
    let finals: HashSet<Vec<u8>> = (0..threads).map(|t| format!("{t}:199").into_bytes()).collect();
    for k in 0..keys {
        let v = c.get(format!("k{k}").as_bytes()).unwrap().value;
        assert!(finals.contains(&v), "unexpected {:?}", String::from_utf8_lossy(&v));
    }
    assert_eq!(c.stats().item_count, keys as u64);
    c.quiesce();
    assert_eq!(c.reserved_bytes(), c.stats().bytes_in_use);
}

#[test]
fn readers_never_see_torn_or_foreign_values() {
    let c = cache(1 << 30, 4);
    let stop = AtomicBool::new(false);
    std::thread::scope(|s| {
        for t in 0..4 {
            let c = &c;
            let stop = &stop;
            s.spawn(move || {
                let mut i = 0u64;
                while !stop.load(Ordering::Relaxed) {
                    let k = format!("w{}", i % 64);
                    // Value encodes its own key so a reader can validate it.
                    let v = format!("{k}|{t}|{i}|{}", "x".repeat((i % 50) as usize));
                    c.set(k.as_bytes(), 0, 0, v.as_bytes()).unwrap();
                    i += 1;
                }
            });
        }
        for _ in 0..4 {
            let c = &c;
            s.spawn(move || {
                for i in 0..40_000u64 {
                    let k = format!("w{}", i % 64);
                    if let Some(h) = c.get(k.as_bytes()) {
                        let v = String::from_utf8(h.value).unwrap();
                        assert!(v.starts_with(&format!("{k}|")));
                    }
                }
            });
        }
        std::thread::sleep(std::time::Duration::from_millis(300));
        stop.store(true, Ordering::Relaxed);
    });
}

#[test]
fn eviction_under_contention_keeps_budget_and_accounts() {
    let max = 64 * 1024;
    let c = cache(max, 16);
    std::thread::scope(|s| {
        for t in 0..8 {
            let c = &c;
            s.spawn(move || {
                for i in 0..20_000u64 {
                    let k = format!("e{}", (i * 7 + t) % 5_000);
                    match i % 4 {
                        0 | 1 => c.set(k.as_bytes(), 0, 0, &[t as u8; 100]).unwrap(),
                        2 => {
                            c.get(k.as_bytes());
                        }
                        _ => {
                            c.delete(k.as_bytes());
                        }
                    }
                    assert!(c.reserved_bytes() <= max);
                }
            });
        }
    });
    let s = c.stats();
    assert!(s.evictions > 0);
    let (n, bytes) = c.traverse_live_bytes();
    assert_eq!((n, bytes), (s.item_count, s.bytes_in_use));
    c.quiesce();
    assert_eq!(c.stats().retired_bytes, 0);
    assert_eq!(c.reserved_bytes(), s.bytes_in_use);
    assert_eq!(poison::canary_reads(), 0);
}

#[test]
fn expansion_under_threads_keeps_every_key() {
    let c = cache(1 << 30, 1);
    std::thread::scope(|s| {
        for t in 0..8 {
            let c = &c;
            s.spawn(move || {
                for i in 0..5_000 {
                    c.set(format!("{t}/{i}").as_bytes(), 0, 0, b"v").unwrap();
                    if i % 3 == 0 {
                        assert!(c.get(format!("{t}/{}", i / 2).as_bytes()).is_some());
                    }
                }
            });
        }
    });
    c.finish_expansion();
    let info = c.table_info();
    assert_eq!(info.item_count, 40_000);
    assert!(info.item_count * 2 <= info.bucket_count * 3);
    for t in 0..8 {
        for i in 0..5_000 {
            assert!(c.get(format!("{t}/{i}").as_bytes()).is_some());
        }
    }
}
