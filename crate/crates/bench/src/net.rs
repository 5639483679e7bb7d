//! End-to-end mode: the same workload over TCP against a running server.

use std::io;
use std::net::SocketAddr;
use std::time::Instant;

use fleec_server::client::{get_request, set_request, Client, Response};

use crate::sim::key_for;
use crate::workload::{Op, OpStream, RunMetrics, WorkloadSpec, LATENCY_SAMPLE_EVERY};
use crate::zipf::Zipf;

struct Tally {
    hits: u64,
    misses: u64,
    latencies: Vec<u64>,
}

fn tcp_worker(addr: SocketAddr, spec: &WorkloadSpec, zipf: &Zipf, rank: usize) -> io::Result<Tally> {
    let mut client = Client::connect(addr)?;
    let value = vec![b'w'; spec.value_size];
    let mut t = Tally {
        hits: 0,
        misses: 0,
        latencies: Vec::new(),
    };
    let ops = OpStream::new(spec.seed, rank, zipf, spec.read_ratio).take(spec.ops_for(rank) as usize);
    for (i, op) in ops.enumerate() {
        let start = (i as u64 % LATENCY_SAMPLE_EVERY == 0).then(Instant::now);
        match op {
            Op::Get(r) => {
                client.send(&get_request(&key_for(r)))?;
                match client.read_response()? {
                    Response::Values(v) if !v.is_empty() => t.hits += 1,
                    _ => t.misses += 1,
                }
            }
            Op::Set(r) => {
                client.send(&set_request(&key_for(r), 0, 0, &value))?;
                client.read_response()?;
            }
        }
        if let Some(s) = start {
            t.latencies.push(s.elapsed().as_nanos() as u64);
        }
    }
    Ok(t)
}

/// Runs `spec` against the memcached-protocol server at `addr`, one
/// connection per thread. Cache-internal counters are not visible over the
/// wire and are reported as zero.
pub fn run_tcp_workload(addr: SocketAddr, spec: &WorkloadSpec) -> io::Result<RunMetrics> {
    let zipf = Zipf::new(spec.keyspace, spec.alpha);
    let start = Instant::now();
    let tallies: Vec<io::Result<Tally>> = std::thread::scope(|s| {
        let zipf = &zipf;
        let handles: Vec<_> = (0..spec.threads)
            .map(|rank| s.spawn(move || tcp_worker(addr, spec, zipf, rank)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    let (mut hits, mut misses, mut lat) = (0, 0, Vec::new());
    for t in tallies {
        let t = t?;
        hits += t.hits;
        misses += t.misses;
        lat.extend(t.latencies);
    }
    lat.sort_unstable();
    let pct = |p: f64| {
        if lat.is_empty() {
            0
        } else {
            lat[((lat.len() as f64 * p).ceil() as usize).clamp(1, lat.len()) - 1]
        }
    };
    Ok(RunMetrics {
        system: "fleec-tcp".to_string(),
        alpha: spec.alpha,
        threads: spec.threads,
        read_ratio: spec.read_ratio,
        keyspace: spec.keyspace,
        value_size: spec.value_size,
        ops: spec.ops,
        elapsed_s: secs,
        throughput: spec.ops as f64 / secs,
        p50: pct(0.50),
        p95: pct(0.95),
        p99: pct(0.99),
        hit_ratio: if hits + misses == 0 {
            0.0
        } else {
            hits as f64 / (hits + misses) as f64
        },
        evictions: 0,
        epoch_advances: 0,
        expansions: 0,
    })
}
