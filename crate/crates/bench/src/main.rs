use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use fleec_bench::sweep::{hit_ratio_sweep, SweepSpec};
use fleec_bench::{emit_gnuplot, emit_report, prewarm, run_workload, BaselineCache, CacheTarget, RunMetrics, WorkloadSpec};
use fleec_core::{Cache, CacheConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum System {
    Fleec,
    Baseline,
    Both,
}

/// Zipfian throughput benchmark for the fleec cache.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Zipf exponents, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.99,1.2")]
    alpha: Vec<f64>,
    /// Worker thread counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 0.99)]
    read_ratio: f64,
    #[arg(long, default_value_t = 1_000_000)]
    ops: u64,
    #[arg(long, default_value_t = 100_000)]
    keyspace: u64,
    #[arg(long, default_value_t = 100)]
    value_size: usize,
    /// Cache budget. The default keeps about half the keyspace resident.
    #[arg(long, default_value_t = 8)]
    memory_mb: u64,
    #[arg(long, value_enum, default_value_t = System::Both)]
    system: System,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write a gnuplot table of throughput and speedup.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Drive a running server over TCP instead of an in-process cache.
    #[arg(long)]
    server: Option<SocketAddr>,
    /// Instead of throughput, compare strict LRU and bucket CLOCK hit ratios
    /// with a cache of this many items.
    #[arg(long)]
    hit_ratio_capacity: Option<usize>,
}

fn cache_config(args: &Args, threads: usize) -> CacheConfig {
    CacheConfig {
        max_bytes: args.memory_mb << 20,
        thread_slots: (threads * 2).max(128),
        ..CacheConfig::default()
    }
}

fn print_row(m: &RunMetrics) {
    println!(
        "{:<9} alpha={:<5} threads={:<3} {:>12.0} ops/s  p50={:>6}ns p99={:>7}ns  hit={:.4} evictions={} advances={} expansions={}",
        m.system, m.alpha, m.threads, m.throughput, m.p50, m.p99, m.hit_ratio, m.evictions, m.epoch_advances, m.expansions
    );
}

fn run(args: &Args) -> Result<(), String> {
    if !(0.0..=1.0).contains(&args.read_ratio) {
        return Err("--read-ratio must be in [0, 1]".into());
    }
    if args.alpha.iter().any(|a| !(*a >= 0.0)) || args.threads.contains(&0) || args.keyspace == 0 {
        return Err("alpha must be >= 0, threads and keyspace >= 1".into());
    }
    if let Some(capacity) = args.hit_ratio_capacity {
        let spec = SweepSpec {
            keyspace: args.keyspace,
            capacity_items: capacity,
            ops: args.ops as usize,
            value_size: args.value_size,
            seed: args.seed,
            ..SweepSpec::default()
        };
        for p in hit_ratio_sweep(&args.alpha, &spec) {
            println!(
                "alpha={:<5} lru={:.4} clock={:.4} diff={:+.4}",
                p.alpha,
                p.lru,
                p.clock,
                p.clock - p.lru
            );
        }
        return Ok(());
    }
    let mut runs = Vec::new();
    for &alpha in &args.alpha {
        for &threads in &args.threads {
            let spec = WorkloadSpec {
                alpha,
                keyspace: args.keyspace,
                read_ratio: args.read_ratio,
                value_size: args.value_size,
                threads,
                ops: args.ops,
                seed: args.seed,
            };
            if let Some(addr) = args.server {
                let m = fleec_bench::net::run_tcp_workload(addr, &spec).map_err(|e| format!("{addr}: {e}"))?;
                print_row(&m);
                runs.push(m);
                continue;
            }
            let cfg = cache_config(args, threads);
            let mut targets: Vec<Box<dyn CacheTarget>> = Vec::new();
            if args.system != System::Baseline {
                targets.push(Box::new(Cache::new(cfg.clone()).map_err(|e| e.to_string())?));
            }
            if args.system != System::Fleec {
                targets.push(Box::new(BaselineCache::new(cfg).map_err(|e| e.to_string())?));
            }
            for t in &targets {
                prewarm(t.as_ref(), spec.keyspace, spec.value_size);
                let m = run_workload(t.as_ref(), &spec);
                print_row(&m);
                runs.push(m);
            }
        }
    }
    if let Some(path) = &args.csv {
        emit_report(&runs, path).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(path) = &args.gnuplot {
        emit_gnuplot(&runs, path).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fleec-bench: {e}");
            ExitCode::FAILURE
        }
    }
}
