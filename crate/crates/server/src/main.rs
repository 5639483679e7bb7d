use std::net::{IpAddr, SocketAddr};
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use fleec_core::{Cache, CacheConfig};
use fleec_server::protocol::Context;
use fleec_server::server::{runtime, serve};

/// Memcached-compatible cache server with a lock-free core.
#[derive(Debug, Parser)]
#[command(name = "fleec", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, env = "FLEEC_BIND", default_value = "0.0.0.0")]
    bind: IpAddr,
    #[arg(long, env = "FLEEC_PORT", default_value_t = 11211)]
    port: u16,
    /// Memory budget for items, in MiB.
    #[arg(long, env = "FLEEC_MEMORY_MB", default_value_t = 64)]
    memory_mb: u64,
    /// Largest per-bucket CLOCK value.
    #[arg(long, env = "FLEEC_CLOCK_MAX", default_value_t = 3)]
    clock_max: u8,
    /// Initial hash table size, a power of two.
    #[arg(long, env = "FLEEC_INITIAL_BUCKETS", default_value_t = 1024)]
    initial_buckets: usize,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, env = "FLEEC_WORKERS")]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(4, |n| n.get()));
    let config = CacheConfig {
        max_bytes: args.memory_mb << 20,
        clock_max: args.clock_max,
        initial_buckets: args.initial_buckets,
        thread_slots: (workers * 2).max(128),
        ..CacheConfig::default()
    };
    let cache = match Cache::new(config) {
        Ok(c) => Arc::new(c),
        Err(e) => {
            eprintln!("fleec: {e}");
            return ExitCode::from(2);
        }
    };
    let addr = SocketAddr::new(args.bind, args.port);
    let result = runtime(workers).and_then(|rt| {
        rt.block_on(async {
            let listener = tokio::net::TcpListener::bind(addr).await?;
            eprintln!("fleec: listening on {addr} with {workers} workers");
            let ctx = Arc::new(Context::new(cache, workers));
            serve(listener, ctx, async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
        })
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fleec: {e}");
            ExitCode::FAILURE
        }
    }
}
