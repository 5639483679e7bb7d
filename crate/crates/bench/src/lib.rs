//! Benchmark harness for the fleec cache: zipfian workloads, a lock-based
//! baseline, and reference models of the eviction policy.

pub mod baseline;
pub mod net;
pub mod report;
pub mod sim;
pub mod sweep;
pub mod workload;
pub mod zipf;

pub use baseline::BaselineCache;
pub use report::{emit_gnuplot, emit_report, read_report};
pub use sim::{check_equivalence, key_for, replay_hit_ratio, BucketClockSim, LruSim, Policy, TraceOp};
pub use workload::{prewarm, run_workload, CacheTarget, RunMetrics, WorkloadSpec};
pub use zipf::Zipf;
