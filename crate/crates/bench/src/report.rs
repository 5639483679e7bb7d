//! CSV and gnuplot output for benchmark runs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::workload::RunMetrics;

/// Writes one CSV row per run, with a header.
pub fn emit_report(runs: &[RunMetrics], path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if runs.is_empty() {
        // Serialize writes the header with the first record only.
        w.write_record(HEADER)?;
    }
    for r in runs {
        w.serialize(r)?;
    }
    w.flush()
}

const HEADER: [&str; 16] = [
    "system",
    "alpha",
    "threads",
    "read_ratio",
    "keyspace",
    "value_size",
    "ops",
    "elapsed_s",
    "throughput",
    "p50",
    "p95",
    "p99",
    "hit_ratio",
    "evictions",
    "epoch_advances",
    "expansions",
];

pub fn read_report(path: &Path) -> Result<Vec<RunMetrics>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

/// Writes a whitespace-separated table with one line per (alpha, threads,
/// read_ratio): the throughput of each system and their ratio. Missing
/// systems are written as `nan`.
pub fn emit_gnuplot(runs: &[RunMetrics], path: &Path) -> io::Result<()> {
    let mut rows: BTreeMap<(u64, usize, u64), (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in runs {
        let key = (r.alpha.to_bits(), r.threads, r.read_ratio.to_bits());
        let e = rows.entry(key).or_default();
        match r.system.as_str() {
            "fleec" => e.0 = Some(r.throughput),
            "baseline" => e.1 = Some(r.throughput),
            _ => {}
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# alpha threads read_ratio fleec_ops_s baseline_ops_s speedup")?;
    let mut sorted: Vec<_> = rows.into_iter().collect();
    sorted.sort_by(|a, b| {
        let (x, y) = (f64::from_bits(a.0 .0), f64::from_bits(b.0 .0));
        x.total_cmp(&y).then(a.0 .1.cmp(&b.0 .1))
    });
    for ((alpha, threads, rr), (f, b)) in sorted {
        let show = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.1}"));
        let speedup = match (f, b) {
            (Some(f), Some(b)) if b > 0.0 => format!("{:.4}", f / b),
            _ => "nan".to_string(),
        };
        writeln!(
            w,
            "{} {} {} {} {} {}",
            f64::from_bits(alpha),
            threads,
            f64::from_bits(rr),
            show(f),
            show(b),
            speedup
        )?;
    }
    w.flush()
}
