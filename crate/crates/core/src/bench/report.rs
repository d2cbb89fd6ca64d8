//! CSV and JSON emitters.
//!
//! Per-run CSV columns, one row per simulated second:
//! `time_s committed mean_latency_ms height total_blocks main_blocks delta max_view`.
//! Plot with e.g. `plot "run.csv" using 1:2 with lines` after
//! `set datafile separator ","`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::driver::SecurityReport;
use super::metrics::MetricsReport;

pub const SERIES_HEADER: &str = "time_s,committed,mean_latency_ms,height,total_blocks,main_blocks,delta,max_view";
pub const SWEEP_HEADER: &str =
    "nodes,clients,throughput,committed,p50_ms,p99_ms,stalled,view_changes,delta,dropped_queue";

pub fn write_series_csv<W: Write>(r: &MetricsReport, mut w: W) -> io::Result<()> {
    writeln!(w, "{SERIES_HEADER}")?;
    for s in &r.series {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.time_s, s.committed, s.mean_latency_ms, s.height, s.total_blocks, s.main_blocks, s.delta, s.max_view
        )?;
    }
    Ok(())
}

pub fn write_summary_json<W: Write>(r: &MetricsReport, mut w: W) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut w, r)?;
    writeln!(w)
}

fn opt(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(rs: &[MetricsReport], mut w: W) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rs {
        writeln!(
            w,
            "{},{},{:.3},{},{},{},{},{},{},{}",
            r.nodes,
            r.clients,
            r.throughput,
            r.committed,
            opt(r.latency.p50_ms),
            opt(r.latency.p99_ms),
            r.liveness.stalled,
            r.liveness.view_changes,
            r.security.delta,
            r.network.dropped_queue
        )?;
    }
    Ok(())
}

pub fn write_security_csv<W: Write>(s: &SecurityReport, mut w: W) -> io::Result<()> {
    writeln!(w, "time_s,delta,total_blocks,main_blocks")?;
    for p in &s.series {
        writeln!(w, "{},{},{},{}", p.time_s, p.delta, p.total_blocks, p.main_blocks)?;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> io::Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    Ok((p.clone(), BufWriter::new(File::create(p)?)))
}

/// Write `<stem>.csv` and `<stem>.json`; returns the paths written.
pub fn write_run(dir: &Path, stem: &str, r: &MetricsReport) -> io::Result<Vec<PathBuf>> {
    let (csv, mut w) = create(dir, &format!("{stem}.csv"))?;
    write_series_csv(r, &mut w)?;
    w.flush()?;
    let (json, mut w) = create(dir, &format!("{stem}.json"))?;
    write_summary_json(r, &mut w)?;
    w.flush()?;
    Ok(vec![csv, json])
}

pub fn write_sweep(dir: &Path, stem: &str, rs: &[MetricsReport]) -> io::Result<PathBuf> {
    let (p, mut w) = create(dir, &format!("{stem}-sweep.csv"))?;
    write_sweep_csv(rs, &mut w)?;
    w.flush()?;
    Ok(p)
}

pub fn write_security(dir: &Path, stem: &str, s: &SecurityReport) -> io::Result<PathBuf> {
    let (p, mut w) = create(dir, &format!("{stem}-delta.csv"))?;
    write_security_csv(s, &mut w)?;
    w.flush()?;
    Ok(p)
}
