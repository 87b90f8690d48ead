//! CSV and metadata writers.
//!
//! Every output directory carries an `INCOMPLETE` marker until the command
//! that fills it finishes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analytics::SweepRow;
use crate::config::{DerivedTargets, Scenario};
use crate::error::Result;
use crate::sim::capacity::CapacityPoint;
use crate::sim::ecdf::Ecdf;
use crate::sim::engine::RunOutput;
use crate::sim::kpi::satisfied;

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// An output directory under construction.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        fs::write(root.join(INCOMPLETE_MARKER), "run did not finish\n")?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    pub fn finish(self) -> Result<()> {
        fs::remove_file(self.root.join(INCOMPLETE_MARKER))?;
        Ok(())
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a header-only CSV when there are no rows, so consumers always see the schema.
fn write_rows_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        w.flush()?;
        Ok(())
    } else {
        write_rows(path, rows)
    }
}

pub fn write_analytics(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_rows_with_header(path, &["p_tb", "m", "p_cbg", "r_first", "r_second", "rreg_percent"], rows)
}

#[derive(Serialize)]
struct KpiRow {
    ue_id: usize,
    packets: u64,
    on_time: u64,
    late: u64,
    lost: u64,
    satisfied: bool,
}

pub fn write_kpi_summary(path: &Path, run: &RunOutput, reliability: f64) -> Result<()> {
    let mut rows = Vec::with_capacity(run.kpis.len());
    for k in &run.kpis {
        rows.push(KpiRow {
            ue_id: k.ue_id,
            packets: k.packets_total,
            on_time: k.packets_on_time,
            late: k.packets_late,
            lost: k.packets_lost,
            satisfied: k.packets_total > 0 && satisfied(k, reliability)?,
        });
    }
    write_rows_with_header(path, &["ue_id", "packets", "on_time", "late", "lost", "satisfied"], &rows)
}

#[derive(Serialize)]
struct McsRow {
    mcs_index: usize,
    cdf: f64,
}

#[derive(Serialize)]
struct PrbRow {
    prb_load: f64,
    cdf: f64,
}

/// eCDF of the MCS index of new transport blocks, pooled over `runs`.
pub fn write_mcs_ecdf(path: &Path, runs: &[RunOutput]) -> Result<()> {
    let mut counts: Vec<(f64, u64)> = Vec::new();
    for run in runs {
        for (i, c) in run.pooled_kpi().mcs_histogram.iter().enumerate() {
            match counts.get_mut(i) {
                Some(slot) => slot.1 += c,
                None => counts.push((i as f64, *c)),
            }
        }
    }
    let rows: Vec<McsRow> = match Ecdf::from_counts(&counts) {
        Ok(e) => e.points().iter().map(|&(x, cdf)| McsRow { mcs_index: x as usize, cdf }).collect(),
        Err(_) => Vec::new(),
    };
    write_rows_with_header(path, &["mcs_index", "cdf"], &rows)
}

/// eCDF of the per-slot PRB load, pooled over `runs`.
pub fn write_prb_ecdf(path: &Path, runs: &[RunOutput]) -> Result<()> {
    let samples: Vec<f64> = runs.iter().flat_map(|r| r.prb_load.iter().copied()).collect();
    let rows: Vec<PrbRow> = match Ecdf::new(&samples) {
        Ok(e) => e.points().iter().map(|&(prb_load, cdf)| PrbRow { prb_load, cdf }).collect(),
        Err(_) => Vec::new(),
    };
    write_rows_with_header(path, &["prb_load", "cdf"], &rows)
}

pub fn write_capacity_curve(path: &Path, curve: &[CapacityPoint]) -> Result<()> {
    write_rows_with_header(path, &["ues_per_cell", "satisfied_fraction", "stderr"], curve)
}

pub fn write_offset_trace(path: &Path, run: &RunOutput) -> Result<()> {
    write_rows_with_header(path, &["time_ms", "ue_id", "offset_db"], &run.offset_trace)
}

pub fn write_harq_trace(path: &Path, run: &RunOutput) -> Result<()> {
    write_rows_with_header(
        path,
        &["process_id", "tx_index", "mcs", "pending_bitmap", "sinr_db", "outcome_bitmap"],
        &run.harq_trace,
    )
}

pub fn write_packet_trace(path: &Path, run: &RunOutput) -> Result<()> {
    write_rows_with_header(path, &["ue_id", "seq", "arrival_ms", "size_bits", "deadline_ms"], &run.packet_trace)
}

/// Everything needed to reproduce a result directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub software: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seeds: Vec<u64>,
    pub derived_targets: DerivedTargets,
    pub required_rate_mbps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacity_ues_per_cell: Option<usize>,
}

impl RunMetadata {
    pub fn new(command: &str, scenario: &Scenario, seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            software: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seeds,
            derived_targets: scenario.derived_targets()?,
            required_rate_mbps: scenario.traffic.required_rate_mbps,
            capacity_ues_per_cell: None,
        })
    }
}

/// Write `metadata.json` and `resolved_scenario.toml`.
pub fn write_metadata(dir: &OutputDir, meta: &RunMetadata, scenario: &Scenario) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.path("metadata.json"))?);
    serde_json::to_writer_pretty(&mut w, meta)?;
    writeln!(w)?;
    w.flush()?;
    fs::write(dir.path("resolved_scenario.toml"), scenario.resolved().to_toml())?;
    Ok(())
}
