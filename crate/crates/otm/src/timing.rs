//! Per-step, per-phase wallclock accounting.
//!
//! Each worker accumulates one row per executed phase; logs serialize as
//! CSV (`step,phase,rank,seconds,halo_nodes,halo_mps`) for offline
//! aggregation into scaling tables.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::step::StepReport;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub step: u64,
    pub phase: &'static str,
    pub rank: usize,
    pub seconds: f64,
    pub halo_nodes: usize,
    pub halo_points: usize,
}

/// One worker's timing history.
#[derive(Debug, Clone, Default)]
pub struct TimingLog {
    pub rank: usize,
    pub rows: Vec<TimingRow>,
}

pub const CSV_HEADER: &str = "step,phase,rank,seconds,halo_nodes,halo_mps";

impl TimingLog {
    pub fn new(rank: usize) -> Self {
        TimingLog {
            rank,
            rows: Vec::new(),
        }
    }

    /// Appends every phase of a step report.
    pub fn record(&mut self, report: &StepReport) {
        for (phase, seconds) in &report.phases {
            self.rows.push(TimingRow {
                step: report.step_index,
                phase,
                rank: self.rank,
                seconds: *seconds,
                halo_nodes: report.halo_nodes,
                halo_points: report.halo_points,
            });
        }
    }

    /// Total wallclock across steps: the sum of per-step "total" rows.
    pub fn total_seconds(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.phase == "total")
            .map(|r| r.seconds)
            .sum()
    }

    /// Mean halo sizes per step, from the "total" rows.
    pub fn mean_halo_sizes(&self) -> (f64, f64) {
        let totals: Vec<&TimingRow> = self.rows.iter().filter(|r| r.phase == "total").collect();
        if totals.is_empty() {
            return (0.0, 0.0);
        }
        let n = totals.len() as f64;
        (
            totals.iter().map(|r| r.halo_nodes as f64).sum::<f64>() / n,
            totals.iter().map(|r| r.halo_points as f64).sum::<f64>() / n,
        )
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.9},{},{}",
                row.step, row.phase, row.rank, row.seconds, row.halo_nodes, row.halo_points
            )?;
        }
        Ok(())
    }
}

/// Writes all workers' logs into one CSV file with a header row.
pub fn write_csv_file(logs: &[TimingLog], path: &Path) -> Result<()> {
    let mut buffer = Vec::new();
    writeln!(&mut buffer, "{CSV_HEADER}")?;
    for log in logs {
        log.write_csv(&mut buffer)?;
    }
    std::fs::write(path, buffer)?;
    Ok(())
}

/// Run wallclock per the scaling convention: the maximum over workers of
/// their summed step totals.
pub fn run_wallclock(logs: &[TimingLog]) -> f64 {
    logs.iter().map(TimingLog::total_seconds).fold(0.0, f64::max)
}
