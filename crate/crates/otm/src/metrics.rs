//! Strong-scaling metrics: speedup and efficiency tables.
//!
//! Speedup at p workers is t₁/t_p against the single-worker wallclock;
//! efficiency is speedup/p. Tables render as aligned text and as CSV.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub workers: usize,
    /// Run wallclock, s.
    pub wallclock: f64,
    /// t₁ / t_p.
    pub speedup: f64,
    /// speedup / workers, as a fraction of 1.
    pub efficiency: f64,
}

/// Builds the scaling table from (worker count, wallclock) measurements.
/// Rows come out sorted by worker count; the 1-worker run is the baseline
/// and must be present.
pub fn speedup_table(entries: &[(usize, f64)]) -> Result<Vec<MetricsRow>> {
    let mut sorted: Vec<(usize, f64)> = entries.to_vec();
    sorted.sort_by_key(|(p, _)| *p);
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Config(format!(
                "two wallclock entries for {} workers",
                pair[0].0
            )));
        }
    }
    let baseline = sorted
        .iter()
        .find(|(p, _)| *p == 1)
        .map(|(_, t)| *t)
        .ok_or(Error::MissingBaseline)?;
    if baseline <= 0.0 {
        return Err(Error::Config("baseline wallclock must be positive".into()));
    }
    sorted
        .into_iter()
        .map(|(workers, wallclock)| {
            if workers == 0 {
                return Err(Error::Config("worker count 0 in metrics input".into()));
            }
            if wallclock <= 0.0 {
                return Err(Error::Config(format!(
                    "wallclock for {workers} workers must be positive"
                )));
            }
            let speedup = baseline / wallclock;
            Ok(MetricsRow {
                workers,
                wallclock,
                speedup,
                efficiency: speedup / workers as f64,
            })
        })
        .collect()
}

/// Aligned human-readable table; efficiency in percent.
pub fn format_text(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>8} {:>14} {:>10} {:>12}\n",
        "workers", "wallclock [s]", "speedup", "efficiency"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:>8} {:>14.4} {:>10.2} {:>11.2}%\n",
            row.workers,
            row.wallclock,
            row.speedup,
            row.efficiency * 100.0
        ));
    }
    out
}

/// CSV rendering with a header row; efficiency in percent.
pub fn format_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("workers,wallclock_s,speedup,efficiency_percent\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.6},{:.4},{:.4}\n",
            row.workers,
            row.wallclock,
            row.speedup,
            row.efficiency * 100.0
        ));
    }
    out
}
