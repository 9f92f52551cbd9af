//! Command-line driver: run problem decks and aggregate scaling metrics.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;

use otm::deck::{load_deck, Backend};
use otm::metrics::{format_csv, format_text, speedup_table};
use otm::runner::{run, RunSettings};

#[derive(Parser)]
#[command(
    name = "otm",
    version,
    about = "Explicit meshfree solid-dynamics solver with in-process distributed workers"
)]
struct Cli {
    /// Problem deck: a flat "key = value" file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the deck's worker count.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Override the deck's transport backend.
    #[arg(long, value_parser = ["inproc", "cluster"])]
    backend: Option<String>,
    /// Override the deck's step count (0 = setup only).
    #[arg(long, value_name = "K")]
    steps: Option<u64>,
    /// Output directory for frames, timing CSV, and wallclock records.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the deck's output frame interval (0 disables frames).
    #[arg(long, value_name = "K")]
    write_interval: Option<u64>,
    /// Override the deck's seed for synthetic geometry.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Aggregate wallclock records found in --out into a speedup table.
    #[arg(long)]
    metrics: bool,
    /// Write binary VTK frames instead of ASCII.
    #[arg(long)]
    binary_vtk: bool,
}

/// Scans a run directory for `wallclock_w{P}.txt` records ("P seconds")
/// and renders the strong-scaling table.
fn aggregate_metrics(dir: &Path) -> Result<()> {
    let mut entries = Vec::new();
    for entry in std::fs::read_dir(dir)
        .with_context(|| format!("cannot scan {}", dir.display()))?
    {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if !(name.starts_with("wallclock_w") && name.ends_with(".txt")) {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let mut tokens = text.split_whitespace();
        let workers: usize = tokens
            .next()
            .context("empty wallclock record")?
            .parse()
            .with_context(|| format!("bad worker count in {}", path.display()))?;
        let seconds: f64 = tokens
            .next()
            .context("wallclock record missing seconds")?
            .parse()
            .with_context(|| format!("bad seconds in {}", path.display()))?;
        entries.push((workers, seconds));
    }
    if entries.is_empty() {
        bail!("no wallclock_w*.txt records in {}", dir.display());
    }
    let rows = speedup_table(&entries)?;
    let text = format_text(&rows);
    print!("{text}");
    std::fs::write(dir.join("metrics.txt"), &text)?;
    std::fs::write(dir.join("metrics.csv"), format_csv(&rows))?;
    println!("wrote {} and metrics.csv", dir.join("metrics.txt").display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();

    if cli.metrics {
        let dir = cli
            .out
            .as_deref()
            .context("--metrics needs --out DIR pointing at run records")?;
        return aggregate_metrics(dir);
    }

    let config = cli
        .config
        .context("--config PATH is required (or use --metrics)")?;
    let mut deck = load_deck(&config)?;
    if let Some(workers) = cli.workers {
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        deck.workers = workers;
    }
    if let Some(backend) = cli.backend.as_deref() {
        deck.backend = match backend {
            "inproc" => Backend::InProc,
            _ => Backend::Cluster,
        };
    }
    if let Some(steps) = cli.steps {
        deck.n_steps = steps;
    }
    if let Some(interval) = cli.write_interval {
        deck.write_interval = interval;
    }
    if let Some(seed) = cli.seed {
        deck.seed = seed;
    }

    let settings = RunSettings {
        deck,
        out_dir: cli.out.clone(),
        binary_vtk: cli.binary_vtk,
    };
    let report = run(&settings)?;

    let mass_drift = if report.initial_point_mass > 0.0 {
        ((report.final_point_mass - report.initial_point_mass) / report.initial_point_mass).abs()
    } else {
        0.0
    };
    println!(
        "completed {} steps with {} workers in {:.3} s",
        report.steps_run, report.workers, report.wallclock
    );
    println!(
        "particles: {} ({}D), relative mass drift {:.3e}",
        report.final_state.len(),
        report.dim,
        mass_drift
    );
    if !report.rebalance_steps.is_empty() {
        println!("rebalanced at steps {:?}", report.rebalance_steps);
    }
    if report.frames_written > 0 {
        println!("wrote {} VTK frames", report.frames_written);
    }
    if let Some(dir) = &cli.out {
        println!(
            "timing and wallclock records in {} (aggregate with --metrics --out {})",
            dir.display(),
            dir.display()
        );
    }
    Ok(())
}
