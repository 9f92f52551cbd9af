//! Run orchestration: ingest, decomposition, worker lifecycle, the time
//! loop, and output artifacts.
//!
//! The driver ingests the mesh once, computes the initial partition,
//! spawns one thread per worker over the in-process transport, and joins
//! them at the end. Each worker builds its initial halos, advances the
//! step loop, and writes its own output frames; the driver gathers final
//! particle states and timing logs.

use std::path::PathBuf;
use std::thread;

use crate::contact::RigidTool;
use crate::deck::{Backend, DeckTool, MeshSource, ProblemDeck};
use crate::error::{Error, Result};
use crate::math::Real;
use crate::mesh::{build_particles, ingest_mesh, parse_mesh, Ingest};
use crate::partition::rcb;
use crate::step::{initial_halos, step, StepContext, StepParams, Subdomain};
use crate::store::ParticleStore;
use crate::synth::box_rod_mesh;
use crate::timing::{run_wallclock, write_csv_file, TimingLog};
use crate::transport::{InProcNetwork, Transport};
use crate::vtk::{write_vtk, VtkOptions};

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub deck: ProblemDeck,
    /// Directory for frames, timing CSV, and the wallclock record; no
    /// files are written when absent.
    pub out_dir: Option<PathBuf>,
    /// Write binary VTK payloads instead of ASCII.
    pub binary_vtk: bool,
}

impl RunSettings {
    pub fn new(deck: ProblemDeck) -> Self {
        RunSettings {
            deck,
            out_dir: None,
            binary_vtk: false,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub workers: usize,
    pub steps_run: u64,
    /// Maximum over workers of their summed step wallclock, s.
    pub wallclock: f64,
    pub timing: Vec<TimingLog>,
    /// All particles, gathered from every worker's owned store.
    pub final_state: ParticleStore,
    pub initial_point_mass: f64,
    pub final_point_mass: f64,
    /// 0-based step indices at which a rebalance ran.
    pub rebalance_steps: Vec<u64>,
    pub dim: usize,
    pub frames_written: usize,
}

/// Loads particles from the deck's mesh source.
pub fn ingest_deck(deck: &ProblemDeck) -> Result<Ingest> {
    match &deck.mesh {
        MeshSource::File(path) => ingest_mesh(path, &deck.material, deck.gamma),
        MeshSource::SynthRod { nx, ny, nz, dx } => {
            let text = box_rod_mesh(*nx, *ny, *nz, *dx);
            build_particles(&parse_mesh(&text)?, &deck.material, deck.gamma)
        }
    }
}

fn resolve_tool(tool: &DeckTool, youngs: Real, spacing: Real) -> Result<RigidTool> {
    let default_penalty = 100.0 * youngs / spacing;
    RigidTool::new(
        tool.profile.clone(),
        tool.velocity,
        tool.normal_stiffness.unwrap_or(default_penalty),
        tool.tangent_stiffness.unwrap_or(default_penalty),
        tool.friction,
    )
}

/// Builds the per-worker solver context from a deck.
fn build_context(deck: &ProblemDeck, dim: usize, min_spacing: Real) -> Result<StepContext> {
    let tool = match &deck.tool {
        Some(t) => Some(resolve_tool(t, deck.material.moduli().e, min_spacing)?),
        None => None,
    };
    Ok(StepContext {
        params: StepParams {
            dt: deck.dt,
            stab_epsilon: deck.stab_epsilon,
            body_force: deck.body_force,
        },
        model: deck.material.clone(),
        search: deck.search,
        gamma: deck.gamma,
        dim,
        walls: deck.wall.iter().cloned().collect(),
        tool,
        policy: deck.policy,
        allow_inversion: deck.allow_inversion,
    })
}

/// Executes a deck to completion and gathers the results.
pub fn run(settings: &RunSettings) -> Result<RunReport> {
    let deck = &settings.deck;
    if deck.backend == Backend::Cluster {
        return Err(Error::Config(
            "the cluster backend is not available in this build; use backend = inproc".into(),
        ));
    }
    let workers = deck.workers;
    let ingest = ingest_deck(deck)?;
    let total_particles = ingest.nodes.len() + ingest.points.len();
    if workers > total_particles {
        return Err(Error::Config(format!(
            "{workers} workers for only {total_particles} particles"
        )));
    }

    // Initial conditions: central-difference bootstrap Δu₀ = v·Δt.
    let v0 = deck.initial_velocity;
    let du0 = v0 * deck.dt;
    let mut full = ParticleStore::new();
    let mut min_spacing = Real::INFINITY;
    for mut node in ingest.nodes {
        node.du = du0;
        node.du_next = du0;
        node.x_prev = node.x - du0;
        full.insert_node(node)?;
    }
    for mut point in ingest.points {
        point.x_prev = point.x - du0;
        point.body_force = deck.body_force;
        min_spacing = min_spacing.min(point.spacing);
        full.insert_point(point)?;
    }
    let initial_point_mass = full.point_mass();
    if !min_spacing.is_finite() {
        min_spacing = 1.0; // no points: spacing only feeds tool defaults
    }

    // Initial decomposition over every particle position.
    let cloud: Vec<_> = full
        .ids()
        .into_iter()
        .map(|id| {
            let x = match (full.get_node(id), full.get_point(id)) {
                (Some(n), _) => n.x,
                (_, Some(p)) => p.x,
                _ => unreachable!("id listed by the store"),
            };
            (id, x)
        })
        .collect();
    let plan = rcb(&cloud, workers)?;
    let mut subdomains: Vec<Subdomain> = (0..workers).map(Subdomain::new).collect();
    for id in full.ids() {
        let rank = plan.owner(id)?;
        match full.remove(id)? {
            crate::store::Particle::Node(mut n) => {
                n.owner = rank;
                subdomains[rank].owned.insert_node(n)?;
            }
            crate::store::Particle::Point(mut p) => {
                p.owner = rank;
                subdomains[rank].owned.insert_point(p)?;
            }
        }
    }

    let context = build_context(deck, ingest.dim, min_spacing)?;
    let vtk_options = VtkOptions {
        binary: settings.binary_vtk,
        temperature: matches!(deck.material, crate::material::MaterialModel::JohnsonCook(_)),
    };
    let endpoints = InProcNetwork::connect(workers);

    struct WorkerOutput {
        sub: Subdomain,
        log: TimingLog,
        rebalance_steps: Vec<u64>,
        frames: usize,
    }

    let n_steps = deck.n_steps;
    let write_interval = deck.write_interval;
    let out_dir = settings.out_dir.clone();
    let dt = deck.dt;

    let results: Vec<std::result::Result<Result<WorkerOutput>, Box<dyn std::any::Any + Send>>> =
        thread::scope(|scope| {
            let handles: Vec<_> = endpoints
                .into_iter()
                .zip(subdomains)
                .map(|(mut transport, mut sub)| {
                    let mut ctx = context.clone();
                    let out_dir = out_dir.clone();
                    scope.spawn(move || -> Result<WorkerOutput> {
                        let rank = sub.rank;
                        let mut log = TimingLog::new(rank);
                        let mut rebalance_steps = Vec::new();
                        let mut frames = 0usize;
                        let frame_dir = if write_interval > 0 { out_dir.as_deref() } else { None };
                        let outcome = (|| -> Result<()> {
                            initial_halos(&mut sub, &mut transport)?;
                            if let Some(dir) = frame_dir {
                                write_vtk(&sub.owned, dt, dir, 0, rank, vtk_options)?;
                                frames += 1;
                            }
                            for s in 0..n_steps {
                                let report = step(&mut sub, &mut transport, &mut ctx, s)?;
                                if report.rebalanced {
                                    rebalance_steps.push(s);
                                }
                                log.record(&report);
                                if let Some(dir) = frame_dir {
                                    if (s + 1) % write_interval == 0 {
                                        write_vtk(&sub.owned, dt, dir, s + 1, rank, vtk_options)?;
                                        frames += 1;
                                    }
                                }
                            }
                            Ok(())
                        })();
                        match outcome {
                            Ok(()) => Ok(WorkerOutput {
                                sub,
                                log,
                                rebalance_steps,
                                frames,
                            }),
                            Err(e) => {
                                // Poison collectives so peers fail fast
                                // instead of waiting out their timeouts.
                                transport.abort();
                                Err(e)
                            }
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join()).collect()
        });

    // Prefer the root-cause error: a worker that failed on its own work
    // reports a solver error, while its peers die on poisoned collectives
    // with protocol errors.
    let mut outputs = Vec::with_capacity(workers);
    let mut errors = Vec::new();
    for (rank, joined) in results.into_iter().enumerate() {
        match joined {
            Ok(Ok(output)) => outputs.push(output),
            Ok(Err(e)) => errors.push(e),
            Err(_) => errors.push(Error::Worker {
                rank,
                detail: "worker thread panicked".into(),
            }),
        }
    }
    if !errors.is_empty() {
        let root = errors
            .iter()
            .position(|e| !matches!(e, Error::Protocol(_)))
            .unwrap_or(0);
        return Err(errors.swap_remove(root));
    }

    let mut final_state = ParticleStore::new();
    let mut timing = Vec::with_capacity(workers);
    let mut rebalance_steps = Vec::new();
    let mut frames_written = 0;
    for mut output in outputs {
        for id in output.sub.owned.ids() {
            match output.sub.owned.remove(id)? {
                crate::store::Particle::Node(n) => final_state.insert_node(n)?,
                crate::store::Particle::Point(p) => final_state.insert_point(p)?,
            }
        }
        if output.log.rank == 0 {
            rebalance_steps = output.rebalance_steps.clone();
        }
        frames_written += output.frames;
        timing.push(output.log);
    }
    timing.sort_by_key(|l| l.rank);

    let wallclock = run_wallclock(&timing);
    if let Some(dir) = &settings.out_dir {
        std::fs::create_dir_all(dir)?;
        write_csv_file(&timing, &dir.join(format!("timing_w{workers}.csv")))?;
        std::fs::write(
            dir.join(format!("wallclock_w{workers}.txt")),
            format!("{workers} {wallclock:.9}\n"),
        )?;
    }

    Ok(RunReport {
        workers,
        steps_run: n_steps,
        wallclock,
        final_point_mass: final_state.point_mass(),
        initial_point_mass,
        timing,
        final_state,
        rebalance_steps,
        dim: ingest.dim,
        frames_written,
    })
}
