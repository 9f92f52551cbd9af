//! Legacy VTK point-cloud output, one file per worker per output step.
//!
//! Files are `DATASET POLYDATA` with one vertex cell per particle and
//! point data: particle kind (0 = node, 1 = material point), owner rank,
//! displacement increment, velocity, von Mises stress, accumulated
//! plastic strain, temperature (thermal materials only), and the fracture
//! flag. ASCII by default; the binary mode writes big-endian payloads per
//! the legacy format rules.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::math::{von_mises, Real, Vec3};
use crate::store::ParticleStore;

#[derive(Debug, Clone, Copy, Default)]
pub struct VtkOptions {
    /// Write big-endian binary payloads instead of ASCII.
    pub binary: bool,
    /// Emit the temperature field (thermal material states).
    pub temperature: bool,
}

/// Canonical frame file name: `frame_{step:06}_rank_{rank:03}.vtk`.
pub fn frame_path(dir: &Path, step: u64, rank: usize) -> PathBuf {
    dir.join(format!("frame_{step:06}_rank_{rank:03}.vtk"))
}

enum Payload {
    Int(Vec<i32>),
    Scalar(Vec<Real>),
    Vector(Vec<Vec3>),
}

fn push_block(out: &mut Vec<u8>, binary: bool, payload: &Payload) {
    match payload {
        Payload::Int(values) => {
            if binary {
                for v in values {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            } else {
                for v in values {
                    out.extend_from_slice(v.to_string().as_bytes());
                    out.push(b'\n');
                }
            }
        }
        Payload::Scalar(values) => {
            if binary {
                for v in values {
                    out.extend_from_slice(&v.to_be_bytes());
                }
            } else {
                for v in values {
                    out.extend_from_slice(format!("{v:.17e}").as_bytes());
                    out.push(b'\n');
                }
            }
        }
        Payload::Vector(values) => {
            if binary {
                for v in values {
                    for a in 0..3 {
                        out.extend_from_slice(&v[a].to_be_bytes());
                    }
                }
            } else {
                for v in values {
                    out.extend_from_slice(
                        format!("{:.17e} {:.17e} {:.17e}\n", v[0], v[1], v[2]).as_bytes(),
                    );
                }
            }
        }
    }
    if binary {
        out.push(b'\n');
    }
}

/// Renders a particle store (typically one worker's owned particles) as a
/// legacy VTK byte buffer. Particles appear nodes-first, ascending by id
/// within each kind, so repeated runs produce byte-identical files.
pub fn render_vtk(store: &ParticleStore, dt: Real, options: VtkOptions) -> Vec<u8> {
    let n = store.len();
    let mut positions = Vec::with_capacity(n);
    let mut kind = Vec::with_capacity(n);
    let mut owner = Vec::with_capacity(n);
    let mut displacement = Vec::with_capacity(n);
    let mut velocity = Vec::with_capacity(n);
    let mut stress = Vec::with_capacity(n);
    let mut plastic = Vec::with_capacity(n);
    let mut temperature = Vec::with_capacity(n);
    let mut fractured = Vec::with_capacity(n);

    for node in store.nodes() {
        positions.push(node.x);
        kind.push(0);
        owner.push(node.owner as i32);
        displacement.push(node.du);
        velocity.push(if dt > 0.0 { node.du / dt } else { Vec3::zeros() });
        stress.push(0.0);
        plastic.push(0.0);
        temperature.push(0.0);
        fractured.push(0);
    }
    for point in store.points() {
        let du = point.x - point.x_prev;
        positions.push(point.x);
        kind.push(1);
        owner.push(point.owner as i32);
        displacement.push(du);
        velocity.push(if dt > 0.0 { du / dt } else { Vec3::zeros() });
        stress.push(von_mises(&point.sigma));
        plastic.push(point.state.eps_p_bar());
        temperature.push(point.state.temperature().unwrap_or(0.0));
        fractured.push(point.fractured as i32);
    }

    let mut out = Vec::new();
    out.extend_from_slice(b"# vtk DataFile Version 3.0\n");
    out.extend_from_slice(b"particle state\n");
    out.extend_from_slice(if options.binary { b"BINARY\n" } else { b"ASCII\n" });
    out.extend_from_slice(b"DATASET POLYDATA\n");

    out.extend_from_slice(format!("POINTS {n} double\n").as_bytes());
    push_block(&mut out, options.binary, &Payload::Vector(positions));

    out.extend_from_slice(format!("VERTICES {n} {}\n", 2 * n).as_bytes());
    let cells: Vec<i32> = (0..n as i32).flat_map(|i| [1, i]).collect();
    push_block(&mut out, options.binary, &Payload::Int(cells));

    out.extend_from_slice(format!("POINT_DATA {n}\n").as_bytes());

    let scalar = |out: &mut Vec<u8>, name: &str, payload: Payload| {
        let ty = match payload {
            Payload::Int(_) => "int",
            _ => "double",
        };
        out.extend_from_slice(format!("SCALARS {name} {ty} 1\n").as_bytes());
        out.extend_from_slice(b"LOOKUP_TABLE default\n");
        push_block(out, options.binary, &payload);
    };
    scalar(&mut out, "kind", Payload::Int(kind));
    scalar(&mut out, "owner", Payload::Int(owner));

    out.extend_from_slice(b"VECTORS displacement double\n");
    push_block(&mut out, options.binary, &Payload::Vector(displacement));
    out.extend_from_slice(b"VECTORS velocity double\n");
    push_block(&mut out, options.binary, &Payload::Vector(velocity));

    scalar(&mut out, "von_mises", Payload::Scalar(stress));
    scalar(&mut out, "eps_p_bar", Payload::Scalar(plastic));
    if options.temperature {
        scalar(&mut out, "temperature", Payload::Scalar(temperature));
    }
    scalar(&mut out, "fractured", Payload::Int(fractured));
    out
}

/// Writes one frame file for a worker's particles.
pub fn write_vtk(
    store: &ParticleStore,
    dt: Real,
    dir: &Path,
    step: u64,
    rank: usize,
    options: VtkOptions,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = frame_path(dir, step, rank);
    let mut file = std::fs::File::create(&path)?;
    file.write_all(&render_vtk(store, dt, options))?;
    Ok(path)
}
