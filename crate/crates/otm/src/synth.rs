//! Synthetic geometry: reproducible particle clouds and box-rod meshes
//! for benchmarks and scaling studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::{Real, Vec3};
use crate::store::ParticleId;

/// Node and point counts of the reference cylinder cloud.
pub const TAYLOR_CLOUD_NODES: usize = 5_966;
pub const TAYLOR_CLOUD_POINTS: usize = 28_423;

/// Uniformly samples a solid cylinder of the given radius and length
/// (axis +z from the origin) by rejection from its bounding square.
fn sample_cylinder(rng: &mut ChaCha8Rng, radius: Real, length: Real) -> Vec3 {
    loop {
        let x: Real = rng.gen_range(-radius..=radius);
        let y: Real = rng.gen_range(-radius..=radius);
        if x * x + y * y <= radius * radius {
            let z: Real = rng.gen_range(0.0..=length);
            return Vec3::new(x, y, z);
        }
    }
}

/// A reproducible cylindrical particle cloud: `nodes` node positions with
/// ids from 0, then `points` material-point positions with ids following.
pub fn cylinder_cloud(
    nodes: usize,
    points: usize,
    radius: Real,
    length: Real,
    seed: u64,
) -> Vec<(ParticleId, Vec3)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = Vec::with_capacity(nodes + points);
    for i in 0..nodes + points {
        cloud.push((ParticleId(i as u64), sample_cylinder(&mut rng, radius, length)));
    }
    cloud
}

/// The reference-scale cylinder cloud (5,966 nodes + 28,423 points) at
/// rod proportions: radius 3.2 mm, length 32.4 mm.
pub fn taylor_cloud(seed: u64) -> Vec<(ParticleId, Vec3)> {
    cylinder_cloud(
        TAYLOR_CLOUD_NODES,
        TAYLOR_CLOUD_POINTS,
        3.2e-3,
        32.4e-3,
        seed,
    )
}

/// Generates mesh text for a rectangular rod: an `nx`×`ny`×`nz` vertex
/// grid with spacing `dx`, every cell split into six positively oriented
/// tetrahedra. Vertices on the outer surface carry the boundary flag.
pub fn box_rod_mesh(nx: usize, ny: usize, nz: usize, dx: Real) -> String {
    assert!(nx >= 2 && ny >= 2 && nz >= 2, "need at least 2 vertices per axis");
    let n_nodes = nx * ny * nz;
    let n_cells = (nx - 1) * (ny - 1) * (nz - 1);
    let n_elements = 6 * n_cells;
    let vertex_id = |i: usize, j: usize, k: usize| -> usize { i + nx * (j + ny * k) };

    let mut out = String::with_capacity(n_nodes * 40 + n_elements * 24);
    out.push_str(&format!("nodes {n_nodes} elements {n_elements} dim 3\n"));
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let boundary = (i == 0 || i == nx - 1)
                    || (j == 0 || j == ny - 1)
                    || (k == 0 || k == nz - 1);
                out.push_str(&format!(
                    "{} {:.17e} {:.17e} {:.17e} {}\n",
                    vertex_id(i, j, k),
                    i as Real * dx,
                    j as Real * dx,
                    k as Real * dx,
                    boundary as u8
                ));
            }
        }
    }

    // Kuhn subdivision: six tetrahedra per cell, one per permutation of
    // the axis order along the main diagonal. Odd permutations come out
    // left-handed; swapping their last two vertices restores positive
    // orientation.
    const PERMS: [([usize; 3], bool); 6] = [
        ([0, 1, 2], true),
        ([0, 2, 1], false),
        ([1, 0, 2], false),
        ([1, 2, 0], true),
        ([2, 0, 1], true),
        ([2, 1, 0], false),
    ];
    let mut element_id = 0usize;
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                for (perm, even) in PERMS {
                    let mut corner = [i, j, k];
                    let mut verts = [vertex_id(corner[0], corner[1], corner[2]), 0, 0, 0];
                    for (step, axis) in perm.into_iter().enumerate() {
                        corner[axis] += 1;
                        verts[step + 1] = vertex_id(corner[0], corner[1], corner[2]);
                    }
                    if !even {
                        verts.swap(2, 3);
                    }
                    out.push_str(&format!(
                        "{element_id} {} {} {} {}\n",
                        verts[0], verts[1], verts[2], verts[3]
                    ));
                    element_id += 1;
                }
            }
        }
    }
    out
}
