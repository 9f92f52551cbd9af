//! Plain-text simplex mesh ingestion.
//!
//! Format: a header line `nodes N elements M dim D`, then N vertex lines
//! `id x y z [b]` (`b` = 1 flags a boundary vertex), then M element lines
//! `id v1 v2 v3 [v4]` — triangles when D = 2, tetrahedra when D = 3.
//! Blank lines and lines starting with `#` are skipped.
//!
//! Ingestion produces one node per vertex and one material point per
//! element, placed at the barycenter with volume = element measure and
//! mass = ρ₀ · volume. Each point's initial support is its parent
//! element's vertices with freshly evaluated shape functions; the element
//! connectivity is discarded afterward.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lme;
use crate::material::MaterialModel;
use crate::math::{Real, Vec3};
use crate::search::nearest_spacing;
use crate::store::{MaterialPoint, Node, ParticleId, ShapeContribution};

/// Parsed mesh text, prior to particle construction.
#[derive(Debug, Clone)]
pub struct RawMesh {
    /// Spatial dimension (2 or 3); elements have dim + 1 vertices.
    pub dim: usize,
    /// (id, position, boundary flag), in file order.
    pub vertices: Vec<(u64, Vec3, bool)>,
    /// (id, vertex ids), in file order.
    pub elements: Vec<(u64, Vec<u64>)>,
}

/// Particles built from a mesh.
#[derive(Debug, Clone)]
pub struct Ingest {
    pub dim: usize,
    pub nodes: Vec<Node>,
    pub points: Vec<MaterialPoint>,
}

fn parse_error(line: usize, detail: impl Into<String>) -> Error {
    Error::MeshParse {
        line,
        detail: detail.into(),
    }
}

fn parse_num<T: std::str::FromStr>(token: &str, line: usize, what: &str) -> Result<T> {
    token
        .parse::<T>()
        .map_err(|_| parse_error(line, format!("invalid {what} {token:?}")))
}

/// Parses mesh text into its raw structure, reporting 1-based line numbers
/// on malformed input.
pub fn parse_mesh(text: &str) -> Result<RawMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_no, header) = lines
        .next()
        .ok_or_else(|| parse_error(1, "empty mesh file"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 6 || tokens[0] != "nodes" || tokens[2] != "elements" || tokens[4] != "dim" {
        return Err(parse_error(
            header_no,
            format!("header must read \"nodes N elements M dim D\", got {header:?}"),
        ));
    }
    let n_nodes: usize = parse_num(tokens[1], header_no, "node count")?;
    let n_elements: usize = parse_num(tokens[3], header_no, "element count")?;
    let dim: usize = parse_num(tokens[5], header_no, "dimension")?;
    if !(2..=3).contains(&dim) {
        return Err(parse_error(header_no, format!("dimension must be 2 or 3, got {dim}")));
    }
    let arity = dim + 1;

    let mut vertices = Vec::with_capacity(n_nodes);
    let mut seen_vertices = BTreeMap::new();
    for _ in 0..n_nodes {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_error(usize::MAX, "file ends inside the vertex block"))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 4 && t.len() != 5 {
            return Err(parse_error(
                no,
                format!("vertex line needs \"id x y z [b]\", got {} tokens", t.len()),
            ));
        }
        let id: u64 = parse_num(t[0], no, "vertex id")?;
        let mut x = Vec3::zeros();
        for a in 0..3 {
            x[a] = parse_num::<Real>(t[1 + a], no, "coordinate")?;
            if !x[a].is_finite() {
                return Err(parse_error(no, format!("non-finite coordinate {:?}", t[1 + a])));
            }
        }
        let boundary = if t.len() == 5 {
            match t[4] {
                "0" => false,
                "1" => true,
                other => return Err(parse_error(no, format!("boundary flag must be 0 or 1, got {other:?}"))),
            }
        } else {
            false
        };
        if seen_vertices.insert(id, no).is_some() {
            return Err(parse_error(no, format!("duplicate vertex id {id}")));
        }
        vertices.push((id, x, boundary));
    }

    let mut elements = Vec::with_capacity(n_elements);
    let mut seen_elements = BTreeMap::new();
    for _ in 0..n_elements {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_error(usize::MAX, "file ends inside the element block"))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 1 + arity {
            return Err(parse_error(
                no,
                format!("element line needs an id and {arity} vertex ids, got {} tokens", t.len()),
            ));
        }
        let id: u64 = parse_num(t[0], no, "element id")?;
        let mut verts = Vec::with_capacity(arity);
        for tok in &t[1..] {
            let v: u64 = parse_num(tok, no, "vertex reference")?;
            if !seen_vertices.contains_key(&v) {
                return Err(parse_error(no, format!("element references unknown vertex {v}")));
            }
            verts.push(v);
        }
        if seen_elements.insert(id, no).is_some() {
            return Err(parse_error(no, format!("duplicate element id {id}")));
        }
        elements.push((id, verts));
    }

    if let Some((no, line)) = lines.next() {
        return Err(parse_error(no, format!("unexpected trailing content {line:?}")));
    }
    Ok(RawMesh {
        dim,
        vertices,
        elements,
    })
}

/// Signed measure of a simplex: triangle area (counterclockwise positive,
/// x–y plane) or tetrahedron volume (right-handed positive).
pub fn element_measure(dim: usize, verts: &[Vec3]) -> Real {
    match dim {
        2 => {
            let u = verts[1] - verts[0];
            let v = verts[2] - verts[0];
            0.5 * (u[0] * v[1] - u[1] * v[0])
        }
        _ => {
            let u = verts[1] - verts[0];
            let v = verts[2] - verts[0];
            let w = verts[3] - verts[0];
            u.dot(&v.cross(&w)) / 6.0
        }
    }
}

/// Builds particles from a parsed mesh: nodes at vertices, one material
/// point per element at the barycenter with its parent's vertices as the
/// initial support. Point ids continue after the largest vertex id.
pub fn build_particles(raw: &RawMesh, model: &MaterialModel, gamma: Real) -> Result<Ingest> {
    let positions: BTreeMap<u64, Vec3> = raw.vertices.iter().map(|(id, x, _)| (*id, *x)).collect();
    let max_vertex_id = raw.vertices.iter().map(|(id, _, _)| *id).max().unwrap_or(0);
    let rho0 = model.rho0();

    let mut nodes = Vec::with_capacity(raw.vertices.len());
    for (id, x, boundary) in &raw.vertices {
        let mut node = Node::at_rest(ParticleId(*id), *x);
        node.is_boundary = *boundary;
        nodes.push(node);
    }

    let mut points = Vec::with_capacity(raw.elements.len());
    for (element_id, vert_ids) in &raw.elements {
        let verts: Vec<Vec3> = vert_ids.iter().map(|v| positions[v]).collect();
        let volume = element_measure(raw.dim, &verts);
        if volume <= 0.0 {
            return Err(Error::DegenerateElement {
                element: *element_id,
                volume,
            });
        }
        let barycenter = verts.iter().sum::<Vec3>() / verts.len() as Real;
        let id = ParticleId(max_vertex_id + 1 + element_id);
        let mut point = MaterialPoint::undeformed(
            id,
            barycenter,
            rho0 * volume,
            volume,
            model.virgin_state(),
        );

        let support_nodes: Vec<(ParticleId, Vec3)> = vert_ids
            .iter()
            .zip(&verts)
            .map(|(v, x)| (ParticleId(*v), *x))
            .collect();
        let spacing = nearest_spacing(&barycenter, &support_nodes)?;
        let params = lme::ShapeParams::new(gamma, spacing, raw.dim)?;
        let eval = lme::evaluate(&barycenter, &verts, &params)
            .map_err(|e| e.at_point(id))?;
        for (i, (v, _)) in support_nodes.iter().enumerate() {
            point.support.insert(
                *v,
                ShapeContribution {
                    value: eval.values[i],
                    gradient: eval.gradients[i],
                },
            );
        }
        point.spacing = spacing;
        point.support_radius = verts
            .iter()
            .map(|v| (v - barycenter).norm())
            .fold(0.0, Real::max);
        points.push(point);
    }

    Ok(Ingest {
        dim: raw.dim,
        nodes,
        points,
    })
}

/// Reads and ingests a mesh file.
pub fn ingest_mesh(path: &Path, model: &MaterialModel, gamma: Real) -> Result<Ingest> {
    let text = std::fs::read_to_string(path)?;
    build_particles(&parse_mesh(&text)?, model, gamma)
}
