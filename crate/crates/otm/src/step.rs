//! One explicit solver step over a subdomain, with dynamic halo upkeep.
//!
//! Per step, each worker executes the same fixed phase schedule:
//!
//! 1. `influence` — transpose resident material-point supports onto owned
//!    nodes.
//! 2. `assemble` — lumped nodal mass and residual from resident points.
//! 3. `stabilize` — underintegration penalty correction of the residual.
//! 4. `update_nodes` — tool contact forces, central-difference nodal
//!    update, then wall projection.
//! 5. `node_halo` — exchange nodes so every owned point's support resolves
//!    locally.
//! 6. `rebalance` — when due, repartition and migrate particles, then
//!    rebuild the nodal halo.
//! 7. `resolve_supports` — verify support residency, widening the halo on
//!    deficit (collectively) until complete.
//! 8. `update_points` — move points with the new nodal positions and
//!    update their deformation state.
//! 9. `constitutive` — stress update and fracture bookkeeping.
//! 10. `support_update` — linked-cell rebuild, support search with radius
//!     enlargement, and shape recomputation, re-widening the nodal halo if
//!     a search ball leaves the guaranteed-complete region.
//! 11. `point_halo` — exchange points so next step's assembly sees every
//!     point whose support touches an owned node.
//!
//! All sums run in ascending particle-id order and halo copies are
//! bit-exact, so particle trajectories are independent of the worker
//! count, bit for bit.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::contact::{tool_contact_force, wall_enforce, RigidTool, RigidWall};
use crate::error::{Error, Result};
use crate::halo::{detect_neighbors, exchange, BoundingBox};
use crate::lme;
use crate::material::MaterialModel;
use crate::math::{Mat3, Real, Vec3};
use crate::partition::{imbalance, rcb, RebalancePolicy};
use crate::search::{nearest_spacing, CellGrid, SearchParams};
use crate::store::{
    derive_influence, MaterialPoint, Node, Particle, ParticleId, ParticleStore, ShapeContribution,
    SupportDomain,
};
use crate::transport::{all_reduce_max, broadcast, Transport};
use crate::wire::{decode_message, encode_message};

/// Hard cap on halo-widening rounds per phase before giving up.
const MAX_HALO_ROUNDS: u32 = 8;
/// Relative safety inflation of halo widths against rounding in norms.
const WIDTH_INFLATION: Real = 1.0 + 1e-9;
/// Relative growth of the halo width when support resolution misses.
const RESOLVE_GROWTH: Real = 0.25;

/// Per-step scalar parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    /// Time step Δt, s.
    pub dt: Real,
    /// Stabilization penalty ε, Pa (0 disables).
    pub stab_epsilon: Real,
    /// Default body force density b̂, N/kg (seeded onto points at ingest).
    pub body_force: Vec3,
}

/// Long-lived per-worker solver context: material, search and shape
/// settings, contact surfaces, and the rebalance policy.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub params: StepParams,
    pub model: MaterialModel,
    pub search: SearchParams,
    /// Shape locality parameter γ.
    pub gamma: Real,
    /// Active spatial dimensions (2 or 3).
    pub dim: usize,
    pub walls: Vec<RigidWall>,
    pub tool: Option<RigidTool>,
    pub policy: RebalancePolicy,
    /// Erode (flag as fractured) points whose incremental deformation
    /// inverts, instead of aborting.
    pub allow_inversion: bool,
}

/// One worker's share of the particle system.
#[derive(Debug, Clone)]
pub struct Subdomain {
    pub rank: usize,
    /// Particles this worker owns and advances.
    pub owned: ParticleStore,
    /// Read-only copies of remote particles near the subdomain boundary.
    pub halo: ParticleStore,
}

impl Subdomain {
    pub fn new(rank: usize) -> Self {
        Subdomain {
            rank,
            owned: ParticleStore::new(),
            halo: ParticleStore::new(),
        }
    }

    /// An owned or halo node.
    pub fn resident_node(&self, id: ParticleId) -> Option<&Node> {
        self.owned.get_node(id).or_else(|| self.halo.get_node(id))
    }

    /// An owned or halo material point.
    pub fn resident_point(&self, id: ParticleId) -> Option<&MaterialPoint> {
        self.owned.get_point(id).or_else(|| self.halo.get_point(id))
    }

    fn owned_node_box(&self) -> BoundingBox {
        BoundingBox::from_points(self.owned.nodes().map(|n| &n.x))
    }

    fn owned_point_box(&self) -> BoundingBox {
        BoundingBox::from_points(self.owned.points().map(|p| &p.x))
    }

    fn clear_halo_nodes(&mut self) {
        let ids: Vec<ParticleId> = self.halo.nodes().map(|n| n.id).collect();
        for id in ids {
            self.halo.remove(id).expect("listed halo node present");
        }
    }

    fn clear_halo_points(&mut self) {
        let ids: Vec<ParticleId> = self.halo.points().map(|p| p.id).collect();
        for id in ids {
            self.halo.remove(id).expect("listed halo point present");
        }
    }
}

/// Phase timings and halo statistics of one step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub step_index: u64,
    /// (phase name, seconds) in execution order, ending with "total".
    pub phases: Vec<(&'static str, f64)>,
    pub halo_nodes: usize,
    pub halo_points: usize,
    pub rebalanced: bool,
    /// Particles this rank sent away during rebalance.
    pub migrated: usize,
    /// Stabilization pairs skipped for a zero previous distance.
    pub stabilization_skips: u64,
    /// Halo-widening rounds needed beyond the first exchange.
    pub halo_retries: u32,
    /// Global particle-count imbalance observed this step.
    pub imbalance: Real,
}

impl StepReport {
    pub fn phase_seconds(&self, name: &str) -> Option<f64> {
        self.phases
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| *s)
    }
}

// ---------------------------------------------------------------------------
// Assembly and nodal/point updates (pure per-subdomain phases)
// ---------------------------------------------------------------------------

/// Lumped mass and residual assembly onto owned nodes.
///
/// For node I: mass = Σ_p N_I m_p, residual = Σ_p (N_I m_p b̂_p − v_p σ_p B_I),
/// summed over the node's influence set in ascending point-id order, with
/// resident (owned and halo) points contributing identically.
pub fn assemble(sub: &mut Subdomain) -> Result<()> {
    let mut results: Vec<(ParticleId, Real, Vec3)> = Vec::with_capacity(sub.owned.node_count());
    for node in sub.owned.nodes() {
        let mut mass = 0.0;
        let mut residual = Vec3::zeros();
        for &point_id in &node.influence {
            let point = sub
                .resident_point(point_id)
                .ok_or(Error::UnknownId(point_id))?;
            let shape = point
                .support
                .get(node.id)
                .ok_or(Error::MissingNeighbor {
                    point: point_id,
                    node: node.id,
                })?;
            mass += shape.value * point.mass;
            residual += shape.value * point.mass * point.body_force
                - point.volume * (point.sigma * shape.gradient);
        }
        results.push((node.id, mass, residual));
    }
    for (id, mass, residual) in results {
        let node = sub.owned.node_mut(id)?;
        node.mass = mass;
        node.residual = residual;
    }
    Ok(())
}

/// Underintegration stabilization: decrement each owned node's residual by
/// ε Σ_p N_I e_{I,p}, where e compares the current node-point offset with
/// the point's incremental deformation applied to the previous offset.
/// Pairs coincident at the previous step are skipped; returns the skip
/// count.
pub fn stabilize(sub: &mut Subdomain, epsilon: Real) -> Result<u64> {
    if epsilon == 0.0 {
        return Ok(0);
    }
    let mut skips = 0u64;
    let mut corrections: Vec<(ParticleId, Vec3)> = Vec::with_capacity(sub.owned.node_count());
    for node in sub.owned.nodes() {
        let mut sum = Vec3::zeros();
        for &point_id in &node.influence {
            let point = sub
                .resident_point(point_id)
                .ok_or(Error::UnknownId(point_id))?;
            let shape = point
                .support
                .get(node.id)
                .ok_or(Error::MissingNeighbor {
                    point: point_id,
                    node: node.id,
                })?;
            let prev = node.x_prev - point.x_prev;
            let prev_norm = prev.norm();
            if prev_norm == 0.0 {
                skips += 1;
                continue;
            }
            let error = (node.x - point.x - point.df * prev) / prev_norm;
            sum += shape.value * error;
        }
        corrections.push((node.id, sum));
    }
    for (id, sum) in corrections {
        sub.owned.node_mut(id)?.residual -= epsilon * sum;
    }
    Ok(skips)
}

/// Central-difference nodal update: Δu_{n+1} = Δu_n + (Δt²/m)(p + r),
/// x_prev ← x, x ← x + Δu_{n+1}. Massless nodes are parked (Δu carried,
/// position frozen).
pub fn update_owned_nodes(sub: &mut Subdomain, dt: Real) {
    for node in sub.owned.nodes_mut() {
        if node.mass > 0.0 {
            let scale = dt * dt / node.mass;
            node.du_next = node.du + (node.boundary_force + node.residual) * scale;
            node.x_prev = node.x;
            node.x += node.du_next;
        } else {
            node.du_next = node.du;
        }
    }
}

/// Kinematic point update from freshly moved support nodes:
/// x ← Σ N_I x_I, ΔF = I + Σ Δu_I ⊗ B_I, F ← ΔF F, v ← det(ΔF) v,
/// ρ = m/v. With `allow_inversion`, a non-positive det(ΔF) erodes the
/// point (fracture flag, identity increment) instead of aborting.
pub fn update_owned_points(sub: &mut Subdomain, allow_inversion: bool) -> Result<()> {
    // Snapshot of resident nodal kinematics, shared by every owned point.
    let mut nodes: BTreeMap<ParticleId, (Vec3, Vec3)> = BTreeMap::new();
    for node in sub.owned.nodes().chain(sub.halo.nodes()) {
        nodes.insert(node.id, (node.x, node.du_next));
    }
    for point in sub.owned.points_mut() {
        let mut x_new = Vec3::zeros();
        let mut df = Mat3::identity();
        for (node_id, shape) in point.support.iter() {
            let (x_i, du_i) = nodes.get(&node_id).ok_or(Error::MissingNeighbor {
                point: point.id,
                node: node_id,
            })?;
            x_new += shape.value * x_i;
            df += du_i * shape.gradient.transpose();
        }
        point.x_prev = point.x;
        point.x = x_new;
        let det = df.determinant();
        if det <= 0.0 {
            if allow_inversion {
                point.fractured = true;
                point.df = Mat3::identity();
                point.sigma = Mat3::zeros();
                continue;
            }
            return Err(Error::Inverted { id: point.id, det });
        }
        point.df = df;
        point.f = df * point.f;
        point.volume *= det;
        point.density = point.mass / point.volume;
    }
    Ok(())
}

/// Stress and material-state update for owned, unbroken points; checks the
/// fracture criterion for models that define one and erodes points that
/// trip it (stress zeroed, search participation ends).
pub fn constitutive_update(sub: &mut Subdomain, model: &MaterialModel, dt: Real) -> Result<()> {
    for point in sub.owned.points_mut() {
        if point.fractured {
            point.sigma = Mat3::zeros();
            continue;
        }
        let (sigma, state, info) = model
            .update(&point.state, &point.df, dt, point.density)
            .map_err(|e| e.at_point(point.id))?;
        point.sigma = sigma;
        point.state = state;
        if let (MaterialModel::JohnsonCook(params), crate::material::MaterialState::JohnsonCook(s)) =
            (model, &point.state)
        {
            if info.delta_gamma > 0.0 {
                let stress = crate::math::von_mises(&point.sigma);
                if stress > 0.0 {
                    let eta = point.sigma.trace() / 3.0 / stress;
                    let eps_dot = info.delta_gamma / dt;
                    if crate::material::jc_fracture_check(s, eta, eps_dot, params) {
                        point.fractured = true;
                        point.sigma = Mat3::zeros();
                    }
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Halo passes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HaloKind {
    Nodes,
    Points,
}

#[derive(Debug, Clone)]
struct HaloPassInfo {
    /// Final width used for selection.
    width: Real,
    /// Region around this rank's selection box guaranteed to be completely
    /// resident after the pass (infinite for a single worker).
    region: BoundingBox,
    received: usize,
}

fn encode_pass_payload(b_all: &BoundingBox, b_sel: &BoundingBox, a: Real, b: Real) -> Vec<u8> {
    let mut out = Vec::with_capacity(112);
    b_all.encode(&mut out);
    b_sel.encode(&mut out);
    out.extend_from_slice(&a.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    out
}

fn decode_pass_payload(bytes: &[u8]) -> Result<(BoundingBox, BoundingBox, Real, Real)> {
    let (b_all, rest) = BoundingBox::decode(bytes)?;
    let (b_sel, rest) = BoundingBox::decode(rest)?;
    if rest.len() != 16 {
        return Err(Error::Protocol(format!(
            "halo pass payload must end with 16 scalar bytes, got {}",
            rest.len()
        )));
    }
    let a = Real::from_le_bytes(rest[0..8].try_into().expect("8-byte slice"));
    let b = Real::from_le_bytes(rest[8..16].try_into().expect("8-byte slice"));
    Ok((b_all, b_sel, a, b))
}

fn infinite_box() -> BoundingBox {
    BoundingBox {
        min: Vec3::from_element(Real::NEG_INFINITY),
        max: Vec3::from_element(Real::INFINITY),
    }
}

/// One collective halo pass of the given kind.
///
/// Every rank advertises an adjacency box (all owned particles), a
/// selection box (the particles whose interaction range defines what it
/// needs), and two width contributions. The width is the global maximum of
/// each contribution, summed, inflated, plus `extra` (identical on all
/// ranks). Each rank then ships its owned particles of the requested kind
/// lying within a neighbor's selection box extended by the width, and
/// replaces its halo particles of that kind with what it receives.
fn halo_pass(
    sub: &mut Subdomain,
    transport: &mut dyn Transport,
    kind: HaloKind,
    extra: Real,
) -> Result<HaloPassInfo> {
    let b_node = sub.owned_node_box();
    let b_point = sub.owned_point_box();
    let b_all = b_node.merged(&b_point);
    let radius_contrib = sub
        .owned
        .points()
        .map(|p| p.support_radius)
        .fold(0.0, Real::max);
    let (b_sel, contrib_a, contrib_b) = match kind {
        HaloKind::Nodes => {
            let du_contrib = sub
                .owned
                .nodes()
                .map(|n| n.du_next.norm())
                .fold(0.0, Real::max);
            (b_point, radius_contrib, du_contrib)
        }
        HaloKind::Points => (b_node, radius_contrib, 0.0),
    };

    let gathered = transport.all_gather(encode_pass_payload(&b_all, &b_sel, contrib_a, contrib_b))?;
    let mut all_boxes = Vec::with_capacity(gathered.len());
    let mut sel_boxes = Vec::with_capacity(gathered.len());
    let mut max_a: Real = 0.0;
    let mut max_b: Real = 0.0;
    for bytes in &gathered {
        let (ba, bs, a, b) = decode_pass_payload(bytes)?;
        all_boxes.push(ba);
        sel_boxes.push(bs);
        max_a = max_a.max(a);
        max_b = max_b.max(b);
    }
    let width = (max_a + max_b) * WIDTH_INFLATION + extra;

    let neighborhood = detect_neighbors(&all_boxes, sub.rank, width);
    let mut outgoing = BTreeMap::new();
    for &rank in &neighborhood.ranks {
        let region = sel_boxes[rank].extended(width);
        let message = match kind {
            HaloKind::Nodes => {
                let particles: Vec<Particle> = sub
                    .owned
                    .nodes()
                    .filter(|n| region.contains(&n.x))
                    .map(|n| Particle::Node(n.clone()))
                    .collect();
                encode_message(particles.iter())
            }
            HaloKind::Points => {
                let particles: Vec<Particle> = sub
                    .owned
                    .points()
                    .filter(|p| region.contains(&p.x))
                    .map(|p| Particle::Point(p.clone()))
                    .collect();
                encode_message(particles.iter())
            }
        };
        outgoing.insert(rank, message);
    }
    let received_messages = exchange(transport, &neighborhood, outgoing)?;

    match kind {
        HaloKind::Nodes => sub.clear_halo_nodes(),
        HaloKind::Points => sub.clear_halo_points(),
    }
    let mut received = 0usize;
    for (from, payload) in received_messages {
        for particle in decode_message(&payload)? {
            match (kind, particle) {
                (HaloKind::Nodes, Particle::Node(mut node)) => {
                    node.is_halo = true;
                    node.owner = from;
                    sub.halo.insert_node(node)?;
                    received += 1;
                }
                (HaloKind::Points, Particle::Point(mut point)) => {
                    point.is_halo = true;
                    point.owner = from;
                    sub.halo.insert_point(point)?;
                    received += 1;
                }
                (_, other) => {
                    return Err(Error::Protocol(format!(
                        "rank {from} sent a {} record during a {} halo pass",
                        match other {
                            Particle::Node(_) => "node",
                            Particle::Point(_) => "point",
                        },
                        match kind {
                            HaloKind::Nodes => "node",
                            HaloKind::Points => "point",
                        },
                    )))
                }
            }
        }
    }

    let region = if transport.world_size() == 1 {
        infinite_box()
    } else {
        b_sel.extended(width)
    };
    Ok(HaloPassInfo {
        width,
        region,
        received,
    })
}

/// Builds the halo regions required before the first step: nodes first
/// (so supports resolve), then points (so assembly sees every influencing
/// point).
pub fn initial_halos(
    sub: &mut Subdomain,
    transport: &mut dyn Transport,
) -> Result<(usize, usize)> {
    let nodes = halo_pass(sub, transport, HaloKind::Nodes, 0.0)?;
    let points = halo_pass(sub, transport, HaloKind::Points, 0.0)?;
    Ok((nodes.received, points.received))
}

// ---------------------------------------------------------------------------
// Support search
// ---------------------------------------------------------------------------

struct StagedSupport {
    support: SupportDomain,
    radius: Real,
    spacing: Real,
}

/// How far the closed ball around `center` pokes out of `region` on its
/// worst axis (0 when fully covered).
fn ball_overrun(region: &BoundingBox, center: &Vec3, radius: Real) -> Real {
    let mut worst: Real = 0.0;
    for a in 0..3 {
        worst = worst
            .max(region.min[a] - (center[a] - radius))
            .max((center[a] + radius) - region.max[a]);
    }
    worst.max(0.0)
}

/// One search round over all owned, unbroken points. Returns staged
/// supports plus the largest ball overrun past the guaranteed-complete
/// `region` (> 0 means the round must be retried with a wider halo).
/// Genuine failures (ball fully covered yet support still unusable) abort.
fn search_all(
    sub: &Subdomain,
    ctx: &StepContext,
    region: &BoundingBox,
) -> Result<(BTreeMap<ParticleId, StagedSupport>, Real)> {
    let mut staged = BTreeMap::new();
    let mut deficit: Real = 0.0;

    let nodes: Vec<(ParticleId, Vec3)> = sub
        .owned
        .nodes()
        .chain(sub.halo.nodes())
        .map(|n| (n.id, n.x))
        .collect();

    let mut cell_size: Real = 0.0;
    for point in sub.owned.points() {
        if !point.fractured {
            cell_size = cell_size.max(ctx.search.radius_factor * point.spacing);
        }
    }
    if cell_size == 0.0 {
        return Ok((staged, 0.0)); // no searchable points
    }
    let mut grid = CellGrid::build(nodes.iter().copied(), cell_size)?;

    'points: for point in sub.owned.points() {
        if point.fractured {
            continue;
        }
        let x = point.x;
        let mut radius = ctx.search.radius_factor * point.spacing;
        let mut last_error: Option<Error> = None;
        for _attempt in 0..=ctx.search.max_enlarge {
            if radius > cell_size {
                cell_size = radius;
                grid = CellGrid::build(nodes.iter().copied(), cell_size)?;
            }
            let found = grid.query_radius(&x, radius)?;
            if found.len() >= ctx.search.min_support {
                match evaluate_support(&x, &found, ctx, radius) {
                    Ok(s) => {
                        deficit = deficit.max(ball_overrun(region, &x, radius));
                        staged.insert(point.id, s);
                        continue 'points;
                    }
                    Err(
                        e @ (Error::ShapeNonConvergence { .. }
                        | Error::DegenerateSupport
                        | Error::EmptySupport),
                    ) => last_error = Some(e),
                    Err(other) => return Err(other),
                }
            }
            radius *= ctx.search.enlargement;
        }
        // Exhausted: enlargement is capped, so the final attempted radius
        // tells us whether remote nodes could still change the outcome.
        let final_radius = radius / ctx.search.enlargement;
        let overrun = ball_overrun(region, &x, final_radius);
        if overrun > 0.0 {
            deficit = deficit.max(overrun);
            continue;
        }
        return Err(Error::SupportUnsatisfiable {
            id: point.id,
            attempts: ctx.search.max_enlarge as u32,
            radius: final_radius,
            detail: match last_error {
                Some(e) => format!("shape evaluation kept failing: {e}"),
                None => format!(
                    "only {} of the required {} nodes in range",
                    grid.query_radius(&x, final_radius)?.len(),
                    ctx.search.min_support
                ),
            },
        });
    }
    Ok((staged, deficit))
}

fn evaluate_support(
    x: &Vec3,
    found: &[(ParticleId, Vec3)],
    ctx: &StepContext,
    radius: Real,
) -> Result<StagedSupport> {
    let spacing = nearest_spacing(x, found)?;
    let params = lme::ShapeParams::new(ctx.gamma, spacing, ctx.dim)?;
    let positions: Vec<Vec3> = found.iter().map(|(_, p)| *p).collect();
    let eval = lme::evaluate(x, &positions, &params)?;
    let mut support = SupportDomain::new();
    for (i, (id, _)) in found.iter().enumerate() {
        support.insert(
            *id,
            ShapeContribution {
                value: eval.values[i],
                gradient: eval.gradients[i],
            },
        );
    }
    Ok(StagedSupport {
        support,
        radius,
        spacing,
    })
}

// ---------------------------------------------------------------------------
// Rebalancing
// ---------------------------------------------------------------------------

fn encode_cloud(sub: &Subdomain) -> Vec<u8> {
    let ids = sub.owned.ids();
    let mut out = Vec::with_capacity(8 + ids.len() * 32);
    out.extend_from_slice(&(ids.len() as u64).to_le_bytes());
    for id in ids {
        let x = match (sub.owned.get_node(id), sub.owned.get_point(id)) {
            (Some(n), _) => n.x,
            (_, Some(p)) => p.x,
            _ => unreachable!("id listed by the store"),
        };
        out.extend_from_slice(&id.0.to_le_bytes());
        for a in 0..3 {
            out.extend_from_slice(&x[a].to_le_bytes());
        }
    }
    out
}

fn decode_cloud(bytes: &[u8], into: &mut Vec<(ParticleId, Vec3)>) -> Result<()> {
    if bytes.len() < 8 {
        return Err(Error::Decode {
            offset: 0,
            detail: "cloud payload shorter than its count".into(),
        });
    }
    let count = u64::from_le_bytes(bytes[0..8].try_into().expect("8-byte slice")) as usize;
    if bytes.len() != 8 + count * 32 {
        return Err(Error::Decode {
            offset: 8,
            detail: format!("cloud payload of {} bytes for {count} entries", bytes.len()),
        });
    }
    for i in 0..count {
        let base = 8 + i * 32;
        let id = u64::from_le_bytes(bytes[base..base + 8].try_into().expect("8-byte slice"));
        let mut x = Vec3::zeros();
        for a in 0..3 {
            let lo = base + 8 + a * 8;
            x[a] = f64::from_le_bytes(bytes[lo..lo + 8].try_into().expect("8-byte slice"));
        }
        into.push((ParticleId(id), x));
    }
    Ok(())
}

fn encode_assignment(assignment: &BTreeMap<ParticleId, usize>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + assignment.len() * 16);
    out.extend_from_slice(&(assignment.len() as u64).to_le_bytes());
    for (id, rank) in assignment {
        out.extend_from_slice(&id.0.to_le_bytes());
        out.extend_from_slice(&(*rank as u64).to_le_bytes());
    }
    out
}

fn decode_assignment(bytes: &[u8]) -> Result<BTreeMap<ParticleId, usize>> {
    if bytes.len() < 8 {
        return Err(Error::Decode {
            offset: 0,
            detail: "assignment payload shorter than its count".into(),
        });
    }
    let count = u64::from_le_bytes(bytes[0..8].try_into().expect("8-byte slice")) as usize;
    if bytes.len() != 8 + count * 16 {
        return Err(Error::Decode {
            offset: 8,
            detail: format!(
                "assignment payload of {} bytes for {count} entries",
                bytes.len()
            ),
        });
    }
    let mut out = BTreeMap::new();
    for i in 0..count {
        let base = 8 + i * 16;
        let id = u64::from_le_bytes(bytes[base..base + 8].try_into().expect("8-byte slice"));
        let rank =
            u64::from_le_bytes(bytes[base + 8..base + 16].try_into().expect("8-byte slice"));
        out.insert(ParticleId(id), rank as usize);
    }
    Ok(out)
}

/// Collective repartition + migration. Clears halos, gathers the global
/// (id, position) cloud, computes the plan on rank 0, broadcasts it, and
/// ships every particle whose owner changed — full state, bit-exact.
/// Returns the number of particles this rank sent away.
fn rebalance(sub: &mut Subdomain, transport: &mut dyn Transport) -> Result<usize> {
    sub.halo.clear();

    let gathered = transport.all_gather(encode_cloud(sub))?;
    let assignment = if sub.rank == 0 {
        let mut cloud = Vec::new();
        for bytes in &gathered {
            decode_cloud(bytes, &mut cloud)?;
        }
        let plan = rcb(&cloud, transport.world_size())?;
        let bytes = encode_assignment(&plan.assignment);
        broadcast(transport, 0, bytes.clone())?;
        plan.assignment
    } else {
        decode_assignment(&broadcast(transport, 0, Vec::new())?)?
    };

    let mut leaving: Vec<Vec<Particle>> = vec![Vec::new(); transport.world_size()];
    let mut migrated = 0usize;
    for id in sub.owned.ids() {
        let dest = *assignment.get(&id).ok_or(Error::Partition(format!(
            "rebalance plan is missing particle {id}"
        )))?;
        if dest != sub.rank {
            leaving[dest].push(sub.owned.remove(id)?);
            migrated += 1;
        }
    }
    let payloads: Vec<Vec<u8>> = leaving
        .iter()
        .map(|batch| encode_message(batch.iter()))
        .collect();
    let received = transport.all_to_all(payloads)?;
    for payload in received {
        for particle in decode_message(&payload)? {
            match particle {
                Particle::Node(mut node) => {
                    node.owner = sub.rank;
                    node.is_halo = false;
                    sub.owned.insert_node(node)?;
                }
                Particle::Point(mut point) => {
                    point.owner = sub.rank;
                    point.is_halo = false;
                    sub.owned.insert_point(point)?;
                }
            }
        }
    }
    Ok(migrated)
}

// ---------------------------------------------------------------------------
// The step
// ---------------------------------------------------------------------------

/// Returns the first unresolved (point, support-node) pair, if any.
fn first_missing_support(sub: &Subdomain) -> Option<(ParticleId, ParticleId)> {
    for point in sub.owned.points() {
        for node_id in point.support.ids() {
            if sub.resident_node(node_id).is_none() {
                return Some((point.id, node_id));
            }
        }
    }
    None
}

/// Executes one full solver step. `step_index` is 0-based.
pub fn step(
    sub: &mut Subdomain,
    transport: &mut dyn Transport,
    ctx: &mut StepContext,
    step_index: u64,
) -> Result<StepReport> {
    let rank = sub.rank;
    let total_start = Instant::now();
    let mut phases: Vec<(&'static str, f64)> = Vec::with_capacity(12);
    let mut report = StepReport {
        step_index,
        phases: Vec::new(),
        halo_nodes: 0,
        halo_points: 0,
        rebalanced: false,
        migrated: 0,
        stabilization_skips: 0,
        halo_retries: 0,
        imbalance: 1.0,
    };
    let dt = ctx.params.dt;

    macro_rules! phase {
        ($name:literal, $body:expr) => {{
            let start = Instant::now();
            let out = (|| $body)().map_err(|e: Error| e.in_step(step_index, rank, $name))?;
            phases.push(($name, start.elapsed().as_secs_f64()));
            out
        }};
    }

    // 1. Influence: transpose resident supports onto owned nodes.
    phase!("influence", {
        derive_influence(&mut sub.owned, &sub.halo);
        Ok::<_, Error>(())
    });

    // 2. Assembly.
    phase!("assemble", assemble(sub));

    // 3. Stabilization.
    report.stabilization_skips = phase!("stabilize", stabilize(sub, ctx.params.stab_epsilon));

    // 4. Contact forces, nodal update, wall projection.
    phase!("update_nodes", {
        if let Some(tool) = &mut ctx.tool {
            for node in sub.owned.nodes_mut() {
                node.boundary_force = tool_contact_force(node, tool, dt);
            }
            tool.advance(dt);
        }
        update_owned_nodes(sub, dt);
        for wall in &ctx.walls {
            for node in sub.owned.nodes_mut() {
                wall_enforce(node, wall, dt);
            }
        }
        Ok::<_, Error>(())
    });

    // 5. Nodal halo: ship nodes into reach of every remote support.
    let mut node_extra: Real = 0.0;
    let mut node_halo = phase!("node_halo", halo_pass(sub, transport, HaloKind::Nodes, node_extra));
    report.halo_nodes = node_halo.received;

    // 6. Rebalance when due (collective decision from gathered counts).
    phase!("rebalance", {
        let counts_bytes = transport.all_gather((sub.owned.len() as u64).to_le_bytes().to_vec())?;
        let mut counts = Vec::with_capacity(counts_bytes.len());
        for (peer, bytes) in counts_bytes.iter().enumerate() {
            let arr: [u8; 8] = bytes.as_slice().try_into().map_err(|_| {
                Error::Protocol(format!("rank {peer} sent a malformed count payload"))
            })?;
            counts.push(u64::from_le_bytes(arr) as usize);
        }
        report.imbalance = imbalance(&counts).unwrap_or(1.0);
        if ctx.policy.due(step_index as usize + 1, report.imbalance) {
            report.rebalanced = true;
            report.migrated = rebalance(sub, transport)?;
            node_extra = 0.0;
            node_halo = halo_pass(sub, transport, HaloKind::Nodes, node_extra)?;
            report.halo_nodes = node_halo.received;
        }
        Ok::<_, Error>(())
    });

    // 7. Support resolution, widening the nodal halo until nothing is
    // missing (every rank widens by the same all-reduced deficit).
    phase!("resolve_supports", {
        let mut rounds = 0u32;
        loop {
            let missing = first_missing_support(sub);
            if transport.world_size() == 1 {
                return match missing {
                    Some((point, node)) => Err(Error::MissingNeighbor { point, node }),
                    None => Ok(()),
                };
            }
            let local_deficit = if missing.is_some() {
                RESOLVE_GROWTH * node_halo.width
            } else {
                0.0
            };
            let deficit = all_reduce_max(transport, local_deficit)?;
            if deficit <= 0.0 {
                return Ok(());
            }
            rounds += 1;
            report.halo_retries += 1;
            if rounds > MAX_HALO_ROUNDS {
                return Err(Error::HaloWidthExhausted {
                    attempts: rounds - 1,
                    width: node_halo.width,
                });
            }
            node_extra += deficit;
            node_halo = halo_pass(sub, transport, HaloKind::Nodes, node_extra)?;
            report.halo_nodes = node_halo.received;
        }
    });

    // 8. Point kinematics.
    phase!("update_points", update_owned_points(sub, ctx.allow_inversion));

    // 9. Stress update.
    phase!("constitutive", constitutive_update(sub, &ctx.model, dt));

    // 10. Grid rebuild + support search + shape recomputation, widening the
    // nodal halo whenever a search ball pokes out of the guaranteed region.
    phase!("support_update", {
        let mut rounds = 0u32;
        loop {
            let (staged, local_deficit) = search_all(sub, ctx, &node_halo.region)?;
            let deficit = if transport.world_size() == 1 {
                local_deficit // provably 0: the region is infinite
            } else {
                all_reduce_max(transport, local_deficit)?
            };
            if deficit <= 0.0 {
                for (id, s) in staged {
                    let point = sub.owned.point_mut(id)?;
                    point.support = s.support;
                    point.support_radius = s.radius;
                    point.spacing = s.spacing;
                }
                return Ok(());
            }
            rounds += 1;
            report.halo_retries += 1;
            if rounds > MAX_HALO_ROUNDS {
                return Err(Error::HaloWidthExhausted {
                    attempts: rounds - 1,
                    width: node_halo.width,
                });
            }
            node_extra += deficit;
            node_halo = halo_pass(sub, transport, HaloKind::Nodes, node_extra)?;
            report.halo_nodes = node_halo.received;
        }
    });

    // 11. Point halo for next step's assembly.
    let point_halo = phase!("point_halo", halo_pass(sub, transport, HaloKind::Points, 0.0));
    report.halo_points = point_halo.received;

    // Commit the displacement increment.
    for node in sub.owned.nodes_mut() {
        node.du = node.du_next;
    }

    phases.push(("total", total_start.elapsed().as_secs_f64()));
    report.phases = phases;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{j2_virgin_state, ElasticModuli, J2Params, MaterialState};
    use crate::transport::InProcNetwork;
    use approx::assert_relative_eq;

    fn j2_model() -> MaterialModel {
        MaterialModel::J2(J2Params {
            moduli: ElasticModuli::from_e_nu(1e9, 0.3).unwrap(),
            hardening: 1e7,
            sigma_y0: 1e30, // effectively elastic
            rho0: 1000.0,
        })
    }

    fn basic_ctx() -> StepContext {
        StepContext {
            params: StepParams {
                dt: 1e-4,
                stab_epsilon: 0.0,
                body_force: Vec3::zeros(),
            },
            model: j2_model(),
            search: SearchParams {
                min_support: 4,
                ..SearchParams::default()
            },
            gamma: 1.6,
            dim: 3,
            walls: Vec::new(),
            tool: None,
            policy: RebalancePolicy {
                trigger: crate::partition::RebalanceTrigger::Interval,
                interval: 0, // never
                max_imbalance: 1.2,
            },
            allow_inversion: false,
        }
    }

    fn point_with_support(
        id: u64,
        x: Vec3,
        mass: Real,
        volume: Real,
        entries: &[(u64, Real, Vec3)],
    ) -> MaterialPoint {
        let mut p = MaterialPoint::undeformed(
            ParticleId(id),
            x,
            mass,
            volume,
            MaterialState::J2(j2_virgin_state()),
        );
        for (node, value, gradient) in entries {
            p.support.insert(
                ParticleId(*node),
                ShapeContribution {
                    value: *value,
                    gradient: *gradient,
                },
            );
        }
        p
    }

    #[test]
    fn single_point_single_node_assembly() {
        let mut sub = Subdomain::new(0);
        sub.owned
            .insert_node(Node::at_rest(ParticleId(1), Vec3::zeros()))
            .unwrap();
        let p = point_with_support(10, Vec3::zeros(), 2.0, 1.0, &[(1, 1.0, Vec3::zeros())]);
        sub.owned.insert_point(p).unwrap();
        derive_influence(&mut sub.owned, &sub.halo);
        assemble(&mut sub).unwrap();
        let node = sub.owned.node(ParticleId(1)).unwrap();
        assert_eq!(node.mass, 2.0);
        assert_eq!(node.residual, Vec3::zeros());
    }

    #[test]
    fn assembly_matches_dense_oracle_bitwise() {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut sub = Subdomain::new(0);
        let n_nodes = 6u64;
        let n_points = 4u64;
        for i in 0..n_nodes {
            sub.owned
                .insert_node(Node::at_rest(
                    ParticleId(i),
                    Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                ))
                .unwrap();
        }
        // Dense tables indexed [point][node].
        let mut values = vec![vec![0.0; n_nodes as usize]; n_points as usize];
        let mut grads = vec![vec![Vec3::zeros(); n_nodes as usize]; n_points as usize];
        for p in 0..n_points {
            let mut entries = Vec::new();
            for i in 0..n_nodes {
                if rng.gen_bool(0.7) {
                    let v: Real = rng.gen();
                    let g = Vec3::new(rng.gen(), rng.gen(), rng.gen());
                    values[p as usize][i as usize] = v;
                    grads[p as usize][i as usize] = g;
                    entries.push((i, v, g));
                }
            }
            let mut point = point_with_support(
                100 + p,
                Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                rng.gen::<Real>() + 0.1,
                rng.gen::<Real>() + 0.1,
                &entries,
            );
            point.sigma = Mat3::from_fn(|_, _| rng.gen::<Real>() - 0.5);
            point.body_force = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            sub.owned.insert_point(point).unwrap();
        }
        derive_influence(&mut sub.owned, &sub.halo);
        assemble(&mut sub).unwrap();

        for i in 0..n_nodes {
            // Independent dense accumulation in the same ascending order.
            let mut mass = 0.0;
            let mut residual = Vec3::zeros();
            for p in 0..n_points {
                let v = values[p as usize][i as usize];
                if v == 0.0 {
                    continue;
                }
                let point = sub.owned.point(ParticleId(100 + p)).unwrap();
                mass += v * point.mass;
                residual += v * point.mass * point.body_force
                    - point.volume * (point.sigma * grads[p as usize][i as usize]);
            }
            let node = sub.owned.node(ParticleId(i)).unwrap();
            assert_eq!(node.mass.to_bits(), mass.to_bits(), "node {i} mass");
            for a in 0..3 {
                assert_eq!(
                    node.residual[a].to_bits(),
                    residual[a].to_bits(),
                    "node {i} residual[{a}]"
                );
            }
        }
    }

    #[test]
    fn stabilization_vanishes_for_affine_motion_and_matches_hand_sum() {
        // 3 nodes, 1 point; previous positions deformed by exact affine map.
        let a = Mat3::new(1.1, 0.25, 0.0, -0.125, 0.9375, 0.0, 0.0, 0.0, 1.0);
        let old_nodes = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let old_point = Vec3::new(0.25, 0.25, 0.0);
        let mut sub = Subdomain::new(0);
        for (i, x_old) in old_nodes.iter().enumerate() {
            let mut n = Node::at_rest(ParticleId(i as u64), a * x_old);
            n.x_prev = *x_old;
            sub.owned.insert_node(n).unwrap();
        }
        let entries: Vec<(u64, Real, Vec3)> = (0..3)
            .map(|i| (i as u64, 1.0 / 3.0, Vec3::zeros()))
            .collect();
        let mut p = point_with_support(10, a * old_point, 1.0, 1.0, &entries);
        p.x_prev = old_point;
        p.df = a;
        sub.owned.insert_point(p).unwrap();
        derive_influence(&mut sub.owned, &sub.halo);
        assemble(&mut sub).unwrap();
        let skips = stabilize(&mut sub, 1.0).unwrap();
        assert_eq!(skips, 0);
        for i in 0..3 {
            let node = sub.owned.node(ParticleId(i)).unwrap();
            assert!(
                node.residual.norm() < 1e-12,
                "affine motion must produce no correction, got {:?}",
                node.residual
            );
        }

        // Perturb one node off the affine image; correction must equal the
        // hand-evaluated formula.
        let bump = Vec3::new(0.01, -0.02, 0.0);
        sub.owned.node_mut(ParticleId(1)).unwrap().x += bump;
        assemble(&mut sub).unwrap();
        stabilize(&mut sub, 1.0).unwrap();
        let node = sub.owned.node(ParticleId(1)).unwrap();
        let prev = old_nodes[1] - old_point;
        let expected = -(1.0 / 3.0) * bump / prev.norm();
        assert!(
            (node.residual - expected).norm() < 1e-14,
            "{:?} vs {expected:?}",
            node.residual
        );
    }

    #[test]
    fn zero_epsilon_leaves_residual_untouched() {
        let mut sub = Subdomain::new(0);
        let mut n = Node::at_rest(ParticleId(0), Vec3::zeros());
        n.residual = Vec3::new(1.0, 2.0, 3.0);
        sub.owned.insert_node(n).unwrap();
        assert_eq!(stabilize(&mut sub, 0.0).unwrap(), 0);
        assert_eq!(
            sub.owned.node(ParticleId(0)).unwrap().residual,
            Vec3::new(1.0, 2.0, 3.0)
        );
    }

    #[test]
    fn coincident_previous_positions_are_skipped_and_counted() {
        let mut sub = Subdomain::new(0);
        let mut n = Node::at_rest(ParticleId(0), Vec3::new(0.5, 0.0, 0.0));
        n.x_prev = Vec3::zeros();
        sub.owned.insert_node(n).unwrap();
        let mut p = point_with_support(1, Vec3::zeros(), 1.0, 1.0, &[(0, 1.0, Vec3::zeros())]);
        p.x_prev = Vec3::zeros(); // coincides with the node's previous position
        sub.owned.insert_point(p).unwrap();
        derive_influence(&mut sub.owned, &sub.halo);
        assemble(&mut sub).unwrap();
        assert_eq!(stabilize(&mut sub, 1.0).unwrap(), 1);
    }

    #[test]
    fn nodal_update_follows_central_difference() {
        let mut sub = Subdomain::new(0);
        // Uniform motion persists with zero force.
        let mut n = Node::at_rest(ParticleId(0), Vec3::zeros());
        n.mass = 2.0;
        n.du = Vec3::new(0.125, 0.0, 0.0);
        sub.owned.insert_node(n).unwrap();
        update_owned_nodes(&mut sub, 0.5);
        {
            let n = sub.owned.node(ParticleId(0)).unwrap();
            assert_eq!(n.du_next, Vec3::new(0.125, 0.0, 0.0));
            assert_eq!(n.x, Vec3::new(0.125, 0.0, 0.0));
            assert_eq!(n.x_prev, Vec3::zeros());
        }

        // Constant force: after k steps from rest, x = k(k+1)/2 · Δt²f/m
        // (exact in floating point for these power-of-two inputs).
        let mut sub = Subdomain::new(0);
        let mut n = Node::at_rest(ParticleId(0), Vec3::zeros());
        n.mass = 2.0;
        n.boundary_force = Vec3::new(8.0, 0.0, 0.0);
        sub.owned.insert_node(n).unwrap();
        for k in 1..=10u32 {
            update_owned_nodes(&mut sub, 0.5);
            let node = sub.owned.node_mut(ParticleId(0)).unwrap();
            node.du = node.du_next;
            let expected = (k * (k + 1) / 2) as Real * 0.25 * 8.0 / 2.0;
            assert_eq!(node.x[0], expected, "step {k}");
        }

        // Massless nodes are parked.
        let mut sub = Subdomain::new(0);
        let mut n = Node::at_rest(ParticleId(0), Vec3::new(1.0, 1.0, 1.0));
        n.du = Vec3::new(0.5, 0.0, 0.0);
        n.residual = Vec3::new(1e9, 0.0, 0.0);
        sub.owned.insert_node(n).unwrap();
        update_owned_nodes(&mut sub, 0.5);
        let n = sub.owned.node(ParticleId(0)).unwrap();
        assert_eq!(n.x, Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(n.du_next, Vec3::new(0.5, 0.0, 0.0));
    }

    /// Builds a subdomain whose single point has a well-formed max-ent
    /// support over the 8 corners of a unit cube.
    fn cube_subdomain() -> Subdomain {
        let mut sub = Subdomain::new(0);
        let mut corners = Vec::new();
        for i in 0..2u64 {
            for j in 0..2u64 {
                for k in 0..2u64 {
                    corners.push(Vec3::new(i as Real, j as Real, k as Real));
                }
            }
        }
        for (i, c) in corners.iter().enumerate() {
            sub.owned
                .insert_node(Node::at_rest(ParticleId(i as u64), *c))
                .unwrap();
        }
        let x = Vec3::new(0.4, 0.45, 0.55);
        let params = lme::ShapeParams::new(1.6, 1.0, 3).unwrap();
        let eval = lme::evaluate(&x, &corners, &params).unwrap();
        let entries: Vec<(u64, Real, Vec3)> = (0..8)
            .map(|i| (i as u64, eval.values[i], eval.gradients[i]))
            .collect();
        let mut p = point_with_support(100, x, 1.0, 1.0, &entries);
        p.spacing = 0.55; // plausible nearest-node distance
        p.support_radius = 1.2;
        sub.owned.insert_point(p).unwrap();
        sub
    }

    #[test]
    fn rigid_translation_gives_identity_increment() {
        let mut sub = cube_subdomain();
        let shift = Vec3::new(0.25, -0.5, 0.125);
        let x_before = sub.owned.point(ParticleId(100)).unwrap().x;
        for node in sub.owned.nodes_mut() {
            node.du_next = shift;
            node.x += shift;
        }
        update_owned_points(&mut sub, false).unwrap();
        let p = sub.owned.point(ParticleId(100)).unwrap();
        assert!((p.x - (x_before + shift)).norm() < 1e-13);
        assert!((p.df - Mat3::identity()).norm() < 1e-12);
        assert!((p.volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_motion_changes_nothing() {
        let mut sub = cube_subdomain();
        let before = sub.owned.point(ParticleId(100)).unwrap().clone();
        update_owned_points(&mut sub, false).unwrap();
        let p = sub.owned.point(ParticleId(100)).unwrap();
        assert!((p.x - before.x).norm() < 1e-14);
        assert_eq!(p.df, Mat3::identity());
        assert_eq!(p.volume, before.volume);
    }

    #[test]
    fn affine_motion_reproduces_gradient_and_volume() {
        let mut sub = cube_subdomain();
        let a = Mat3::new(0.02, 0.01, 0.0, -0.005, 0.03, 0.002, 0.001, 0.0, -0.01);
        for node in sub.owned.nodes_mut() {
            node.du_next = a * node.x;
            node.x += node.du_next;
        }
        update_owned_points(&mut sub, false).unwrap();
        let p = sub.owned.point(ParticleId(100)).unwrap();
        let expected = Mat3::identity() + a;
        assert!(
            (p.df - expected).norm() < 1e-8,
            "ΔF = {:?} vs I + A = {expected:?}",
            p.df
        );
        assert_relative_eq!(p.volume, expected.determinant(), epsilon = 1e-10);
    }

    #[test]
    fn inversion_is_fatal_unless_erosion_is_allowed() {
        let mut sub = cube_subdomain();
        // Collapse the cube through itself along x.
        for node in sub.owned.nodes_mut() {
            node.du_next = Vec3::new(-2.0 * node.x[0], 0.0, 0.0);
            node.x += node.du_next;
        }
        let err = update_owned_points(&mut sub, false).unwrap_err();
        assert!(matches!(err, Error::Inverted { .. }), "{err:?}");

        let mut sub = cube_subdomain();
        for node in sub.owned.nodes_mut() {
            node.du_next = Vec3::new(-2.0 * node.x[0], 0.0, 0.0);
            node.x += node.du_next;
        }
        update_owned_points(&mut sub, true).unwrap();
        let p = sub.owned.point(ParticleId(100)).unwrap();
        assert!(p.fractured);
        assert_eq!(p.sigma, Mat3::zeros());
    }

    #[test]
    fn fractured_points_keep_zero_stress_through_constitutive() {
        let mut sub = cube_subdomain();
        {
            let p = sub.owned.point_mut(ParticleId(100)).unwrap();
            p.fractured = true;
            p.sigma = Mat3::identity(); // stale garbage
        }
        constitutive_update(&mut sub, &j2_model(), 1e-4).unwrap();
        assert_eq!(
            sub.owned.point(ParticleId(100)).unwrap().sigma,
            Mat3::zeros()
        );
    }

    /// Eight collinear nodes split between two workers along x, one point
    /// per worker near the seam; verifies the node halo ships exactly the
    /// geometric overlap both ways.
    #[test]
    fn two_worker_node_halo_ships_exact_overlap() {
        use std::thread;
        use std::time::Duration;
        let endpoints = InProcNetwork::connect_with_timeout(2, Duration::from_secs(10));
        let results: Vec<(Vec<u64>, BTreeMap<u64, u64>)> = thread::scope(|scope| {
            let handles: Vec<_> = endpoints
                .into_iter()
                .map(|mut t| {
                    scope.spawn(move || {
                        let me = t.rank();
                        let mut sub = Subdomain::new(me);
                        // Nodes at integer x in [0,3] (rank 0) or [4,7] (rank 1).
                        for i in 0..4u64 {
                            let gx = me as u64 * 4 + i;
                            let mut n = Node::at_rest(
                                ParticleId(gx),
                                Vec3::new(gx as Real, 0.0, 0.0),
                            );
                            n.owner = me;
                            n.du_next = Vec3::zeros();
                            sub.owned.insert_node(n).unwrap();
                        }
                        // One point per rank near its inner boundary, with
                        // support radius 1.5.
                        let px = if me == 0 { 3.0 } else { 4.0 };
                        let mut p = MaterialPoint::undeformed(
                            ParticleId(100 + me as u64),
                            Vec3::new(px, 0.0, 0.0),
                            1.0,
                            1.0,
                            MaterialState::J2(j2_virgin_state()),
                        );
                        p.support_radius = 1.5;
                        p.spacing = 1.0;
                        p.owner = me;
                        sub.owned.insert_point(p).unwrap();

                        let info = halo_pass(&mut sub, &mut t, HaloKind::Nodes, 0.0).unwrap();
                        let halo_ids: Vec<u64> =
                            sub.halo.nodes().map(|n| n.id.0).collect();
                        let owners: BTreeMap<u64, u64> = sub
                            .halo
                            .nodes()
                            .map(|n| (n.id.0, n.owner as u64))
                            .collect();
                        assert!(info.width >= 1.5);
                        (halo_ids, owners)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        // Width = 1.5 (no motion). Rank 0's point box is {3}, so it must
        // receive rank 1's nodes with x ≤ 4.5: exactly {4}. Rank 1's point
        // box is {4}: it receives x ≥ 2.5: exactly {3}.
        assert_eq!(results[0].0, vec![4]);
        assert_eq!(results[1].0, vec![3]);
        assert_eq!(results[0].1[&4], 1, "halo node must record its owner");
        assert_eq!(results[1].1[&3], 0);
        // Both halo copies are flagged (checked via owner map presence).
    }

    #[test]
    fn single_worker_step_conserves_mass_and_reports_phases() {
        let mut ctx = basic_ctx();
        ctx.search.min_support = 4;
        let mut sub = Subdomain::new(0);
        // 3×3×3 node grid with 8 interior points (one per cell corner
        // offset), all in free flight.
        let mut nid = 0u64;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let mut n = Node::at_rest(
                        ParticleId(nid),
                        Vec3::new(i as Real, j as Real, k as Real),
                    );
                    let v = Vec3::new(1.0, 0.5, -0.25);
                    n.du = v * ctx.params.dt;
                    n.du_next = n.du;
                    n.x_prev = n.x - n.du;
                    sub.owned.insert_node(n).unwrap();
                    nid += 1;
                }
            }
        }
        let mut pid = 100u64;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let x = Vec3::new(
                        0.5 + i as Real,
                        0.5 + j as Real,
                        0.5 + k as Real,
                    );
                    let mut p = MaterialPoint::undeformed(
                        ParticleId(pid),
                        x,
                        2.0,
                        0.002,
                        ctx.model.virgin_state(),
                    );
                    p.density = 1000.0;
                    p.spacing = 0.9;
                    p.support_radius = 1.62;
                    p.x_prev = x - Vec3::new(1.0, 0.5, -0.25) * ctx.params.dt;
                    sub.owned.insert_point(p).unwrap();
                    pid += 1;
                }
            }
        }
        // Seed supports via a search pass equivalent: evaluate over nodes
        // within 1.62 of each point.
        let nodes: Vec<(ParticleId, Vec3)> =
            sub.owned.nodes().map(|n| (n.id, n.x)).collect();
        let point_ids: Vec<ParticleId> = sub.owned.points().map(|p| p.id).collect();
        for id in point_ids {
            let x = sub.owned.point(id).unwrap().x;
            let near: Vec<(ParticleId, Vec3)> = nodes
                .iter()
                .copied()
                .filter(|(_, nx)| (nx - x).norm() <= 1.62)
                .collect();
            let staged = evaluate_support(
                &x,
                &near,
                &basic_ctx(),
                1.62,
            )
            .unwrap();
            let p = sub.owned.point_mut(id).unwrap();
            p.support = staged.support;
            p.spacing = staged.spacing;
        }

        let mut transport = InProcNetwork::connect(1).into_iter().next().unwrap();
        initial_halos(&mut sub, &mut transport).unwrap();
        let mass_before = sub.owned.point_mass();
        for s in 0..5 {
            let report = step(&mut sub, &mut transport, &mut ctx, s).unwrap();
            assert_eq!(report.halo_nodes, 0);
            assert_eq!(report.halo_points, 0);
            assert!(!report.rebalanced);
            assert_eq!(report.halo_retries, 0);
            let names: Vec<&str> = report.phases.iter().map(|(n, _)| *n).collect();
            assert_eq!(
                names,
                vec![
                    "influence",
                    "assemble",
                    "stabilize",
                    "update_nodes",
                    "node_halo",
                    "rebalance",
                    "resolve_supports",
                    "update_points",
                    "constitutive",
                    "support_update",
                    "point_halo",
                    "total"
                ]
            );
            // Lumped mass equals point mass (partition of unity).
            let node_mass = sub.owned.node_mass();
            assert_relative_eq!(node_mass, mass_before, max_relative = 1e-12);
        }
        assert_eq!(sub.owned.point_mass().to_bits(), mass_before.to_bits());
        // Free flight: every point drifted by ~5·v·dt.
        let expected_drift = Vec3::new(1.0, 0.5, -0.25) * ctx.params.dt * 5.0;
        for p in sub.owned.points() {
            let drift = p.x
                - (p.x_prev - Vec3::new(1.0, 0.5, -0.25) * ctx.params.dt * 4.0);
            assert!(
                (drift - expected_drift).norm() < 1e-9,
                "point {} drifted {drift:?}",
                p.id
            );
        }
    }

    #[test]
    fn empty_subdomain_steps_without_error() {
        let mut ctx = basic_ctx();
        let mut sub = Subdomain::new(0);
        let mut transport = InProcNetwork::connect(1).into_iter().next().unwrap();
        let report = step(&mut sub, &mut transport, &mut ctx, 0).unwrap();
        assert_eq!(report.halo_nodes, 0);
        assert_eq!(report.halo_points, 0);
    }
}
