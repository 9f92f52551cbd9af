//! Keyed storage of nodes and material points with deterministic iteration.
//!
//! All maps are ordered by particle id, so every loop over a store visits
//! particles in ascending-id order regardless of insertion history. Each
//! accumulation in the solver (mass and residual assembly, diagnostics,
//! halo payloads) inherits that order, which is the property that makes
//! serial and multi-worker runs bitwise identical.

use crate::error::{Error, Result};
use crate::material::MaterialState;
use crate::math::{Mat3, Vec3};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Globally unique 64-bit particle identifier; never reused after removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParticleId(pub u64);

impl fmt::Display for ParticleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for ParticleId {
    fn from(v: u64) -> Self {
        ParticleId(v)
    }
}

/// Shape function value and spatial gradient of one support node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeContribution {
    /// Shape value N_I(x_p), dimensionless.
    pub value: f64,
    /// Shape gradient B_I(x_p), 1/m.
    pub gradient: Vec3,
}

/// Support domain of a material point: the nodes interpolating it, with
/// their shape values/gradients, iterated strictly ascending by node id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupportDomain {
    entries: BTreeMap<ParticleId, ShapeContribution>,
}

impl SupportDomain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn insert(&mut self, id: ParticleId, contribution: ShapeContribution) {
        self.entries.insert(id, contribution);
    }

    pub fn contains(&self, id: ParticleId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&self, id: ParticleId) -> Option<&ShapeContribution> {
        self.entries.get(&id)
    }

    /// Ascending-id iteration.
    pub fn iter(&self) -> impl Iterator<Item = (ParticleId, &ShapeContribution)> {
        self.entries.iter().map(|(id, c)| (*id, c))
    }

    /// Ascending node ids.
    pub fn ids(&self) -> impl Iterator<Item = ParticleId> + '_ {
        self.entries.keys().copied()
    }

    /// Sum of shape values (1 after recomputation, by partition of unity).
    pub fn shape_sum(&self) -> f64 {
        self.entries.values().map(|c| c.value).sum()
    }
}

impl FromIterator<(ParticleId, ShapeContribution)> for SupportDomain {
    fn from_iter<T: IntoIterator<Item = (ParticleId, ShapeContribution)>>(iter: T) -> Self {
        SupportDomain {
            entries: iter.into_iter().collect(),
        }
    }
}

/// A node: carrier of the kinematic unknowns and the lumped mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: ParticleId,
    /// Current position x_n, m.
    pub x: Vec3,
    /// Position at the previous step x_{n-1}, m (lags `x` by exactly one step).
    pub x_prev: Vec3,
    /// Displacement increment of the previous step Δu_n, m.
    pub du: Vec3,
    /// Displacement increment of the current step Δu_{n+1}, m.
    pub du_next: Vec3,
    /// Lumped mass m_I assembled this step, kg.
    pub mass: f64,
    /// Assembled (and stabilized) residual r_I, N.
    pub residual: Vec3,
    /// External/contact force p_I applied before the nodal update, N.
    pub boundary_force: Vec3,
    /// Accumulated tangential slip against the rigid tool while in contact, m.
    /// Persisted (and serialized) so stick/slip state survives migration.
    pub contact_slip: Vec3,
    /// Marked as boundary in the input mesh.
    pub is_boundary: bool,
    /// True for read-only halo copies received from a neighbor rank.
    pub is_halo: bool,
    /// Owning rank.
    pub owner: usize,
    /// Influence domain: ids of material points whose support contains this
    /// node; transpose of the supports, rebuilt every step.
    pub influence: BTreeSet<ParticleId>,
}

impl Node {
    /// A resting node at `x` with empty dynamic state.
    pub fn at_rest(id: ParticleId, x: Vec3) -> Self {
        Node {
            id,
            x,
            x_prev: x,
            du: Vec3::zeros(),
            du_next: Vec3::zeros(),
            mass: 0.0,
            residual: Vec3::zeros(),
            boundary_force: Vec3::zeros(),
            contact_slip: Vec3::zeros(),
            is_boundary: false,
            is_halo: false,
            owner: 0,
            influence: BTreeSet::new(),
        }
    }
}

/// A material point: carrier of mass, volume, deformation and stress.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialPoint {
    pub id: ParticleId,
    /// Current position x_{p,n}, m.
    pub x: Vec3,
    /// Position at the previous step x_{p,n-1}, m.
    pub x_prev: Vec3,
    /// Mass m_p, kg; constant for the particle's lifetime.
    pub mass: f64,
    /// Current volume v_{p,n}, m^3.
    pub volume: f64,
    /// Current density ρ = mass/volume, kg/m^3.
    pub density: f64,
    /// Deformation gradient F_{p,n}.
    pub f: Mat3,
    /// Incremental deformation gradient ΔF_{p,n} of the last step.
    pub df: Mat3,
    /// Cauchy stress σ_{p,n}, Pa.
    pub sigma: Mat3,
    /// Body force per unit mass b̂_p, N/kg.
    pub body_force: Vec3,
    /// Interpolating nodes with shape values/gradients.
    pub support: SupportDomain,
    /// Radius of the ball that produced the current support, m. Upper bound
    /// on the distance to any support node at search time; drives halo widths.
    pub support_radius: f64,
    /// Characteristic nodal spacing h_p: distance to the nearest support node
    /// at the last search, m. Sets the shape locality β = γ/h_p².
    pub spacing: f64,
    /// Constitutive state.
    pub state: MaterialState,
    /// Fracture flag: absorbing; fractured points keep mass but carry zero
    /// stress and are excluded from constitutive and search updates.
    pub fractured: bool,
    /// True for read-only halo copies received from a neighbor rank.
    pub is_halo: bool,
    /// Owning rank.
    pub owner: usize,
}

impl MaterialPoint {
    /// An undeformed material point at `x` with the given mass and volume.
    pub fn undeformed(id: ParticleId, x: Vec3, mass: f64, volume: f64, state: MaterialState) -> Self {
        MaterialPoint {
            id,
            x,
            x_prev: x,
            mass,
            volume,
            density: mass / volume,
            f: Mat3::identity(),
            df: Mat3::identity(),
            sigma: Mat3::zeros(),
            body_force: Vec3::zeros(),
            support: SupportDomain::new(),
            support_radius: 0.0,
            spacing: 0.0,
            state,
            fractured: false,
            is_halo: false,
            owner: 0,
        }
    }
}

/// Either particle kind, as returned by [`ParticleStore::remove`].
#[derive(Debug, Clone, PartialEq)]
pub enum Particle {
    Node(Node),
    Point(MaterialPoint),
}

impl Particle {
    pub fn id(&self) -> ParticleId {
        match self {
            Particle::Node(n) => n.id,
            Particle::Point(p) => p.id,
        }
    }

    pub fn position(&self) -> Vec3 {
        match self {
            Particle::Node(n) => n.x,
            Particle::Point(p) => p.x,
        }
    }
}

/// Keyed storage for one worker's particles (owned, or one halo).
///
/// Ids are unique across both kinds. Iteration of either kind is ascending
/// by id; two stores with equal contents iterate identically regardless of
/// how they were built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParticleStore {
    nodes: BTreeMap<ParticleId, Node>,
    points: BTreeMap<ParticleId, MaterialPoint>,
}

impl ParticleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len() + self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.points.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.points.clear();
    }

    pub fn contains(&self, id: ParticleId) -> bool {
        self.nodes.contains_key(&id) || self.points.contains_key(&id)
    }

    pub fn insert_node(&mut self, node: Node) -> Result<()> {
        if self.contains(node.id) {
            return Err(Error::DuplicateId(node.id));
        }
        self.nodes.insert(node.id, node);
        Ok(())
    }

    pub fn insert_point(&mut self, point: MaterialPoint) -> Result<()> {
        if self.contains(point.id) {
            return Err(Error::DuplicateId(point.id));
        }
        self.points.insert(point.id, point);
        Ok(())
    }

    pub fn insert(&mut self, particle: Particle) -> Result<()> {
        match particle {
            Particle::Node(n) => self.insert_node(n),
            Particle::Point(p) => self.insert_point(p),
        }
    }

    /// Removes and returns the particle with `id` (either kind).
    pub fn remove(&mut self, id: ParticleId) -> Result<Particle> {
        if let Some(n) = self.nodes.remove(&id) {
            return Ok(Particle::Node(n));
        }
        if let Some(p) = self.points.remove(&id) {
            return Ok(Particle::Point(p));
        }
        Err(Error::UnknownId(id))
    }

    pub fn node(&self, id: ParticleId) -> Result<&Node> {
        self.nodes.get(&id).ok_or(Error::UnknownId(id))
    }

    pub fn node_mut(&mut self, id: ParticleId) -> Result<&mut Node> {
        self.nodes.get_mut(&id).ok_or(Error::UnknownId(id))
    }

    pub fn point(&self, id: ParticleId) -> Result<&MaterialPoint> {
        self.points.get(&id).ok_or(Error::UnknownId(id))
    }

    pub fn point_mut(&mut self, id: ParticleId) -> Result<&mut MaterialPoint> {
        self.points.get_mut(&id).ok_or(Error::UnknownId(id))
    }

    pub fn get_node(&self, id: ParticleId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn get_point(&self, id: ParticleId) -> Option<&MaterialPoint> {
        self.points.get(&id)
    }

    /// Nodes in ascending-id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn nodes_mut(&mut self) -> impl Iterator<Item = &mut Node> {
        self.nodes.values_mut()
    }

    /// Material points in ascending-id order.
    pub fn points(&self) -> impl Iterator<Item = &MaterialPoint> {
        self.points.values()
    }

    pub fn points_mut(&mut self) -> impl Iterator<Item = &mut MaterialPoint> {
        self.points.values_mut()
    }

    /// Ids of all particles (both kinds), ascending.
    pub fn ids(&self) -> Vec<ParticleId> {
        let mut ids: Vec<ParticleId> = self.nodes.keys().copied().collect();
        ids.extend(self.points.keys().copied());
        ids.sort_unstable();
        ids
    }

    /// Sum of material point masses, accumulated in ascending-id order.
    pub fn point_mass(&self) -> f64 {
        self.points.values().map(|p| p.mass).sum()
    }

    /// Sum of lumped nodal masses, accumulated in ascending-id order.
    pub fn node_mass(&self) -> f64 {
        self.nodes.values().map(|n| n.mass).sum()
    }
}

/// Rebuilds the influence domain of every node in `owned` as the transpose
/// of the support domains of the material points in `owned` and `halo_points`:
/// influence(I) = { p : I ∈ support(p) }.
///
/// Nodes appearing in no support end up with an empty influence set; they
/// assemble zero mass and are skipped by the nodal update.
pub fn derive_influence(owned: &mut ParticleStore, halo_points: &ParticleStore) {
    for node in owned.nodes.values_mut() {
        node.influence.clear();
    }
    // Owned points first, then halo points; both ascending. Insertion order
    // does not matter for the resulting sorted sets.
    let point_supports = owned
        .points
        .iter()
        .map(|(id, p)| (*id, &p.support))
        .chain(halo_points.points.iter().map(|(id, p)| (*id, &p.support)));
    let mut edges: Vec<(ParticleId, ParticleId)> = Vec::new();
    for (pid, support) in point_supports {
        for nid in support.ids() {
            edges.push((nid, pid));
        }
    }
    for (nid, pid) in edges {
        if let Some(node) = owned.nodes.get_mut(&nid) {
            node.influence.insert(pid);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{j2_virgin_state, MaterialState};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn node(id: u64) -> Node {
        Node::at_rest(ParticleId(id), Vec3::new(id as f64, 0.0, 0.0))
    }

    fn point(id: u64) -> MaterialPoint {
        MaterialPoint::undeformed(
            ParticleId(id),
            Vec3::new(id as f64, 1.0, 0.0),
            1.0,
            1.0,
            MaterialState::J2(j2_virgin_state()),
        )
    }

    #[test]
    fn single_insert_and_lookup() {
        let mut store = ParticleStore::new();
        store.insert_node(node(7)).unwrap();
        assert_eq!(store.node_count(), 1);
        assert_eq!(store.node(ParticleId(7)).unwrap().id, ParticleId(7));
    }

    #[test]
    fn iteration_is_sorted_regardless_of_insert_order() {
        let mut store = ParticleStore::new();
        for id in [3u64, 1, 2] {
            store.insert_node(node(id)).unwrap();
        }
        let ids: Vec<u64> = store.nodes().map(|n| n.id.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn duplicate_id_rejected_across_kinds() {
        let mut store = ParticleStore::new();
        store.insert_node(node(5)).unwrap();
        let err = store.insert_point(point(5)).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ParticleId(5))));
    }

    #[test]
    fn ten_thousand_random_ids_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ids: Vec<u64> = (0..10_000u64).map(|_| rng.gen()).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut store = ParticleStore::new();
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut rng);
        for &id in &shuffled {
            store.insert_node(node(id)).unwrap();
        }
        for &id in &ids {
            assert!(store.node(ParticleId(id)).is_ok());
        }
        assert_eq!(store.node_count(), ids.len());
    }

    #[test]
    fn remove_middle_and_missing() {
        let mut store = ParticleStore::new();
        for id in 1..=3u64 {
            store.insert_node(node(id)).unwrap();
        }
        let removed = store.remove(ParticleId(2)).unwrap();
        assert_eq!(removed.id(), ParticleId(2));
        let ids: Vec<u64> = store.nodes().map(|n| n.id.0).collect();
        assert_eq!(ids, vec![1, 3]);
        assert!(matches!(
            store.remove(ParticleId(2)),
            Err(Error::UnknownId(ParticleId(2)))
        ));
    }

    #[test]
    fn remove_then_reinsert_restores_store() {
        let mut store = ParticleStore::new();
        for id in [4u64, 9, 2] {
            store.insert_point(point(id)).unwrap();
        }
        let snapshot = store.clone();
        let removed = store.remove(ParticleId(9)).unwrap();
        store.insert(removed).unwrap();
        assert_eq!(store, snapshot);
    }

    /// Oracle: replay the same insert/remove sequence against a plain sorted
    /// list of ids and compare final contents.
    #[test]
    fn random_insert_remove_matches_sorted_list_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut store = ParticleStore::new();
        let mut oracle: Vec<u64> = Vec::new();
        for _ in 0..5_000 {
            let id = rng.gen_range(0..600u64);
            if oracle.binary_search(&id).is_ok() {
                store.remove(ParticleId(id)).unwrap();
                let pos = oracle.binary_search(&id).unwrap();
                oracle.remove(pos);
            } else {
                store.insert_node(node(id)).unwrap();
                let pos = oracle.binary_search(&id).unwrap_err();
                oracle.insert(pos, id);
            }
        }
        let ids: Vec<u64> = store.nodes().map(|n| n.id.0).collect();
        assert_eq!(ids, oracle);
    }

    fn shape(v: f64) -> ShapeContribution {
        ShapeContribution {
            value: v,
            gradient: Vec3::zeros(),
        }
    }

    #[test]
    fn influence_of_single_point() {
        let mut store = ParticleStore::new();
        store.insert_node(node(1)).unwrap();
        store.insert_node(node(2)).unwrap();
        let mut p = point(10);
        p.support.insert(ParticleId(1), shape(0.5));
        p.support.insert(ParticleId(2), shape(0.5));
        store.insert_point(p).unwrap();

        derive_influence(&mut store, &ParticleStore::new());
        let expect: BTreeSet<ParticleId> = [ParticleId(10)].into_iter().collect();
        assert_eq!(store.node(ParticleId(1)).unwrap().influence, expect);
        assert_eq!(store.node(ParticleId(2)).unwrap().influence, expect);
    }

    #[test]
    fn influence_empty_without_points() {
        let mut store = ParticleStore::new();
        store.insert_node(node(1)).unwrap();
        derive_influence(&mut store, &ParticleStore::new());
        assert!(store.node(ParticleId(1)).unwrap().influence.is_empty());
    }

    /// Oracle: brute-force transpose of a random bipartite support graph.
    #[test]
    fn influence_matches_brute_force_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let mut store = ParticleStore::new();
        let mut halo = ParticleStore::new();
        let node_ids: Vec<u64> = (0..40).collect();
        for &id in &node_ids {
            store.insert_node(node(id)).unwrap();
        }
        let mut oracle: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
        for pid in 100..180u64 {
            let mut p = point(pid);
            for &nid in &node_ids {
                if rng.gen_bool(0.15) {
                    p.support.insert(ParticleId(nid), shape(0.1));
                    oracle.entry(nid).or_default().insert(pid);
                }
            }
            if pid % 2 == 0 {
                store.insert_point(p).unwrap();
            } else {
                halo.insert_point(p).unwrap();
            }
        }
        derive_influence(&mut store, &halo);
        for &nid in &node_ids {
            let got: BTreeSet<u64> = store
                .node(ParticleId(nid))
                .unwrap()
                .influence
                .iter()
                .map(|p| p.0)
                .collect();
            assert_eq!(got, oracle.get(&nid).cloned().unwrap_or_default());
        }
    }

    /// Bidirectional consistency: p ∈ influence(I) ⇔ I ∈ support(p).
    #[test]
    fn influence_support_bidirectional() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParticleStore::new();
        for id in 0..30u64 {
            store.insert_node(node(id)).unwrap();
        }
        for pid in 50..90u64 {
            let mut p = point(pid);
            for nid in 0..30u64 {
                if rng.gen_bool(0.2) {
                    p.support.insert(ParticleId(nid), shape(0.1));
                }
            }
            store.insert_point(p).unwrap();
        }
        derive_influence(&mut store, &ParticleStore::new());
        let nodes: Vec<Node> = store.nodes().cloned().collect();
        let points: Vec<MaterialPoint> = store.points().cloned().collect();
        for n in &nodes {
            for p in &points {
                assert_eq!(
                    n.influence.contains(&p.id),
                    p.support.contains(n.id),
                    "node {} / point {}",
                    n.id,
                    p.id
                );
            }
        }
    }

    #[test]
    fn equal_contents_iterate_identically() {
        let ids = [8u64, 3, 12, 1, 40, 22];
        let mut a = ParticleStore::new();
        let mut b = ParticleStore::new();
        for &id in &ids {
            a.insert_node(node(id)).unwrap();
        }
        for &id in ids.iter().rev() {
            b.insert_node(node(id)).unwrap();
        }
        let ia: Vec<u64> = a.nodes().map(|n| n.id.0).collect();
        let ib: Vec<u64> = b.nodes().map(|n| n.id.0).collect();
        assert_eq!(ia, ib);
    }
}
