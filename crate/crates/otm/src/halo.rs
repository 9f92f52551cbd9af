//! Dynamic halo-region machinery: bounding boxes, neighbor detection,
//! halo-particle selection, and the size-then-payload exchange.
//!
//! Each worker advertises axis-aligned bounding boxes of its owned
//! particles. Two ranks are neighbors when one box, extended by the
//! current halo width, intersects the other (a symmetric relation, since
//! box distance is symmetric). Halo candidates are the owned particles
//! lying inside a neighbor's box extended by the same width; a particle
//! falling in several neighbors' regions is sent to each of them (halo
//! copies are read-only, so duplication is harmless).
//!
//! The exchange runs in two rounds per the transport contract: byte sizes
//! first (letting receivers pre-allocate), then payloads, with a protocol
//! error naming the peer on any size/payload mismatch.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::math::{Real, Vec3};
use crate::store::{ParticleId, ParticleStore};
use crate::transport::Transport;

/// Axis-aligned bounding box; an empty box has min = +∞, max = −∞ and
/// intersects nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl BoundingBox {
    pub fn empty() -> Self {
        BoundingBox {
            min: Vec3::from_element(Real::INFINITY),
            max: Vec3::from_element(Real::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for x in points {
            b.include(x);
        }
        b
    }

    pub fn include(&mut self, x: &Vec3) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(x[a]);
            self.max[a] = self.max[a].max(x[a]);
        }
    }

    pub fn merged(&self, other: &BoundingBox) -> BoundingBox {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = out.min[a].min(other.min[a]);
            out.max[a] = out.max[a].max(other.max[a]);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.min[a] > self.max[a])
    }

    /// The box grown by `width` on every face. Empty boxes stay empty.
    pub fn extended(&self, width: Real) -> BoundingBox {
        if self.is_empty() {
            return *self;
        }
        BoundingBox {
            min: self.min - Vec3::from_element(width),
            max: self.max + Vec3::from_element(width),
        }
    }

    /// Closed intersection test; empty boxes intersect nothing.
    pub fn intersects(&self, other: &BoundingBox) -> bool {
        if self.is_empty() || other.is_empty() {
            return false;
        }
        (0..3).all(|a| self.min[a] <= other.max[a] && other.min[a] <= self.max[a])
    }

    /// Closed point containment; empty boxes contain nothing.
    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|a| self.min[a] <= x[a] && x[a] <= self.max[a])
    }

    /// Smallest edge length (0 for empty boxes).
    pub fn min_dimension(&self) -> Real {
        if self.is_empty() {
            return 0.0;
        }
        (0..3)
            .map(|a| self.max[a] - self.min[a])
            .fold(Real::INFINITY, Real::min)
    }

    /// Six 8-byte little-endian words: min then max.
    pub fn encode(&self, out: &mut Vec<u8>) {
        for a in 0..3 {
            out.extend_from_slice(&self.min[a].to_le_bytes());
        }
        for a in 0..3 {
            out.extend_from_slice(&self.max[a].to_le_bytes());
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<(BoundingBox, &[u8])> {
        if bytes.len() < 48 {
            return Err(Error::Decode {
                offset: 0,
                detail: format!("bounding box needs 48 bytes, got {}", bytes.len()),
            });
        }
        let word = |i: usize| {
            f64::from_le_bytes(bytes[i * 8..(i + 1) * 8].try_into().expect("8-byte slice"))
        };
        let b = BoundingBox {
            min: Vec3::new(word(0), word(1), word(2)),
            max: Vec3::new(word(3), word(4), word(5)),
        };
        Ok((b, &bytes[48..]))
    }
}

/// Symmetric communication neighborhood of one rank: the same ranks act as
/// sources and targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    /// Neighbor ranks, ascending, self excluded.
    pub ranks: Vec<usize>,
    /// Ranks (possibly including self) whose box is thinner than the halo
    /// width in some dimension — a signal that the decomposition is too
    /// fine for the interaction radius and a rebalance may be warranted.
    pub thin_boxes: Vec<usize>,
}

/// Collective: every rank contributes its box, all receive the full list
/// indexed by rank.
pub fn all_gather_bboxes(
    transport: &mut dyn Transport,
    my_box: &BoundingBox,
) -> Result<Vec<BoundingBox>> {
    let mut payload = Vec::with_capacity(48);
    my_box.encode(&mut payload);
    let gathered = transport.all_gather(payload)?;
    let mut out = Vec::with_capacity(gathered.len());
    for (rank, bytes) in gathered.iter().enumerate() {
        let (b, rest) = BoundingBox::decode(bytes).map_err(|e| {
            Error::Protocol(format!("rank {rank} sent a malformed bounding box: {e}"))
        })?;
        if !rest.is_empty() {
            return Err(Error::Protocol(format!(
                "rank {rank} sent {} trailing bytes after its bounding box",
                rest.len()
            )));
        }
        out.push(b);
    }
    Ok(out)
}

/// Ranks whose box, extended by `r_max`, intersects mine (closed test).
/// Symmetric because extending either side by the same width tests the
/// same box distance. Also reports boxes thinner than `r_max`.
pub fn detect_neighbors(bboxes: &[BoundingBox], my_rank: usize, r_max: Real) -> Neighborhood {
    let mine = &bboxes[my_rank];
    let mut ranks = Vec::new();
    let mut thin_boxes = Vec::new();
    for (rank, other) in bboxes.iter().enumerate() {
        if !other.is_empty() && other.min_dimension() <= r_max && r_max > 0.0 {
            thin_boxes.push(rank);
        }
        if rank == my_rank {
            continue;
        }
        if other.extended(r_max).intersects(mine) {
            ranks.push(rank);
        }
    }
    Neighborhood { ranks, thin_boxes }
}

/// Ids of owned (non-halo) nodes inside `region`, ascending.
pub fn select_halo_nodes(store: &ParticleStore, region: &BoundingBox) -> Vec<ParticleId> {
    store
        .nodes()
        .filter(|n| !n.is_halo && region.contains(&n.x))
        .map(|n| n.id)
        .collect()
}

/// Ids of owned (non-halo) material points inside `region`, ascending.
pub fn select_halo_points(store: &ParticleStore, region: &BoundingBox) -> Vec<ParticleId> {
    store
        .points()
        .filter(|p| !p.is_halo && region.contains(&p.x))
        .map(|p| p.id)
        .collect()
}

/// Two-round neighborhood exchange: sizes, then payloads. `outgoing` must
/// hold exactly one message per neighbor; returns the received messages
/// keyed by source rank.
pub fn exchange(
    transport: &mut dyn Transport,
    neighborhood: &Neighborhood,
    outgoing: BTreeMap<usize, Vec<u8>>,
) -> Result<BTreeMap<usize, Vec<u8>>> {
    for rank in outgoing.keys() {
        if !neighborhood.ranks.contains(rank) {
            return Err(Error::Protocol(format!(
                "message addressed to rank {rank}, which is not a neighbor"
            )));
        }
    }
    for rank in &neighborhood.ranks {
        if !outgoing.contains_key(rank) {
            return Err(Error::Protocol(format!(
                "no message supplied for neighbor rank {rank}"
            )));
        }
    }
    // Round 1: sizes.
    for (&rank, message) in &outgoing {
        transport.send(rank, (message.len() as u64).to_le_bytes().to_vec())?;
    }
    // Round 2: payloads.
    for (&rank, message) in &outgoing {
        transport.send(rank, message.clone())?;
    }
    let mut received = BTreeMap::new();
    for &rank in &neighborhood.ranks {
        let size_bytes = transport.recv(rank)?;
        let declared: u64 = u64::from_le_bytes(size_bytes.as_slice().try_into().map_err(|_| {
            Error::Protocol(format!(
                "rank {rank} sent a malformed size header of {} bytes",
                size_bytes.len()
            ))
        })?);
        let payload = transport.recv(rank)?;
        if payload.len() as u64 != declared {
            return Err(Error::Protocol(format!(
                "rank {rank} declared {declared} bytes but sent {}",
                payload.len()
            )));
        }
        received.insert(rank, payload);
    }
    Ok(received)
}
