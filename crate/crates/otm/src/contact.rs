//! Rigid-surface contact for nodes.
//!
//! Two surface kinds are supported:
//!
//! * [`RigidWall`] — an infinite frictionless plane enforced as a hard
//!   constraint: after the nodal update, any node on the wrong side is
//!   projected back onto the plane (its displacement increment is
//!   overridden), leaving tangential motion untouched.
//! * [`RigidTool`] — a rigid piecewise-linear profile in the x–y plane,
//!   extruded in z, translating at a constant velocity. Penetrating nodes
//!   receive a penalty normal force plus a stick/slip Coulomb friction
//!   force, added to the node's external force **before** the nodal update.
//!
//! Stick friction needs per-node memory of the accumulated tangential
//! offset while in continuous contact; that state lives on the node
//! (`contact_slip`) so it migrates with the node across workers, and is
//! reset whenever contact is lost.

use crate::error::{Error, Result};
use crate::math::{Real, Vec3};
use crate::store::Node;

/// Infinite rigid plane. Nodes are kept on the side the normal points to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidWall {
    /// Any point on the plane, m.
    pub point: Vec3,
    /// Unit outward normal (pointing into free space).
    pub normal: Vec3,
}

impl RigidWall {
    /// Builds a wall from a point and a (not necessarily unit) normal.
    pub fn new(point: Vec3, normal: Vec3) -> Result<Self> {
        let len = normal.norm();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::Config(format!(
                "wall normal must be a nonzero finite vector, got {normal:?}"
            )));
        }
        Ok(RigidWall {
            point,
            normal: normal / len,
        })
    }

    /// Signed distance of `x` from the plane (positive on the free side).
    pub fn gap(&self, x: &Vec3) -> Real {
        (x - self.point).dot(&self.normal)
    }
}

/// Projects a just-updated node back onto the wall if it penetrated.
///
/// The node's candidate position `x` (already advanced by `du_next`) is
/// moved along the wall normal to the plane, and `du_next` is rewritten so
/// the stored increment stays consistent with the overridden position.
/// Tangential coordinates are unchanged (frictionless). Idempotent.
pub fn wall_enforce(node: &mut Node, wall: &RigidWall, _dt: Real) {
    let g = wall.gap(&node.x);
    if g < 0.0 {
        node.x -= g * wall.normal;
        node.du_next = node.x - node.x_prev;
    }
}

/// Rigid tool: an open polyline profile in the x–y plane (extruded in z),
/// translating rigidly at `velocity`. The free side of each segment is the
/// left of its direction of travel, so profiles are authored
/// counter-clockwise around the tool material.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTool {
    /// Profile vertices in the x–y plane at time zero, m (z ignored).
    profile: Vec<Vec3>,
    /// Rigid translation velocity, m/s.
    pub velocity: Vec3,
    /// Accumulated rigid translation, m.
    pub offset: Vec3,
    /// Normal penalty stiffness, N/m.
    pub c_n: Real,
    /// Tangential (stick) penalty stiffness, N/m.
    pub c_t: Real,
    /// Coulomb friction coefficient (dimensionless).
    pub mu_f: Real,
}

/// Result of a closest-point query against the tool profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolProjection {
    /// Closest point on the profile (current position), m.
    pub closest: Vec3,
    /// Outward unit normal of the owning segment (z = 0).
    pub normal: Vec3,
    /// Signed gap: positive on the free side, negative when penetrating, m.
    pub gap: Real,
    /// Index of the owning segment (lowest index wins ties).
    pub segment: usize,
}

fn segments_intersect(a: (Vec3, Vec3), b: (Vec3, Vec3)) -> bool {
    // 2-D proper-intersection test via orientation signs (shared endpoints
    // between adjacent segments are excluded by the caller).
    let orient = |p: &Vec3, q: &Vec3, r: &Vec3| -> Real {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let d1 = orient(&a.0, &a.1, &b.0);
    let d2 = orient(&a.0, &a.1, &b.1);
    let d3 = orient(&b.0, &b.1, &a.0);
    let d4 = orient(&b.0, &b.1, &a.1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

impl RigidTool {
    pub fn new(
        profile: Vec<Vec3>,
        velocity: Vec3,
        c_n: Real,
        c_t: Real,
        mu_f: Real,
    ) -> Result<Self> {
        if profile.len() < 2 {
            return Err(Error::Config(format!(
                "tool profile needs at least 2 vertices, got {}",
                profile.len()
            )));
        }
        if !(c_n > 0.0) || !(c_t > 0.0) {
            return Err(Error::Config(format!(
                "tool penalties must be positive, got c_n = {c_n}, c_t = {c_t}"
            )));
        }
        if !(mu_f >= 0.0) {
            return Err(Error::Config(format!(
                "friction coefficient must be non-negative, got {mu_f}"
            )));
        }
        for i in 0..profile.len() - 1 {
            if (profile[i + 1] - profile[i]).xy().norm() == 0.0 {
                return Err(Error::Config(format!(
                    "tool profile segment {i} has zero length in the x-y plane"
                )));
            }
            for j in i + 2..profile.len() - 1 {
                if segments_intersect(
                    (profile[i], profile[i + 1]),
                    (profile[j], profile[j + 1]),
                ) {
                    return Err(Error::Config(format!(
                        "tool profile self-intersects (segments {i} and {j})"
                    )));
                }
            }
        }
        Ok(RigidTool {
            profile,
            velocity,
            offset: Vec3::zeros(),
            c_n,
            c_t,
            mu_f,
        })
    }

    /// Advances the rigid translation by one time step.
    pub fn advance(&mut self, dt: Real) {
        self.offset += self.velocity * dt;
    }

    /// Closest-point projection of `x` onto the current profile, in the
    /// x–y plane. Equidistant segments tie-break to the lowest index.
    pub fn project(&self, x: &Vec3) -> ToolProjection {
        let p = Vec3::new(x[0], x[1], 0.0);
        let mut best: Option<ToolProjection> = None;
        let mut best_d2 = Real::INFINITY;
        for i in 0..self.profile.len() - 1 {
            let a = self.profile[i] + self.offset;
            let b = self.profile[i + 1] + self.offset;
            let a = Vec3::new(a[0], a[1], 0.0);
            let b = Vec3::new(b[0], b[1], 0.0);
            let ab = b - a;
            let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
            let closest = a + t * ab;
            let d2 = (p - closest).norm_squared();
            if d2 < best_d2 {
                let dir = ab.normalize();
                let normal = Vec3::new(-dir[1], dir[0], 0.0); // left of travel
                let gap = (p - closest).dot(&normal);
                best_d2 = d2;
                best = Some(ToolProjection {
                    closest,
                    normal,
                    gap,
                    segment: i,
                });
            }
        }
        best.expect("profile has at least one segment")
    }
}

/// Penalty/Coulomb contact force of the tool on one node.
///
/// Returns the force to add to the node's external force before the nodal
/// update, and maintains the node's stick memory (`contact_slip`): the
/// tangential offset accumulated over continuous contact, reset on release
/// and clamped to the Coulomb cone on slip.
pub fn tool_contact_force(node: &mut Node, tool: &RigidTool, dt: Real) -> Vec3 {
    let proj = tool.project(&node.x);
    if proj.gap >= 0.0 {
        node.contact_slip = Vec3::zeros();
        return Vec3::zeros();
    }
    let n = proj.normal;
    // Outward penalty force, proportional to penetration depth.
    let normal_magnitude = tool.c_n * (-proj.gap);
    let normal_force = normal_magnitude * n;

    // Incremental tangential motion of the node relative to the tool over
    // the last step, projected onto the tool surface (x-y plane only).
    let relative = node.du - tool.velocity * dt;
    let relative = Vec3::new(relative[0], relative[1], 0.0);
    let increment = relative - relative.dot(&n) * n;
    node.contact_slip += increment;

    let trial = -tool.c_t * node.contact_slip;
    let cap = tool.mu_f * normal_magnitude;
    let tangential_force = if trial.norm() <= cap {
        trial
    } else {
        let rate_dir = if increment.norm() > 0.0 {
            increment / increment.norm()
        } else if node.contact_slip.norm() > 0.0 {
            node.contact_slip / node.contact_slip.norm()
        } else {
            return normal_force;
        };
        // Slip: cap the force on the friction cone and relax the stored
        // stick offset onto the cone so stick memory cannot grow unboundedly.
        node.contact_slip = (cap / tool.c_t) * rate_dir;
        -cap * rate_dir
    };
    normal_force + tangential_force
}
