//! Recursive coordinate bisection (RCB) of a particle cloud.
//!
//! The cloud (nodes and material points pooled, unit weight each) is split
//! recursively along the longest axis of the current region's bounding
//! box. A k-way split hands ⌈k/2⌉ parts to the left child and ⌊k/2⌋ to the
//! right, with particle quotas proportional to the part counts, so any
//! part count k ≥ 1 balances to within one particle. Ordering along the
//! cut axis uses (coordinate, id) with total ordering of floats, making
//! the plan a pure function of the input set — identical on every rank
//! that computes it.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::math::{Real, Vec3};
use crate::store::ParticleId;

/// Result of one RCB pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    /// Owner rank of every input particle.
    pub assignment: BTreeMap<ParticleId, usize>,
    /// The (axis, coordinate) cut planes in recursion preorder.
    pub cuts: Vec<(usize, Real)>,
    /// Particles per rank; Σ equals the input count.
    pub part_counts: Vec<usize>,
}

impl PartitionPlan {
    /// Owner of `id`, or an error for a particle the plan has never seen.
    pub fn owner(&self, id: ParticleId) -> Result<usize> {
        self.assignment
            .get(&id)
            .copied()
            .ok_or(Error::UnknownId(id))
    }
}

/// Ratio of the largest part to the mean part size; 1.0 is perfect.
pub fn imbalance(counts: &[usize]) -> Result<Real> {
    let total: usize = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return Err(Error::Partition(
            "imbalance undefined for empty or all-zero part counts".into(),
        ));
    }
    let mean = total as Real / counts.len() as Real;
    let max = *counts.iter().max().expect("non-empty") as Real;
    Ok(max / mean)
}

/// When to trigger a repartition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RebalanceTrigger {
    /// Every `interval` steps, unconditionally.
    Interval,
    /// Whenever measured imbalance exceeds the threshold.
    Imbalance,
    /// At the interval, and only if the threshold is also exceeded.
    Both,
}

/// Rebalance cadence policy evaluated collectively each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RebalancePolicy {
    pub trigger: RebalanceTrigger,
    /// Step interval for the interval-based triggers.
    pub interval: usize,
    /// Imbalance ratio threshold for the imbalance-based triggers.
    pub max_imbalance: Real,
}

impl Default for RebalancePolicy {
    fn default() -> Self {
        RebalancePolicy {
            trigger: RebalanceTrigger::Both,
            interval: 500,
            max_imbalance: 1.2,
        }
    }
}

impl RebalancePolicy {
    /// Whether a repartition is due after completing step `step_index`
    /// (1-based: the first evaluation happens at the end of step 1).
    pub fn due(&self, step_index: usize, imbalance: Real) -> bool {
        let at_interval = self.interval > 0 && step_index > 0 && step_index % self.interval == 0;
        let over_threshold = imbalance > self.max_imbalance;
        match self.trigger {
            RebalanceTrigger::Interval => at_interval,
            RebalanceTrigger::Imbalance => over_threshold,
            RebalanceTrigger::Both => at_interval && over_threshold,
        }
    }
}

/// Number of particles the left child receives when `n` particles are
/// split across `k` parts, `kl` of which go left: proportional quotas that
/// keep every part within one particle of every other, globally.
fn left_quota(n: usize, k: usize, kl: usize) -> usize {
    kl * (n / k) + kl.min(n % k)
}

fn longest_axis(points: &[(ParticleId, Vec3)]) -> usize {
    let mut min = Vec3::from_element(Real::INFINITY);
    let mut max = Vec3::from_element(Real::NEG_INFINITY);
    for (_, x) in points {
        for a in 0..3 {
            min[a] = min[a].min(x[a]);
            max[a] = max[a].max(x[a]);
        }
    }
    let mut axis = 0;
    let mut best = max[0] - min[0];
    for a in 1..3 {
        let extent = max[a] - min[a];
        if extent > best {
            best = extent;
            axis = a;
        }
    }
    axis
}

fn recurse(
    points: &mut [(ParticleId, Vec3)],
    first_part: usize,
    k: usize,
    assignment: &mut BTreeMap<ParticleId, usize>,
    cuts: &mut Vec<(usize, Real)>,
) {
    if k == 1 {
        for (id, _) in points.iter() {
            assignment.insert(*id, first_part);
        }
        return;
    }
    let axis = longest_axis(points);
    points.sort_unstable_by(|(id_a, xa), (id_b, xb)| {
        xa[axis].total_cmp(&xb[axis]).then(id_a.cmp(id_b))
    });
    let kl = k.div_ceil(2);
    let nl = left_quota(points.len(), k, kl);
    let cut = 0.5 * (points[nl - 1].1[axis] + points[nl].1[axis]);
    cuts.push((axis, cut));
    let (left, right) = points.split_at_mut(nl);
    recurse(left, first_part, kl, assignment, cuts);
    recurse(right, first_part + kl, k - kl, assignment, cuts);
}

/// Partitions `particles` into `n_parts` geometric parts of near-equal
/// count. Input order is irrelevant; the plan depends only on the set.
pub fn rcb(particles: &[(ParticleId, Vec3)], n_parts: usize) -> Result<PartitionPlan> {
    if n_parts == 0 {
        return Err(Error::Partition("cannot partition into 0 parts".into()));
    }
    if particles.is_empty() {
        return Err(Error::Partition("cannot partition an empty cloud".into()));
    }
    if n_parts > particles.len() {
        return Err(Error::Partition(format!(
            "{} parts requested for {} particles",
            n_parts,
            particles.len()
        )));
    }
    let mut work = particles.to_vec();
    let mut assignment = BTreeMap::new();
    let mut cuts = Vec::new();
    recurse(&mut work, 0, n_parts, &mut assignment, &mut cuts);
    if assignment.len() != particles.len() {
        return Err(Error::Partition(format!(
            "duplicate particle ids in partition input: {} unique of {}",
            assignment.len(),
            particles.len()
        )));
    }
    let mut part_counts = vec![0usize; n_parts];
    for rank in assignment.values() {
        part_counts[*rank] += 1;
    }
    Ok(PartitionPlan {
        assignment,
        cuts,
        part_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(seed: u64, count: usize) -> Vec<(ParticleId, Vec3)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                (
                    ParticleId(i as u64),
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-2.0..2.0),
                    ),
                )
            })
            .collect()
    }

    #[test]
    fn collinear_four_split_two_two() {
        let particles: Vec<_> = (0..4)
            .map(|i| (ParticleId(i), Vec3::new(i as Real, 0.0, 0.0)))
            .collect();
        let plan = rcb(&particles, 2).unwrap();
        assert_eq!(plan.part_counts, vec![2, 2]);
        assert_eq!(plan.assignment[&ParticleId(0)], 0);
        assert_eq!(plan.assignment[&ParticleId(1)], 0);
        assert_eq!(plan.assignment[&ParticleId(2)], 1);
        assert_eq!(plan.assignment[&ParticleId(3)], 1);
        assert_eq!(plan.cuts.len(), 1);
        assert_eq!(plan.cuts[0], (0, 1.5));
    }

    #[test]
    fn counts_balance_within_one_for_any_part_count() {
        for parts in 2..=16 {
            for count in [parts, 97, 500, 1001] {
                let cloud = random_cloud(parts as u64, count);
                let plan = rcb(&cloud, parts).unwrap();
                let max = *plan.part_counts.iter().max().unwrap();
                let min = *plan.part_counts.iter().min().unwrap();
                assert!(
                    max - min <= 1,
                    "{parts} parts over {count}: counts {:?}",
                    plan.part_counts
                );
                assert_eq!(plan.part_counts.iter().sum::<usize>(), count);
            }
        }
    }

    #[test]
    fn five_part_plan_at_taylor_node_scale() {
        let cloud = random_cloud(42, 5_966);
        let plan = rcb(&cloud, 5).unwrap();
        let max = *plan.part_counts.iter().max().unwrap();
        let min = *plan.part_counts.iter().min().unwrap();
        assert!(max - min <= 1, "counts {:?}", plan.part_counts);
        // 5966 = 5·1193 + 1 → one part of 1194, four of 1193.
        assert_eq!(max, 1194);
        assert_eq!(min, 1193);
    }

    /// Geometric locality oracle: parts occupy pairwise interior-disjoint
    /// axis-aligned regions, so their point bounding boxes must be
    /// separable along some axis (touching at cut planes allowed).
    #[test]
    fn part_bounding_boxes_are_interior_disjoint() {
        for (seed, parts) in [(1u64, 2usize), (2, 3), (3, 4), (4, 7), (5, 8), (6, 13)] {
            let cloud = random_cloud(seed, 400);
            let plan = rcb(&cloud, parts).unwrap();
            let mut boxes = vec![
                (
                    Vec3::from_element(Real::INFINITY),
                    Vec3::from_element(Real::NEG_INFINITY)
                );
                parts
            ];
            for (id, x) in &cloud {
                let rank = plan.assignment[id];
                for a in 0..3 {
                    boxes[rank].0[a] = boxes[rank].0[a].min(x[a]);
                    boxes[rank].1[a] = boxes[rank].1[a].max(x[a]);
                }
            }
            for i in 0..parts {
                for j in i + 1..parts {
                    let separable = (0..3).any(|a| {
                        boxes[i].1[a] <= boxes[j].0[a] || boxes[j].1[a] <= boxes[i].0[a]
                    });
                    assert!(
                        separable,
                        "parts {i} and {j} overlap: {:?} vs {:?}",
                        boxes[i], boxes[j]
                    );
                }
            }
        }
    }

    #[test]
    fn plan_is_input_order_independent() {
        let cloud = random_cloud(9, 333);
        let plan = rcb(&cloud, 6).unwrap();
        let mut shuffled = cloud.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
        let plan2 = rcb(&shuffled, 6).unwrap();
        assert_eq!(plan, plan2);
    }

    #[test]
    fn coincident_positions_still_balance() {
        let cloud: Vec<_> = (0..10)
            .map(|i| (ParticleId(i), Vec3::new(1.0, 2.0, 3.0)))
            .collect();
        let plan = rcb(&cloud, 4).unwrap();
        let max = *plan.part_counts.iter().max().unwrap();
        let min = *plan.part_counts.iter().min().unwrap();
        assert!(max - min <= 1);
        // Tie-break by id: lowest ids to the lowest part.
        assert_eq!(plan.assignment[&ParticleId(0)], 0);
        assert_eq!(plan.assignment[&ParticleId(9)], 3);
    }

    #[test]
    fn degenerate_part_counts_are_rejected() {
        let cloud = random_cloud(1, 5);
        assert!(rcb(&cloud, 0).is_err());
        assert!(rcb(&cloud, 6).is_err());
        assert!(rcb(&[], 1).is_err());
        let plan = rcb(&cloud, 5).unwrap();
        assert!(plan.part_counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn imbalance_formula() {
        assert_eq!(imbalance(&[10, 10, 10]).unwrap(), 1.0);
        assert_eq!(imbalance(&[20, 10, 10]).unwrap(), 1.5);
        assert!(imbalance(&[]).is_err());
        assert!(imbalance(&[0, 0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let counts: Vec<usize> = (0..rng.gen_range(1..10))
                .map(|_| rng.gen_range(0..1000))
                .collect();
            if counts.iter().sum::<usize>() == 0 {
                continue;
            }
            let direct = *counts.iter().max().unwrap() as Real
                / (counts.iter().sum::<usize>() as Real / counts.len() as Real);
            assert_eq!(imbalance(&counts).unwrap(), direct);
        }
    }

    #[test]
    fn rebalance_policy_modes() {
        let both = RebalancePolicy::default();
        assert!(!both.due(500, 1.1), "interval alone must not trigger Both");
        assert!(both.due(500, 1.3));
        assert!(!both.due(499, 1.3));

        let interval = RebalancePolicy {
            trigger: RebalanceTrigger::Interval,
            interval: 100,
            max_imbalance: 1.2,
        };
        assert!(interval.due(100, 1.0));
        assert!(interval.due(200, 1.0));
        assert!(!interval.due(150, 9.0));
        assert!(!interval.due(0, 9.0));

        let by_imbalance = RebalancePolicy {
            trigger: RebalanceTrigger::Imbalance,
            interval: 100,
            max_imbalance: 1.2,
        };
        assert!(by_imbalance.due(7, 1.21));
        assert!(!by_imbalance.due(100, 1.2));
    }
}
