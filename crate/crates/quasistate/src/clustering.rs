//! Bisecting k-means over embedded states, state timelines and
//! potential-guided cluster merging.
//!
//! Clustering starts from a single cluster holding every state point and
//! repeatedly splits the leaf with the largest mean member-to-center
//! distance with 2-means until every leaf is smaller than the threshold.
//! The split history forms a binary tree whose node ids double as cluster
//! ids. Everything is deterministic given `(points, threshold, seed)`:
//! each 2-means runs a fixed number of restarts whose seeds derive from the
//! model seed, restart 0 starts from the two members farthest apart, and
//! ties are broken by the lower restart index.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{euclidean, StatePoint};
use crate::langevin::PotentialCurve;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("{0}")]
    Invalid(String),
    #[error("cannot split: all points identical")]
    CannotSplit,
    #[error("cluster {0} is not a live cluster")]
    DeadCluster(usize),
    #[error("unknown cluster id {0}")]
    UnknownCluster(usize),
}

/// Number of seeded 2-means restarts per split.
const RESTARTS: usize = 10;
/// Lloyd iteration cap per restart.
const MAX_LLOYD_ITER: usize = 200;

/// One node of the split tree. Leaves of the fitted tree are clusters;
/// merge operations add synthetic nodes on top.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterNode {
    pub id: usize,
    /// Indices into the fitted point sequence, ascending.
    pub members: Vec<usize>,
    pub center: Vec<f64>,
    /// Mean member-to-center distance.
    pub mean_dist: f64,
    pub parent: Option<usize>,
    pub children: Option<(usize, usize)>,
    /// Leaf left above threshold because its points are identical.
    pub frozen: bool,
    /// For merge nodes: the clusters that were combined.
    pub merged_from: Option<Vec<usize>>,
    /// Set on clusters that were absorbed by a merge.
    pub merged_into: Option<usize>,
}

impl ClusterNode {
    pub fn is_live(&self) -> bool {
        self.children.is_none() && self.merged_into.is_none()
    }
}

/// Fitted bisecting k-means model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterModel {
    pub nodes: Vec<ClusterNode>,
    /// Owning live-cluster id per fitted point.
    pub labels: Vec<usize>,
    pub threshold: f64,
    pub seed: u64,
    pub dim: usize,
}

impl ClusterModel {
    /// Ids of live clusters (unsplit, unmerged), ascending.
    pub fn live_clusters(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.is_live())
            .map(|n| n.id)
            .collect()
    }

    pub fn node(&self, id: usize) -> Result<&ClusterNode, ClusterError> {
        self.nodes.get(id).ok_or(ClusterError::UnknownCluster(id))
    }

    /// Ancestor ids of `id`, child-to-root, excluding `id` itself.
    fn ancestors(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out
    }

    /// Deepest common ancestor of a set of nodes, if they have any.
    /// Merge nodes have no parent, so sets containing them have none.
    pub fn common_ancestor(&self, ids: &[usize]) -> Option<usize> {
        let mut iter = ids.iter();
        let first = *iter.next()?;
        let mut chain = self.ancestors(first);
        for &id in iter {
            let other = self.ancestors(id);
            chain.retain(|a| other.contains(a));
            if chain.is_empty() {
                return None;
            }
        }
        chain.first().copied()
    }

    /// Indented text dump of the split tree with member counts and mean
    /// distances; merge nodes are appended after the tree.
    pub fn tree_dump(&self) -> String {
        fn rec(model: &ClusterModel, id: usize, depth: usize, out: &mut String) {
            let n = &model.nodes[id];
            let status = if n.children.is_some() {
                "split"
            } else if n.frozen {
                "leaf (frozen)"
            } else if n.merged_into.is_some() {
                "leaf (merged)"
            } else {
                "leaf"
            };
            out.push_str(&format!(
                "{}cluster {}: {} members, mean distance {:.6} [{}]\n",
                "  ".repeat(depth),
                n.id,
                n.members.len(),
                n.mean_dist,
                status
            ));
            if let Some((a, b)) = n.children {
                rec(model, a, depth + 1, out);
                rec(model, b, depth + 1, out);
            }
        }
        let mut out = String::new();
        if !self.nodes.is_empty() {
            rec(self, 0, 0, &mut out);
        }
        for n in &self.nodes {
            if let Some(from) = &n.merged_from {
                out.push_str(&format!(
                    "merged cluster {}: {} members, mean distance {:.6}, combines {:?}\n",
                    n.id,
                    n.members.len(),
                    n.mean_dist,
                    from
                ));
            }
        }
        out
    }
}

/// Per-time state occupancy.
#[derive(Debug, Clone)]
pub struct StateTimeline {
    pub times: Vec<usize>,
    pub states: Vec<usize>,
}

impl StateTimeline {
    pub fn occupancy(&self, state: usize) -> Vec<bool> {
        self.states.iter().map(|&s| s == state).collect()
    }
}

/// Distance of every state point to one cluster center.
#[derive(Debug, Clone)]
pub struct DistanceSeries {
    pub times: Vec<usize>,
    pub values: Vec<f64>,
    pub reference: usize,
}

/// Result of a single 2-means split.
#[derive(Debug, Clone)]
pub struct Split {
    pub members: [Vec<usize>; 2],
    pub centers: [Vec<f64>; 2],
    pub ssq: f64,
}

fn mean_of(points: &[StatePoint], members: &[usize], dim: usize) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    for &i in members {
        for (acc, v) in c.iter_mut().zip(&points[i].coords) {
            *acc += v;
        }
    }
    let n = members.len() as f64;
    for v in c.iter_mut() {
        *v /= n;
    }
    c
}

fn mean_dist_of(points: &[StatePoint], members: &[usize], center: &[f64]) -> f64 {
    let s: f64 = members
        .iter()
        .map(|&i| euclidean(&points[i].coords, center))
        .sum();
    s / members.len() as f64
}

/// 2-means over the given points (Lloyd iteration, best of [`RESTARTS`]
/// seeded restarts by within-cluster sum of squared distances).
pub fn kmeans2(points: &[StatePoint], seed: u64) -> Result<Split, ClusterError> {
    let members: Vec<usize> = (0..points.len()).collect();
    kmeans2_on(points, &members, seed)
}

fn kmeans2_on(points: &[StatePoint], members: &[usize], seed: u64) -> Result<Split, ClusterError> {
    if members.len() < 2 {
        return Err(ClusterError::Invalid(format!(
            "need at least 2 points to split, got {}",
            members.len()
        )));
    }
    let dim = points[members[0]].dim();
    let all_identical = members
        .iter()
        .all(|&i| points[i].coords == points[members[0]].coords);
    if all_identical {
        return Err(ClusterError::CannotSplit);
    }

    // Restart 0 is deterministic: the two members farthest apart.
    let mut far = (members[0], members[1]);
    let mut far_d = -1.0;
    for (ix, &a) in members.iter().enumerate() {
        for &b in &members[ix + 1..] {
            let d = euclidean(&points[a].coords, &points[b].coords);
            if d > far_d {
                far_d = d;
                far = (a, b);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Split> = None;
    for restart in 0..RESTARTS {
        let init: Option<(usize, usize)> = if restart == 0 {
            Some(far)
        } else {
            // Random member pair with distinct coordinates.
            let mut pick = None;
            for _ in 0..32 {
                let a = members[rng.gen_range(0..members.len())];
                let b = members[rng.gen_range(0..members.len())];
                if a != b && points[a].coords != points[b].coords {
                    pick = Some((a, b));
                    break;
                }
            }
            pick
        };
        let Some((ca, cb)) = init else { continue };
        let Some(split) = lloyd2(points, members, &points[ca].coords, &points[cb].coords, dim)
        else {
            continue;
        };
        match &best {
            Some(b) if b.ssq <= split.ssq => {}
            _ => best = Some(split),
        }
    }
    best.ok_or(ClusterError::CannotSplit)
}

fn lloyd2(
    points: &[StatePoint],
    members: &[usize],
    init_a: &[f64],
    init_b: &[f64],
    dim: usize,
) -> Option<Split> {
    let mut centers = [init_a.to_vec(), init_b.to_vec()];
    let mut labels: Vec<u8> = vec![u8::MAX; members.len()];
    for _ in 0..MAX_LLOYD_ITER {
        let mut changed = false;
        let mut next: Vec<u8> = Vec::with_capacity(members.len());
        for (slot, &i) in members.iter().enumerate() {
            let da = euclidean(&points[i].coords, &centers[0]);
            let db = euclidean(&points[i].coords, &centers[1]);
            let l = if db < da { 1 } else { 0 };
            if l != labels[slot] {
                changed = true;
            }
            next.push(l);
        }
        if next.iter().all(|&l| l == next[0]) {
            // One side emptied; keep the previous partition if there is one.
            if labels[0] == u8::MAX {
                return None;
            }
            break;
        }
        labels = next;
        if !changed {
            break;
        }
        for (side, center) in centers.iter_mut().enumerate() {
            let group: Vec<usize> = members
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l as usize == side)
                .map(|(&i, _)| i)
                .collect();
            *center = mean_of(points, &group, dim);
        }
    }
    let mut groups = [Vec::new(), Vec::new()];
    for (slot, &i) in members.iter().enumerate() {
        groups[labels[slot] as usize].push(i);
    }
    if groups[0].is_empty() || groups[1].is_empty() {
        return None;
    }
    let centers = [
        mean_of(points, &groups[0], dim),
        mean_of(points, &groups[1], dim),
    ];
    let mut ssq = 0.0;
    for side in 0..2 {
        for &i in &groups[side] {
            let d = euclidean(&points[i].coords, &centers[side]);
            ssq += d * d;
        }
    }
    let [g0, g1] = groups;
    let [c0, c1] = centers;
    Some(Split {
        members: [g0, g1],
        centers: [c0, c1],
        ssq,
    })
}

fn split_seed(model_seed: u64, split_index: usize) -> u64 {
    // SplitMix64-style spread so per-split streams do not overlap.
    let mut z = model_seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(split_index as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fit a bisecting k-means model: repeatedly split the leaf with the largest
/// mean member-to-center distance until every leaf's mean distance is below
/// `threshold`. Leaves that cannot be split (identical points) are frozen.
pub fn bisecting_kmeans(
    points: &[StatePoint],
    threshold: f64,
    seed: u64,
) -> Result<ClusterModel, ClusterError> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(ClusterError::Invalid(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    if points.is_empty() {
        return Err(ClusterError::Invalid("no points to cluster".into()));
    }
    let dim = points[0].dim();
    if points.iter().any(|p| p.dim() != dim) {
        return Err(ClusterError::Invalid(
            "points have inconsistent dimensions".into(),
        ));
    }

    let members: Vec<usize> = (0..points.len()).collect();
    let center = mean_of(points, &members, dim);
    let mean_dist = mean_dist_of(points, &members, &center);
    let mut nodes = vec![ClusterNode {
        id: 0,
        members,
        center,
        mean_dist,
        parent: None,
        children: None,
        frozen: false,
        merged_from: None,
        merged_into: None,
    }];

    let mut split_index = 0usize;
    loop {
        // Widest live leaf; ties go to the lower node id.
        let target = nodes
            .iter()
            .filter(|n| n.is_live() && !n.frozen && n.mean_dist >= threshold)
            .max_by(|a, b| {
                a.mean_dist
                    .total_cmp(&b.mean_dist)
                    .then(b.id.cmp(&a.id))
            })
            .map(|n| n.id);
        let Some(target) = target else { break };
        match kmeans2_on(points, &nodes[target].members, split_seed(seed, split_index)) {
            Ok(split) => {
                let first = nodes.len();
                for side in 0..2 {
                    let mean_dist =
                        mean_dist_of(points, &split.members[side], &split.centers[side]);
                    nodes.push(ClusterNode {
                        id: first + side,
                        members: split.members[side].clone(),
                        center: split.centers[side].clone(),
                        mean_dist,
                        parent: Some(target),
                        children: None,
                        frozen: false,
                        merged_from: None,
                        merged_into: None,
                    });
                }
                nodes[target].children = Some((first, first + 1));
            }
            Err(ClusterError::CannotSplit) => {
                nodes[target].frozen = true;
            }
            Err(e) => return Err(e),
        }
        split_index += 1;
    }

    let mut labels = vec![0usize; points.len()];
    for n in nodes.iter().filter(|n| n.is_live()) {
        for &i in &n.members {
            labels[i] = n.id;
        }
    }
    Ok(ClusterModel {
        nodes,
        labels,
        threshold,
        seed,
        dim,
    })
}

/// Map each point to its nearest live cluster center; ties break toward the
/// lowest cluster id.
pub fn assign_states(points: &[StatePoint], model: &ClusterModel) -> StateTimeline {
    let live = model.live_clusters();
    let mut states = Vec::with_capacity(points.len());
    for p in points {
        let mut best = (f64::INFINITY, usize::MAX);
        for &id in &live {
            let d = euclidean(&p.coords, &model.nodes[id].center);
            if d < best.0 {
                best = (d, id);
            }
        }
        states.push(best.1);
    }
    StateTimeline {
        times: (0..points.len()).collect(),
        states,
    }
}

/// Distance of every point to the center of live cluster `id`.
pub fn center_distance_series(
    points: &[StatePoint],
    model: &ClusterModel,
    id: usize,
) -> Result<DistanceSeries, ClusterError> {
    let node = model.node(id)?;
    if !node.is_live() {
        return Err(ClusterError::DeadCluster(id));
    }
    let values = points
        .iter()
        .map(|p| euclidean(&p.coords, &node.center))
        .collect();
    Ok(DistanceSeries {
        times: (0..points.len()).collect(),
        values,
        reference: id,
    })
}

/// Combine live clusters into one. The merged center is the arithmetic mean
/// of the member points (not of the old centers), keeping the k-means
/// fixed-point property.
pub fn merge_clusters(
    model: &ClusterModel,
    ids: &[usize],
    points: &[StatePoint],
) -> Result<ClusterModel, ClusterError> {
    if ids.len() < 2 {
        return Err(ClusterError::Invalid(format!(
            "a merge needs at least 2 clusters, got {}",
            ids.len()
        )));
    }
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(ClusterError::Invalid("duplicate cluster ids in merge".into()));
    }
    for &id in &sorted {
        let node = model.node(id)?;
        if !node.is_live() {
            return Err(ClusterError::DeadCluster(id));
        }
    }
    if points.len() != model.labels.len() {
        return Err(ClusterError::Invalid(format!(
            "model was fitted on {} points, got {}",
            model.labels.len(),
            points.len()
        )));
    }

    let mut out = model.clone();
    let new_id = out.nodes.len();
    let mut members: Vec<usize> = sorted
        .iter()
        .flat_map(|&id| model.nodes[id].members.iter().copied())
        .collect();
    members.sort_unstable();
    let center = mean_of(points, &members, model.dim);
    let mean_dist = mean_dist_of(points, &members, &center);
    for &id in &sorted {
        out.nodes[id].merged_into = Some(new_id);
    }
    for l in out.labels.iter_mut() {
        if sorted.contains(l) {
            *l = new_id;
        }
    }
    out.nodes.push(ClusterNode {
        id: new_id,
        members,
        center,
        mean_dist,
        parent: None,
        children: None,
        frozen: false,
        merged_from: Some(sorted),
        merged_into: None,
    });
    Ok(out)
}

/// One merge candidate: the clusters whose center distances from a reference
/// line up with a detected potential minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeProposal {
    /// Proposed member clusters, ascending.
    pub members: Vec<usize>,
    /// Supporting (reference cluster, minimum position) pairs.
    pub support: Vec<(usize, f64)>,
}

/// Derive merge proposals from potential minima seen from several reference
/// clusters over a common time window.
///
/// For each reference `r` and each minimum at `x*` of its potential, the
/// live clusters `j != r` whose center distance to `r` lies within `tol` of
/// `x*` are collected. A collection of at least two clusters sharing a
/// common tree ancestor below the root becomes a candidate; candidates are
/// emitted only when at least two distinct references support the same
/// member set.
pub fn propose_merges(
    model: &ClusterModel,
    potentials: &[(usize, &PotentialCurve)],
    tol: f64,
) -> Vec<MergeProposal> {
    let live = model.live_clusters();
    let mut candidates: Vec<MergeProposal> = Vec::new();
    for &(reference, curve) in potentials {
        let Ok(ref_node) = model.node(reference) else {
            continue;
        };
        for minimum in &curve.minima {
            let mut set: Vec<usize> = live
                .iter()
                .copied()
                .filter(|&j| j != reference)
                .filter(|&j| {
                    let d = euclidean(&model.nodes[j].center, &ref_node.center);
                    (d - minimum.x).abs() <= tol
                })
                .collect();
            if set.len() < 2 {
                continue;
            }
            set.sort_unstable();
            match model.common_ancestor(&set) {
                Some(ancestor) if ancestor != 0 => {}
                _ => continue,
            }
            match candidates.iter_mut().find(|c| c.members == set) {
                Some(c) => {
                    if !c.support.iter().any(|(r, _)| *r == reference) {
                        c.support.push((reference, minimum.x));
                    }
                }
                None => candidates.push(MergeProposal {
                    members: set,
                    support: vec![(reference, minimum.x)],
                }),
            }
        }
    }
    let mut out: Vec<MergeProposal> = candidates
        .into_iter()
        .filter(|c| c.support.len() >= 2)
        .collect();
    out.sort_by(|a, b| a.members.cmp(&b.members));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::TimeWindow;
    use crate::eval::adjusted_rand_index;
    use crate::langevin::Minimum;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn pt(coords: Vec<f64>) -> StatePoint {
        StatePoint::new(coords)
    }

    fn blob(rng: &mut ChaCha8Rng, center: &[f64], spread: f64, n: usize) -> Vec<StatePoint> {
        (0..n)
            .map(|_| {
                pt(center
                    .iter()
                    .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
                    .collect())
            })
            .collect()
    }

    #[test]
    fn kmeans2_recovers_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut points = blob(&mut rng, &[0.0, 0.0, 0.0], 1.0, 100);
        points.extend(blob(&mut rng, &[10.0, 0.0, 0.0], 1.0, 100));
        let split = kmeans2(&points, 7).unwrap();
        let (a, b) = (&split.members[0], &split.members[1]);
        let (first, second) = if a.contains(&0) { (a, b) } else { (b, a) };
        assert_eq!(first.as_slice(), (0..100).collect::<Vec<_>>().as_slice());
        assert_eq!(second.as_slice(), (100..200).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn kmeans2_two_points() {
        let points = vec![pt(vec![0.0, 1.0]), pt(vec![2.0, 3.0])];
        let split = kmeans2(&points, 0).unwrap();
        assert_eq!(split.members[0].len(), 1);
        assert_eq!(split.members[1].len(), 1);
        let mut centers = split.centers.to_vec();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(centers[0], vec![0.0, 1.0]);
        assert_eq!(centers[1], vec![2.0, 3.0]);
    }

    #[test]
    fn kmeans2_collinear_minimizes_ssq() {
        let points = vec![pt(vec![0.0]), pt(vec![1.0]), pt(vec![10.0])];
        // Oracle: enumerate all bipartitions, pick the minimal SSQ.
        let parts: [(&[usize], &[usize]); 3] = [(&[0], &[1, 2]), (&[1], &[0, 2]), (&[2], &[0, 1])];
        let ssq_of = |m: &[usize]| {
            let c: f64 = m.iter().map(|&i| points[i].coords[0]).sum::<f64>() / m.len() as f64;
            m.iter()
                .map(|&i| (points[i].coords[0] - c) * (points[i].coords[0] - c))
                .sum::<f64>()
        };
        let best = parts
            .iter()
            .min_by(|a, b| (ssq_of(a.0) + ssq_of(a.1)).total_cmp(&(ssq_of(b.0) + ssq_of(b.1))))
            .unwrap();
        assert_eq!(best.0, &[2]);
        let split = kmeans2(&points, 3).unwrap();
        let single = split.members.iter().find(|m| m.len() == 1).unwrap();
        assert_eq!(single.as_slice(), &[2]);
    }

    #[test]
    fn kmeans2_identical_points_cannot_split() {
        let points = vec![pt(vec![1.0, 2.0]); 5];
        assert!(matches!(kmeans2(&points, 0), Err(ClusterError::CannotSplit)));
    }

    #[test]
    fn bisecting_single_cluster_when_threshold_is_loose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let points = blob(&mut rng, &[0.0, 0.0], 1.0, 50);
        let model = bisecting_kmeans(&points, 100.0, 9).unwrap();
        assert_eq!(model.live_clusters(), vec![0]);
    }

    #[test]
    fn bisecting_recovers_three_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut points = blob(&mut rng, &[0.0, 0.0], 0.5, 80);
        points.extend(blob(&mut rng, &[10.0, 0.0], 0.5, 80));
        points.extend(blob(&mut rng, &[0.0, 10.0], 0.5, 80));
        let model = bisecting_kmeans(&points, 2.0, 11).unwrap();
        let live = model.live_clusters();
        assert_eq!(live.len(), 3);
        // Every blob maps to exactly one leaf.
        for blob_idx in 0..3 {
            let labels: Vec<usize> = (blob_idx * 80..(blob_idx + 1) * 80)
                .map(|i| model.labels[i])
                .collect();
            assert!(labels.windows(2).all(|w| w[0] == w[1]));
        }
        for id in live {
            assert!(model.nodes[id].mean_dist < 2.0);
        }
    }

    #[test]
    fn bisecting_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut points = blob(&mut rng, &[0.0, 0.0], 1.0, 60);
        points.extend(blob(&mut rng, &[6.0, 1.0], 1.3, 60));
        points.extend(blob(&mut rng, &[3.0, 8.0], 0.8, 60));
        let a = bisecting_kmeans(&points, 1.5, 123).unwrap();
        let b = bisecting_kmeans(&points, 1.5, 123).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.nodes.len(), b.nodes.len());
        for (x, y) in a.nodes.iter().zip(b.nodes.iter()) {
            assert_eq!(x.center, y.center);
            assert_eq!(x.members, y.members);
        }
    }

    #[test]
    fn lowering_threshold_never_reduces_leaf_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut points = blob(&mut rng, &[0.0, 0.0], 1.0, 70);
        points.extend(blob(&mut rng, &[5.0, 0.0], 1.0, 70));
        points.extend(blob(&mut rng, &[0.0, 5.0], 1.0, 70));
        let thresholds = [4.0, 3.0, 2.0, 1.2, 0.8, 0.5];
        let mut last = 0usize;
        for &t in &thresholds {
            let model = bisecting_kmeans(&points, t, 77).unwrap();
            let count = model.live_clusters().len();
            assert!(
                count >= last,
                "threshold {t} produced {count} leaves, fewer than {last}"
            );
            last = count;
        }
    }

    #[test]
    fn every_leaf_is_below_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut points = blob(&mut rng, &[0.0, 0.0, 0.0], 2.0, 150);
        points.extend(blob(&mut rng, &[4.0, 4.0, 0.0], 1.0, 100));
        let model = bisecting_kmeans(&points, 1.0, 8).unwrap();
        for id in model.live_clusters() {
            let n = &model.nodes[id];
            assert!(n.frozen || n.mean_dist < 1.0);
            // Center is the mean of its members.
            let c = mean_of(&points, &n.members, model.dim);
            for (a, b) in c.iter().zip(&n.center) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        // Labels consistent with member sets.
        for (i, &l) in model.labels.iter().enumerate() {
            assert!(model.nodes[l].members.contains(&i));
        }
    }

    #[test]
    fn well_separated_regimes_recovered_across_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let spread = 0.4;
            let sep = 5.0 * spread * 5.0;
            let centers = [
                vec![0.0, 0.0, 0.0, 0.0],
                vec![sep, 0.0, 0.0, 0.0],
                vec![0.0, sep, 0.0, 0.0],
            ];
            let mut points = Vec::new();
            let mut truth = Vec::new();
            for (ci, c) in centers.iter().enumerate() {
                points.extend(blob(&mut rng, c, spread, 60));
                truth.extend(std::iter::repeat(ci).take(60));
            }
            let model = bisecting_kmeans(&points, spread * 3.0, seed).unwrap();
            let ari = adjusted_rand_index(&truth, &model.labels);
            assert!(ari >= 0.95, "seed {seed}: ARI {ari}");
        }
    }

    #[test]
    fn assign_states_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut points = blob(&mut rng, &[0.0, 0.0], 0.3, 40);
        points.extend(blob(&mut rng, &[8.0, 0.0], 0.3, 40));
        let model = bisecting_kmeans(&points, 1.0, 3).unwrap();
        let live = model.live_clusters();
        // Centers map to their own clusters.
        let centers: Vec<StatePoint> = live
            .iter()
            .map(|&id| pt(model.nodes[id].center.clone()))
            .collect();
        let tl = assign_states(&centers, &model);
        assert_eq!(tl.states, live);
        // Fitted points keep their own labels (self-consistency).
        let tl = assign_states(&points, &model);
        assert_eq!(tl.states, model.labels);
    }

    #[test]
    fn assign_states_tie_breaks_to_lowest_id() {
        let points = vec![pt(vec![0.0]), pt(vec![0.0]), pt(vec![4.0]), pt(vec![4.0])];
        let model = bisecting_kmeans(&points, 0.5, 1).unwrap();
        let live = model.live_clusters();
        assert_eq!(live.len(), 2);
        let midpoint = pt(vec![2.0]);
        let tl = assign_states(&[midpoint], &model);
        assert_eq!(tl.states[0], live[0]);
    }

    #[test]
    fn distance_series_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut points = blob(&mut rng, &[0.0, 0.0, 0.0], 1.0, 50);
        points.extend(blob(&mut rng, &[6.0, 0.0, 0.0], 1.0, 50));
        let model = bisecting_kmeans(&points, 2.0, 5).unwrap();
        let id = model.live_clusters()[0];
        let series = center_distance_series(&points, &model, id).unwrap();
        let center = &model.nodes[id].center;
        for (p, &v) in points.iter().zip(series.values.iter()) {
            let mut acc = 0.0;
            for (a, b) in p.coords.iter().zip(center) {
                acc += (a - b) * (a - b);
            }
            assert!((acc.sqrt() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_series_trivial_values() {
        let center = vec![1.0, 2.0, 3.0];
        let points = vec![pt(center.clone()); 10];
        let model = bisecting_kmeans(&points, 5.0, 0).unwrap();
        let series = center_distance_series(&points, &model, 0).unwrap();
        assert!(series.values.iter().all(|&v| v == 0.0));
        let mut shifted = center.clone();
        shifted[0] += 2.0;
        let series = center_distance_series(&[pt(shifted)], &model, 0).unwrap();
        assert!((series.values[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dead_cluster_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut points = blob(&mut rng, &[0.0, 0.0], 0.3, 30);
        points.extend(blob(&mut rng, &[9.0, 0.0], 0.3, 30));
        let model = bisecting_kmeans(&points, 1.0, 2).unwrap();
        assert!(matches!(
            center_distance_series(&points, &model, 0),
            Err(ClusterError::DeadCluster(0))
        ));
        assert!(matches!(
            center_distance_series(&points, &model, 99),
            Err(ClusterError::UnknownCluster(99))
        ));
    }

    #[test]
    fn merge_two_singletons_gives_midpoint() {
        let points = vec![pt(vec![0.0, 0.0]), pt(vec![2.0, 4.0])];
        let model = bisecting_kmeans(&points, 0.5, 0).unwrap();
        let live = model.live_clusters();
        let merged = merge_clusters(&model, &live, &points).unwrap();
        let new_id = merged.live_clusters()[0];
        assert_eq!(merged.nodes[new_id].center, vec![1.0, 2.0]);
        assert_eq!(merged.labels, vec![new_id, new_id]);
    }

    #[test]
    fn merging_three_of_eight_leaves_six_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut points = Vec::new();
        for i in 0..8 {
            let angle = i as f64 * std::f64::consts::TAU / 8.0;
            points.extend(blob(
                &mut rng,
                &[10.0 * angle.cos(), 10.0 * angle.sin()],
                0.3,
                30,
            ));
        }
        let model = bisecting_kmeans(&points, 1.0, 4).unwrap();
        let live = model.live_clusters();
        assert_eq!(live.len(), 8);
        let merged = merge_clusters(&model, &live[3..6], &points).unwrap();
        assert_eq!(merged.live_clusters().len(), 6);
        // Total membership preserved.
        let total: usize = merged
            .live_clusters()
            .iter()
            .map(|&id| merged.nodes[id].members.len())
            .sum();
        assert_eq!(total, points.len());
        // Merged center equals the brute-force mean over the union.
        let new_id = *merged.live_clusters().last().unwrap();
        let members = &merged.nodes[new_id].members;
        let brute = mean_of(&points, members, 2);
        for (a, b) in brute.iter().zip(&merged.nodes[new_id].center) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn merge_unknown_id_is_an_error() {
        let points = vec![pt(vec![0.0]), pt(vec![5.0])];
        let model = bisecting_kmeans(&points, 0.5, 0).unwrap();
        let live = model.live_clusters();
        assert!(matches!(
            merge_clusters(&model, &[live[0], 404], &points),
            Err(ClusterError::UnknownCluster(404))
        ));
    }

    fn curve_with_minima(minima: Vec<Minimum>) -> PotentialCurve {
        PotentialCurve {
            grid: vec![],
            phi: vec![],
            minima,
            window: TimeWindow::new(0, 1000),
            discarded_points: 0,
        }
    }

    #[test]
    fn propose_merges_single_center_alignment_yields_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut points = blob(&mut rng, &[0.0, 0.0], 0.3, 50);
        points.extend(blob(&mut rng, &[10.0, 0.0], 0.3, 50));
        let model = bisecting_kmeans(&points, 1.0, 1).unwrap();
        let live = model.live_clusters();
        let curve = curve_with_minima(vec![Minimum {
            x: 10.0,
            phi: -1.0,
            prominence: 1.0,
        }]);
        let proposals = propose_merges(&model, &[(live[0], &curve)], 0.5);
        assert!(proposals.is_empty());
    }

    #[test]
    fn propose_merges_finds_oversplit_siblings() {
        // Two tight sub-blobs close together plus two far references: a
        // tight threshold splits the near pair; minima seen from both
        // references sit at the shared distance.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut points = Vec::new();
        points.extend(blob(&mut rng, &[0.0, 0.9], 0.08, 60));
        points.extend(blob(&mut rng, &[0.0, -0.9], 0.08, 60));
        points.extend(blob(&mut rng, &[14.0, 0.0], 0.08, 60));
        points.extend(blob(&mut rng, &[10.0, 10.0], 0.08, 60));
        let model = bisecting_kmeans(&points, 0.4, 21).unwrap();
        let live = model.live_clusters();
        assert_eq!(live.len(), 4, "tree: {}", model.tree_dump());
        let near: Vec<usize> = live
            .iter()
            .copied()
            .filter(|&id| model.nodes[id].center[0].abs() < 2.0)
            .collect();
        assert_eq!(near.len(), 2);
        let refs: Vec<usize> = live
            .iter()
            .copied()
            .filter(|id| !near.contains(id))
            .collect();
        // Both sub-blobs sit at ~14.03 from the (14,0) reference and at
        // 13.5/14.8 from the (10,10) one.
        let c1 = curve_with_minima(vec![Minimum {
            x: 14.03,
            phi: -2.0,
            prominence: 1.0,
        }]);
        let c2 = curve_with_minima(vec![Minimum {
            x: 14.15,
            phi: -2.0,
            prominence: 1.0,
        }]);
        let (r1, r2) = if model.nodes[refs[0]].center[1] < 5.0 {
            (refs[0], refs[1])
        } else {
            (refs[1], refs[0])
        };
        let proposals = propose_merges(&model, &[(r1, &c1), (r2, &c2)], 0.8);
        assert_eq!(proposals.len(), 1);
        assert_eq!(proposals[0].members, near);
        assert_eq!(proposals[0].support.len(), 2);
        // A single supporting reference is not enough.
        let proposals = propose_merges(&model, &[(r1, &c1)], 0.8);
        assert!(proposals.is_empty());
    }

    #[test]
    fn propose_merges_triple_sibling_shape() {
        // Three sibling sub-blobs seen from two references produce one
        // proposal containing all three.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut points = Vec::new();
        let sub = [[0.0, 1.0], [0.87, -0.5], [-0.87, -0.5]];
        for c in &sub {
            points.extend(blob(&mut rng, c, 0.1, 60));
        }
        points.extend(blob(&mut rng, &[20.0, 0.0], 0.1, 60));
        points.extend(blob(&mut rng, &[14.0, -14.0], 0.1, 60));
        let model = bisecting_kmeans(&points, 0.5, 5).unwrap();
        let live = model.live_clusters();
        assert_eq!(live.len(), 5, "tree: {}", model.tree_dump());
        let triplet: Vec<usize> = live
            .iter()
            .copied()
            .filter(|&id| model.nodes[id].center[0].abs() < 5.0)
            .collect();
        assert_eq!(triplet.len(), 3);
        let refs: Vec<usize> = live
            .iter()
            .copied()
            .filter(|id| !triplet.contains(id))
            .collect();
        let c1 = curve_with_minima(vec![Minimum {
            x: 20.0,
            phi: -2.0,
            prominence: 1.0,
        }]);
        let c2 = curve_with_minima(vec![Minimum {
            x: 19.8,
            phi: -2.0,
            prominence: 1.0,
        }]);
        let proposals = propose_merges(&model, &[(refs[0], &c1), (refs[1], &c2)], 1.5);
        assert_eq!(proposals.len(), 1);
        assert_eq!(proposals[0].members, triplet);
        assert!(proposals[0].support.len() >= 2);
    }
}
