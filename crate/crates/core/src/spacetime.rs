//! Quadtree partitioning, z-order leaf numbering, time buckets and the
//! `(spatial-id, temporal-id)` transform of trajectories.
//!
//! Cells are half-open: a point on an internal split line belongs to the
//! child for which that line is the min edge. The root region's max edges
//! are closed, which falls out of the midpoint comparison used for descent.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TrajPoint, Trajectory, UserId};

/// Deepest quadtree level a Morton code can address in 64 bits.
pub const MAX_DEPTH_LIMIT: u8 = 31;
pub const DEFAULT_MAX_DEPTH: u8 = 16;
pub const DEFAULT_BUCKET_WIDTH: u64 = 3600;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Region {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self> {
        let ok = [min_x, min_y, max_x, max_y].iter().all(|v| v.is_finite()) && min_x < max_x && min_y < max_y;
        if !ok {
            return Err(Error::InvalidParam(format!(
                "degenerate region [{min_x}, {max_x}] x [{min_y}, {max_y}]"
            )));
        }
        Ok(Region {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    /// Bounding box of `points` grown by 1% of its extent on every side.
    /// A zero-width axis is padded by one meter instead.
    pub fn enclosing<'a>(points: impl IntoIterator<Item = &'a TrajPoint>) -> Result<Self> {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            b.0 = b.0.min(p.x);
            b.1 = b.1.min(p.y);
            b.2 = b.2.max(p.x);
            b.3 = b.3.max(p.y);
        }
        if !b.0.is_finite() {
            return Err(Error::InvalidParam("cannot bound an empty point set".into()));
        }
        let pad = |lo: f64, hi: f64| {
            let w = hi - lo;
            if w > 0.0 {
                w * 0.01
            } else {
                1.0
            }
        };
        let (px, py) = (pad(b.0, b.2), pad(b.1, b.3));
        Region::new(b.0 - px, b.1 - py, b.2 + px, b.3 + py)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }

    /// Closed-rectangle overlap test.
    pub fn intersects(&self, o: &Region) -> bool {
        self.min_x <= o.max_x && o.min_x <= self.max_x && self.min_y <= o.max_y && o.min_y <= self.max_y
    }

    pub fn mid(&self) -> (f64, f64) {
        ((self.min_x + self.max_x) * 0.5, (self.min_y + self.max_y) * 0.5)
    }

    /// Child quadrant index for a point: bit 0 set for the upper x half,
    /// bit 1 for the upper y half. Matches the Morton interleave.
    pub fn quadrant_of(&self, x: f64, y: f64) -> usize {
        let (mx, my) = self.mid();
        (x >= mx) as usize | (((y >= my) as usize) << 1)
    }

    pub fn quadrant(&self, q: usize) -> Region {
        let (mx, my) = self.mid();
        let (min_x, max_x) = if q & 1 == 0 { (self.min_x, mx) } else { (mx, self.max_x) };
        let (min_y, max_y) = if q & 2 == 0 { (self.min_y, my) } else { (my, self.max_y) };
        Region {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

fn spread_bits(v: u64) -> u64 {
    let mut x = v & 0xffff_ffff;
    x = (x | (x << 16)) & 0x0000_ffff_0000_ffff;
    x = (x | (x << 8)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

fn compact_bits(v: u64) -> u64 {
    let mut x = v & 0x5555_5555_5555_5555;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x >> 4)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x >> 8)) & 0x0000_ffff_0000_ffff;
    x = (x | (x >> 16)) & 0x0000_0000_ffff_ffff;
    x
}

/// Interleaves a cell's column (even bits) and row (odd bits) at `depth`.
pub fn morton_encode(cx: u64, cy: u64, depth: u8) -> Result<u64> {
    let limit = 1u64 << depth.min(MAX_DEPTH_LIMIT);
    if depth > MAX_DEPTH_LIMIT || cx >= limit || cy >= limit {
        return Err(Error::CellOutOfRange { cx, cy, depth });
    }
    Ok(spread_bits(cx) | (spread_bits(cy) << 1))
}

pub fn morton_decode(code: u64) -> (u64, u64) {
    (compact_bits(code), compact_bits(code >> 1))
}

/// Z-order identity of a quadtree block at its own depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpatialId {
    pub code: u64,
    pub depth: u8,
}

impl SpatialId {
    /// Code left-aligned to [`MAX_DEPTH_LIMIT`]; the total z-order over
    /// blocks of unequal depth.
    pub fn aligned(&self) -> u64 {
        self.code << (2 * (MAX_DEPTH_LIMIT - self.depth) as u32)
    }
}

impl Ord for SpatialId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.aligned().cmp(&other.aligned()).then(self.depth.cmp(&other.depth))
    }
}

impl PartialOrd for SpatialId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalBucketing {
    pub epoch: u64,
    pub width: u64,
}

impl TemporalBucketing {
    pub fn new(epoch: u64, width: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidParam("bucket width must be > 0".into()));
        }
        Ok(TemporalBucketing { epoch, width })
    }

    pub fn bucket_of(&self, t: u64) -> Result<u64> {
        if t < self.epoch {
            return Err(Error::BeforeEpoch { t, epoch: self.epoch });
        }
        Ok((t - self.epoch) / self.width)
    }

    /// Buckets overlapping the closed interval `[from, to]`, clipped at the
    /// epoch. `None` when the interval ends before the epoch.
    pub fn buckets_overlapping(&self, from: u64, to: u64) -> Option<(u64, u64)> {
        if to < self.epoch || to < from {
            return None;
        }
        let lo = (from.max(self.epoch) - self.epoch) / self.width;
        let hi = (to - self.epoch) / self.width;
        Some((lo, hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpaceTimeKey {
    pub spatial_id: SpatialId,
    pub temporal_id: u64,
}

pub type NodeId = u32;

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    /// Indices into the point list the tree was built from.
    Leaf {
        points: Vec<u32>,
    },
    Internal {
        children: [NodeId; 4],
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadNode {
    pub region: Region,
    pub id: SpatialId,
    pub kind: NodeKind,
}

impl QuadNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn children(&self) -> Option<[NodeId; 4]> {
        match self.kind {
            NodeKind::Internal { children } => Some(children),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn leaf_points(&self) -> &[u32] {
        match &self.kind {
            NodeKind::Leaf { points } => points,
            NodeKind::Internal { .. } => &[],
        }
    }
}

/// Point quadtree in arena form. Node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadTree {
    pub(crate) nodes: Vec<QuadNode>,
    pub capacity: usize,
    pub max_depth: u8,
}

impl QuadTree {
    pub const ROOT: NodeId = 0;

    pub fn build(points: &[(TrajPoint, UserId)], capacity: usize, max_depth: u8, region: Region) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParam("quadtree capacity must be >= 1".into()));
        }
        if max_depth == 0 || max_depth > MAX_DEPTH_LIMIT {
            return Err(Error::InvalidParam(format!(
                "max depth must be in 1..={MAX_DEPTH_LIMIT}, got {max_depth}"
            )));
        }
        if let Some((p, _)) = points.iter().find(|(p, _)| !region.contains(p.x, p.y)) {
            return Err(Error::OutsideRegion { x: p.x, y: p.y });
        }
        let mut tree = QuadTree {
            nodes: Vec::new(),
            capacity,
            max_depth,
        };
        let all: Vec<u32> = (0..points.len() as u32).collect();
        tree.build_node(points, all, region, SpatialId { code: 0, depth: 0 });
        Ok(tree)
    }

    /// Partitions `region` by the points `shape` selects from `points`, then
    /// fills the leaves with `members` (a different point list) by location.
    /// Leaves may hold fewer than `capacity` members after a split.
    pub(crate) fn build_shaped(
        points: &[(TrajPoint, UserId)],
        shape: Vec<u32>,
        members: &[TrajPoint],
        capacity: usize,
        max_depth: u8,
        region: Region,
    ) -> Result<Self> {
        let mut tree = QuadTree::build(&[], capacity, max_depth, region)?;
        tree.nodes.clear();
        tree.build_node(points, shape, region, SpatialId { code: 0, depth: 0 });
        for n in &mut tree.nodes {
            if let NodeKind::Leaf { points } = &mut n.kind {
                points.clear();
            }
        }
        for (i, p) in members.iter().enumerate() {
            let leaf = tree.locate_leaf(p.x, p.y)?;
            if let NodeKind::Leaf { points } = &mut tree.nodes[leaf as usize].kind {
                points.push(i as u32);
            }
        }
        Ok(tree)
    }

    fn build_node(
        &mut self,
        points: &[(TrajPoint, UserId)],
        members: Vec<u32>,
        region: Region,
        id: SpatialId,
    ) -> NodeId {
        let nid = self.nodes.len() as NodeId;
        if members.len() <= self.capacity || id.depth >= self.max_depth {
            self.nodes.push(QuadNode {
                region,
                id,
                kind: NodeKind::Leaf { points: members },
            });
            return nid;
        }
        self.nodes.push(QuadNode {
            region,
            id,
            kind: NodeKind::Internal { children: [0; 4] },
        });
        let mut parts: [Vec<u32>; 4] = Default::default();
        for i in members {
            let p = &points[i as usize].0;
            parts[region.quadrant_of(p.x, p.y)].push(i);
        }
        let mut children = [0; 4];
        for (q, part) in parts.into_iter().enumerate() {
            let cid = SpatialId {
                code: (id.code << 2) | q as u64,
                depth: id.depth + 1,
            };
            children[q] = self.build_node(points, part, region.quadrant(q), cid);
        }
        self.nodes[nid as usize].kind = NodeKind::Internal { children };
        nid
    }

    pub(crate) fn from_nodes(nodes: Vec<QuadNode>, capacity: usize, max_depth: u8) -> Self {
        QuadTree {
            nodes,
            capacity,
            max_depth,
        }
    }

    pub fn node(&self, id: NodeId) -> &QuadNode {
        &self.nodes[id as usize]
    }

    pub fn nodes(&self) -> &[QuadNode] {
        &self.nodes
    }

    pub fn region(&self) -> Region {
        self.nodes[0].region
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_leaf())
            .map(|(i, _)| i as NodeId)
    }

    /// Leaves in z-order.
    pub fn leaves_z_ordered(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.leaves().collect();
        v.sort_by_key(|&l| self.node(l).id);
        v
    }

    pub fn depth(&self) -> u8 {
        self.nodes.iter().map(|n| n.id.depth).max().unwrap_or(0)
    }

    pub fn locate_leaf(&self, x: f64, y: f64) -> Result<NodeId> {
        if !self.region().contains(x, y) {
            return Err(Error::OutsideRegion { x, y });
        }
        let mut cur = Self::ROOT;
        loop {
            let n = self.node(cur);
            match n.kind {
                NodeKind::Leaf { .. } => return Ok(cur),
                NodeKind::Internal { children } => cur = children[n.region.quadrant_of(x, y)],
            }
        }
    }

    pub fn transform(&self, bucketing: &TemporalBucketing, traj: &Trajectory) -> Result<BTreeSet<SpaceTimeKey>> {
        traj.points()
            .iter()
            .map(|p| {
                Ok(SpaceTimeKey {
                    spatial_id: self.node(self.locate_leaf(p.x, p.y)?).id,
                    temporal_id: bucketing.bucket_of(p.t)?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<(TrajPoint, UserId)> {
        v.iter().map(|&(x, y)| (TrajPoint::new(x, y, 0), UserId(0))).collect()
    }

    fn unit() -> Region {
        Region::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn morton_examples() {
        assert_eq!(morton_encode(0, 0, 4).unwrap(), 0);
        assert_eq!(morton_encode(1, 1, 4).unwrap(), 3);
        assert_eq!(morton_encode(2, 3, 4).unwrap(), 14);
        assert!(morton_encode(4, 0, 2).is_err());
        assert_eq!(morton_decode(14), (2, 3));
    }

    #[test]
    fn bucket_examples() {
        let b = TemporalBucketing::new(0, 3600).unwrap();
        assert_eq!(b.bucket_of(0).unwrap(), 0);
        assert_eq!(b.bucket_of(3599).unwrap(), 0);
        assert_eq!(b.bucket_of(7200).unwrap(), 2);
        let b = TemporalBucketing::new(100, 10).unwrap();
        assert!(matches!(b.bucket_of(99), Err(Error::BeforeEpoch { .. })));
        assert!(TemporalBucketing::new(0, 0).is_err());
        assert_eq!(b.buckets_overlapping(0, 99), None);
        assert_eq!(b.buckets_overlapping(0, 100), Some((0, 0)));
        assert_eq!(b.buckets_overlapping(105, 131), Some((0, 3)));
    }

    #[test]
    fn under_capacity_is_single_leaf() {
        let p = pts(&[(0.1, 0.1), (0.5, 0.5), (0.9, 0.2)]);
        let t = QuadTree::build(&p, 4, 16, unit()).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert!(t.node(0).is_leaf());
        assert_eq!(t.locate_leaf(0.5, 0.5).unwrap(), 0);
    }

    #[test]
    fn split_in_one_quadrant() {
        // five points in the lower-left quadrant, spread over its sub-quadrants
        let p = pts(&[(0.1, 0.1), (0.3, 0.1), (0.1, 0.3), (0.4, 0.4), (0.05, 0.05)]);
        let t = QuadTree::build(&p, 4, 16, unit()).unwrap();
        let root_children = t.node(0).children().unwrap();
        let empty: Vec<_> = root_children
            .iter()
            .filter(|&&c| t.node(c).is_leaf() && t.node(c).leaf_points().is_empty())
            .collect();
        assert_eq!(empty.len(), 3);
        assert!(!t.node(root_children[0]).is_leaf());
        assert_eq!(t.leaves().count(), 7);
    }

    #[test]
    fn overflow_allowed_at_max_depth() {
        let p = pts(&[(0.2, 0.2); 10]);
        let t = QuadTree::build(&p, 2, 3, unit()).unwrap();
        let l = t.locate_leaf(0.2, 0.2).unwrap();
        assert_eq!(t.node(l).id.depth, 3);
        assert_eq!(t.node(l).leaf_points().len(), 10);
    }

    #[test]
    fn rejects_points_outside() {
        assert!(matches!(
            QuadTree::build(&pts(&[(2.0, 0.0)]), 2, 3, unit()),
            Err(Error::OutsideRegion { .. })
        ));
        let t = QuadTree::build(&pts(&[(0.5, 0.5)]), 2, 3, unit()).unwrap();
        assert!(t.locate_leaf(-0.1, 0.5).is_err());
    }

    #[test]
    fn boundary_goes_to_min_edge_cell() {
        let p = pts(&[(0.1, 0.1), (0.9, 0.1), (0.1, 0.9), (0.9, 0.9)]);
        let t = QuadTree::build(&p, 1, 4, unit()).unwrap();
        let l = t.locate_leaf(0.5, 0.5).unwrap();
        assert_eq!(t.node(l).region.min_x, 0.5);
        assert_eq!(t.node(l).region.min_y, 0.5);
        // global max edge is closed
        let l = t.locate_leaf(1.0, 1.0).unwrap();
        assert_eq!(t.node(l).region.max_x, 1.0);
        let l = t.locate_leaf(0.5, 0.0).unwrap();
        assert_eq!(t.node(l).region.min_x, 0.5);
        assert_eq!(t.node(l).region.min_y, 0.0);
    }

    #[test]
    fn transform_collapses_duplicates() {
        let p = pts(&[(0.1, 0.1), (0.9, 0.9)]);
        let t = QuadTree::build(&p, 1, 4, unit()).unwrap();
        let b = TemporalBucketing::new(0, 100).unwrap();
        let one = Trajectory::new(UserId(1), vec![TrajPoint::new(0.1, 0.1, 5)]).unwrap();
        assert_eq!(t.transform(&b, &one).unwrap().len(), 1);
        let two = Trajectory::new(
            UserId(1),
            vec![
                TrajPoint::new(0.1, 0.1, 5),
                TrajPoint::new(0.2, 0.2, 50),
                TrajPoint::new(0.9, 0.9, 150),
            ],
        )
        .unwrap();
        assert_eq!(t.transform(&b, &two).unwrap().len(), 2);
    }

    #[test]
    fn enclosing_pads_degenerate_axes() {
        let p = [TrajPoint::new(5.0, 5.0, 0)];
        let r = Region::enclosing(&p).unwrap();
        assert_eq!((r.min_x, r.max_x), (4.0, 6.0));
        let p = [TrajPoint::new(0.0, 0.0, 0), TrajPoint::new(100.0, 50.0, 0)];
        let r = Region::enclosing(&p).unwrap();
        assert_eq!((r.min_x, r.max_x, r.min_y, r.max_y), (-1.0, 101.0, -0.5, 50.5));
    }
}
