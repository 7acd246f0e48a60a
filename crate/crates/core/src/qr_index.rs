//! QR-tree and Q²R-tree construction.
//!
//! A QR-tree is a point quadtree over every sample of every trajectory.
//! Trajectories are mapped into `(spatial-id, temporal-id)` space, boxed,
//! and grouped into pages by an STR pass over those boxes. Each quadtree
//! leaf then records, for every page that has samples inside it, the bucket
//! range those samples cover.
//!
//! A Q²R-tree adds a top quadtree that files each trajectory under the
//! smallest block fully containing its spatial extent; every block that owns
//! trajectories carries its own QR-tree.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, TrajPoint, Trajectory, UserId};
use crate::pack::str_groups;
use crate::spacetime::{
    NodeId, QuadTree, Region, SpaceTimeKey, SpatialId, TemporalBucketing, DEFAULT_BUCKET_WIDTH, DEFAULT_MAX_DEPTH,
};
use crate::storage::{PageId, PageStore};

pub const DEFAULT_THETA: usize = 128;
pub const DEFAULT_PAGE_CAPACITY: usize = 4;
pub const DEFAULT_THETA_TRAJ: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrParams {
    /// Leaf capacity in points.
    pub theta: usize,
    /// Trajectories per page.
    pub page_capacity: usize,
    pub bucket_width: u64,
    pub max_depth: u8,
}

impl Default for QrParams {
    fn default() -> Self {
        QrParams {
            theta: DEFAULT_THETA,
            page_capacity: DEFAULT_PAGE_CAPACITY,
            bucket_width: DEFAULT_BUCKET_WIDTH,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl QrParams {
    pub fn validate(&self) -> Result<()> {
        if self.theta == 0 {
            return Err(Error::InvalidParam("theta must be >= 1".into()));
        }
        if self.page_capacity == 0 {
            return Err(Error::InvalidParam("page capacity must be >= 1".into()));
        }
        if self.bucket_width == 0 {
            return Err(Error::InvalidParam("bucket width must be >= 1".into()));
        }
        if self.max_depth == 0 || self.max_depth > crate::spacetime::MAX_DEPTH_LIMIT {
            return Err(Error::InvalidParam(format!(
                "max depth {} out of range",
                self.max_depth
            )));
        }
        Ok(())
    }
}

/// A trajectory's box in transformed space. The spatial axis uses
/// left-aligned z-order values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformedMbr {
    pub min_s: u64,
    pub max_s: u64,
    pub min_t: u64,
    pub max_t: u64,
    pub owner: UserId,
}

impl TransformedMbr {
    pub fn from_keys(owner: UserId, keys: &BTreeSet<SpaceTimeKey>) -> Option<Self> {
        let mut it = keys.iter();
        let first = it.next()?;
        let mut m = TransformedMbr {
            min_s: first.spatial_id.aligned(),
            max_s: first.spatial_id.aligned(),
            min_t: first.temporal_id,
            max_t: first.temporal_id,
            owner,
        };
        for k in it {
            m.include(k.spatial_id.aligned(), k.temporal_id);
        }
        Some(m)
    }

    fn include(&mut self, s: u64, t: u64) {
        self.min_s = self.min_s.min(s);
        self.max_s = self.max_s.max(s);
        self.min_t = self.min_t.min(t);
        self.max_t = self.max_t.max(t);
    }

    fn center2(&self, dim: usize) -> u128 {
        if dim == 0 {
            self.min_s as u128 + self.max_s as u128
        } else {
            self.min_t as u128 + self.max_t as u128
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageAssignment {
    pub page_id: PageId,
    pub members: Vec<UserId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub page_id: PageId,
    pub bucket_min: u64,
    pub bucket_max: u64,
}

/// STR bulk-load over transformed-space boxes; each leaf group becomes one
/// page, numbered in group order.
pub fn group_trajectories(mbrs: &[TransformedMbr], page_capacity: usize) -> Result<Vec<PageAssignment>> {
    if page_capacity == 0 {
        return Err(Error::InvalidParam("page capacity must be >= 1".into()));
    }
    let groups = str_groups(mbrs.len(), 2, page_capacity, |a, b, d| {
        mbrs[a]
            .center2(d)
            .cmp(&mbrs[b].center2(d))
            .then(mbrs[a].owner.cmp(&mbrs[b].owner))
    });
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| PageAssignment {
            page_id: PageId(i as u64),
            members: g.into_iter().map(|j| mbrs[j].owner).collect(),
        })
        .collect())
}

/// In-memory QR-tree with its page store.
#[derive(Clone, Debug, PartialEq)]
pub struct QrIndex {
    pub(crate) tree: QuadTree,
    /// Registry per quadtree node, sorted by page id; empty for internal nodes.
    pub(crate) registry: Vec<Vec<RegistryEntry>>,
    pub(crate) bucketing: TemporalBucketing,
    pub(crate) params: QrParams,
    pub(crate) store: PageStore,
    pub(crate) assignments: Vec<PageAssignment>,
}

/// A shared point pool and the indices that shape a quadtree.
type Shape<'a> = (&'a [(TrajPoint, UserId)], Vec<u32>);

impl QrIndex {
    /// Builds over the padded bounding box of the dataset's samples.
    pub fn build(d: &Dataset, params: QrParams) -> Result<Self> {
        Self::build_tagged(d.trajectories(), params, None, 0, None)
    }

    /// Builds over a caller-chosen root region.
    pub fn build_in(d: &Dataset, params: QrParams, region: Region) -> Result<Self> {
        Self::build_tagged(d.trajectories(), params, Some(region), 0, None)
    }

    /// `shape`, when given, selects the points (from a shared pool) that
    /// decide the quadtree split; otherwise the trajectories' own points do.
    pub(crate) fn build_tagged(
        trajs: &[Trajectory],
        params: QrParams,
        region: Option<Region>,
        tag: u32,
        shape: Option<Shape<'_>>,
    ) -> Result<Self> {
        params.validate()?;
        let points: Vec<(TrajPoint, UserId)> = trajs
            .iter()
            .flat_map(|t| t.points().iter().map(move |p| (*p, t.user)))
            .collect();
        let region = match region {
            Some(r) => r,
            None if points.is_empty() => Region::new(0.0, 0.0, 1.0, 1.0)?,
            None => Region::enclosing(points.iter().map(|(p, _)| p))?,
        };
        let tree = match shape {
            None => QuadTree::build(&points, params.theta, params.max_depth, region)?,
            Some((pool, sel)) => {
                let own: Vec<TrajPoint> = points.iter().map(|(p, _)| *p).collect();
                QuadTree::build_shaped(pool, sel, &own, params.theta, params.max_depth, region)?
            }
        };
        let epoch = trajs.iter().map(Trajectory::start).min().unwrap_or(0);
        let bucketing = TemporalBucketing::new(epoch, params.bucket_width)?;

        // owner trajectory of each flattened point
        let mut point_traj = Vec::with_capacity(points.len());
        for (i, t) in trajs.iter().enumerate() {
            point_traj.extend(std::iter::repeat_n(i as u32, t.len()));
        }

        let mut mbrs: Vec<Option<TransformedMbr>> = vec![None; trajs.len()];
        for leaf in tree.leaves() {
            let s = tree.node(leaf).id.aligned();
            for &pi in tree.node(leaf).leaf_points() {
                let ti = point_traj[pi as usize] as usize;
                let b = bucketing.bucket_of(points[pi as usize].0.t)?;
                match &mut mbrs[ti] {
                    Some(m) => m.include(s, b),
                    slot => {
                        *slot = Some(TransformedMbr {
                            min_s: s,
                            max_s: s,
                            min_t: b,
                            max_t: b,
                            owner: trajs[ti].user,
                        })
                    }
                }
            }
        }
        let mbrs: Vec<TransformedMbr> = mbrs
            .into_iter()
            .map(|m| m.expect("trajectories are non-empty"))
            .collect();
        let assignments = group_trajectories(&mbrs, params.page_capacity)?;

        let by_user: BTreeMap<UserId, usize> = trajs.iter().enumerate().map(|(i, t)| (t.user, i)).collect();
        let mut traj_page = vec![PageId(0); trajs.len()];
        let mut store = PageStore::new(tag);
        for a in &assignments {
            let group: Vec<Trajectory> = a.members.iter().map(|u| trajs[by_user[u]].clone()).collect();
            let id = store.write_page(&group)?;
            debug_assert_eq!(id, a.page_id);
            for u in &a.members {
                traj_page[by_user[u]] = id;
            }
        }
        store.seal();

        let mut registry = vec![Vec::new(); tree.nodes().len()];
        for leaf in tree.leaves() {
            let mut ranges: BTreeMap<PageId, (u64, u64)> = BTreeMap::new();
            for &pi in tree.node(leaf).leaf_points() {
                let page = traj_page[point_traj[pi as usize] as usize];
                let b = bucketing.bucket_of(points[pi as usize].0.t)?;
                ranges
                    .entry(page)
                    .and_modify(|r| *r = (r.0.min(b), r.1.max(b)))
                    .or_insert((b, b));
            }
            registry[leaf as usize] = ranges
                .into_iter()
                .map(|(page_id, (bucket_min, bucket_max))| RegistryEntry {
                    page_id,
                    bucket_min,
                    bucket_max,
                })
                .collect();
        }

        Ok(QrIndex {
            tree,
            registry,
            bucketing,
            params,
            store,
            assignments,
        })
    }

    pub fn tree(&self) -> &QuadTree {
        &self.tree
    }

    pub fn bucketing(&self) -> TemporalBucketing {
        self.bucketing
    }

    pub fn params(&self) -> QrParams {
        self.params
    }

    pub fn store(&self) -> &PageStore {
        &self.store
    }

    pub fn assignments(&self) -> &[PageAssignment] {
        &self.assignments
    }

    pub fn registry(&self, node: NodeId) -> &[RegistryEntry] {
        &self.registry[node as usize]
    }

    pub fn trajectory_count(&self) -> usize {
        self.assignments.iter().map(|a| a.members.len()).sum()
    }

    /// Pages whose registered range at `leaf` contains `bucket`.
    pub fn leaf_lookup(&self, leaf: NodeId, bucket: u64) -> Vec<PageId> {
        self.registry(leaf)
            .iter()
            .filter(|e| e.bucket_min <= bucket && bucket <= e.bucket_max)
            .map(|e| e.page_id)
            .collect()
    }

    /// Union of [`leaf_lookup`](Self::leaf_lookup) over a bucket set.
    pub fn pages_for_buckets(&self, leaf: NodeId, buckets: &BTreeSet<u64>) -> Vec<PageId> {
        self.registry(leaf)
            .iter()
            .filter(|e| buckets.range(e.bucket_min..=e.bucket_max).next().is_some())
            .map(|e| e.page_id)
            .collect()
    }

    pub fn spatial_id(&self, node: NodeId) -> SpatialId {
        self.tree.node(node).id
    }

    pub fn registry_entries(&self) -> usize {
        self.registry.iter().map(Vec::len).sum()
    }
}

/// Node of the Q²R top quadtree.
#[derive(Clone, Debug, PartialEq)]
pub struct Q2rNode {
    pub region: Region,
    pub id: SpatialId,
    pub children: Option<[u32; 4]>,
    /// QR-tree over the trajectories this block owns, if any.
    pub owned: Option<QrIndex>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Q2rIndex {
    pub(crate) nodes: Vec<Q2rNode>,
    pub(crate) theta_traj: usize,
    pub(crate) params: QrParams,
}

/// Child quadrant of `region` that fully contains the box, if one does.
/// Quadrant choice is monotone in each coordinate, so comparing the two
/// corners is enough under the half-open cell rule.
pub(crate) fn containing_quadrant(region: &Region, extent: (f64, f64, f64, f64)) -> Option<usize> {
    let lo = region.quadrant_of(extent.0, extent.1);
    let hi = region.quadrant_of(extent.2, extent.3);
    (lo == hi).then_some(lo)
}

impl Q2rIndex {
    pub fn build(d: &Dataset, theta_traj: usize, params: QrParams) -> Result<Self> {
        params.validate()?;
        let all: Vec<&Trajectory> = d.trajectories().iter().collect();
        let region = if d.is_empty() {
            Region::new(0.0, 0.0, 1.0, 1.0)?
        } else {
            Region::enclosing(d.trajectories().iter().flat_map(|t| t.points()))?
        };
        Self::build_in_region(all, theta_traj, params, region)
    }

    pub(crate) fn build_in_region(
        all: Vec<&Trajectory>,
        theta_traj: usize,
        params: QrParams,
        region: Region,
    ) -> Result<Self> {
        let mut idx = Q2rIndex {
            nodes: Vec::new(),
            theta_traj,
            params,
        };
        let pool: Vec<(TrajPoint, UserId)> = all
            .iter()
            .flat_map(|t| t.points().iter().map(move |p| (*p, t.user)))
            .collect();
        let sel: Vec<u32> = (0..pool.len() as u32).collect();
        idx.build_node(all, &pool, sel, region, SpatialId { code: 0, depth: 0 })?;
        Ok(idx)
    }

    /// `sel` indexes the samples of every trajectory (owned anywhere) that
    /// fall in `region`; owners split their point quadtree by those samples
    /// so its cells line up with a single quadtree over the whole dataset.
    fn build_node(
        &mut self,
        trajs: Vec<&Trajectory>,
        pool: &[(TrajPoint, UserId)],
        sel: Vec<u32>,
        region: Region,
        id: SpatialId,
    ) -> Result<u32> {
        let nid = self.nodes.len() as u32;
        self.nodes.push(Q2rNode {
            region,
            id,
            children: None,
            owned: None,
        });
        let placement: Vec<Option<usize>> = trajs.iter().map(|t| containing_quadrant(&region, t.extent())).collect();
        let pushable = placement.iter().filter(|p| p.is_some()).count();
        let mut owned: Vec<Trajectory> = Vec::new();
        let mut shape = Some(sel);
        if id.depth < self.params.max_depth && pushable > self.theta_traj {
            let mut parts: [Vec<&Trajectory>; 4] = Default::default();
            for (t, p) in trajs.into_iter().zip(placement) {
                match p {
                    Some(q) => parts[q].push(t),
                    None => owned.push(t.clone()),
                }
            }
            let mut child_sel: [Vec<u32>; 4] = Default::default();
            for &i in shape.as_ref().expect("set above") {
                let p = &pool[i as usize].0;
                child_sel[region.quadrant_of(p.x, p.y)].push(i);
            }
            if owned.is_empty() {
                shape = None;
            }
            let mut children = [0u32; 4];
            for (q, (part, cs)) in parts.into_iter().zip(child_sel).enumerate() {
                let cid = SpatialId {
                    code: (id.code << 2) | q as u64,
                    depth: id.depth + 1,
                };
                children[q] = self.build_node(part, pool, cs, region.quadrant(q), cid)?;
            }
            self.nodes[nid as usize].children = Some(children);
        } else {
            owned = trajs.into_iter().cloned().collect();
        }
        if !owned.is_empty() {
            let params = QrParams {
                max_depth: (self.params.max_depth - id.depth).max(1),
                ..self.params
            };
            let shape = shape.map(|s| (pool, s));
            self.nodes[nid as usize].owned = Some(QrIndex::build_tagged(&owned, params, Some(region), nid, shape)?);
        }
        Ok(nid)
    }

    pub fn nodes(&self) -> &[Q2rNode] {
        &self.nodes
    }

    pub fn theta_traj(&self) -> usize {
        self.theta_traj
    }

    pub fn params(&self) -> QrParams {
        self.params
    }

    pub fn region(&self) -> Region {
        self.nodes[0].region
    }

    /// `(node, its QR-tree)` for every block that owns trajectories.
    pub fn owners(&self) -> impl Iterator<Item = (u32, &QrIndex)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.owned.as_ref().map(|q| (i as u32, q)))
    }

    pub fn page_count(&self) -> usize {
        self.owners().map(|(_, q)| q.store().len()).sum()
    }

    /// Owning node of `user`, if indexed.
    pub fn owner_of(&self, user: UserId) -> Option<u32> {
        self.owners()
            .find(|(_, q)| q.assignments().iter().any(|a| a.members.contains(&user)))
            .map(|(i, _)| i)
    }
}
