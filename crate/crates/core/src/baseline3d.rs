//! Comparison index: a 3D R-tree over `(x, y, t)` with one whole trajectory
//! per leaf entry. Internal nodes are memory-resident; only leaf pages are
//! charged as I/O.

use crate::error::Result;
use crate::model::{Dataset, TrajPoint, Trajectory};
use crate::pack::str_groups;
use crate::query::{embr, ContactSource, Probe, QueryCtx};
use crate::storage::{PageId, PageStore};

pub const DEFAULT_FANOUT: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3 {
    pub min_x: f64,
    pub min_y: f64,
    pub min_t: u64,
    pub max_x: f64,
    pub max_y: f64,
    pub max_t: u64,
}

impl Box3 {
    pub fn of_trajectory(t: &Trajectory) -> Self {
        let (min_x, min_y, max_x, max_y) = t.extent();
        Box3 {
            min_x,
            min_y,
            min_t: t.start(),
            max_x,
            max_y,
            max_t: t.end(),
        }
    }

    pub fn union(&self, o: &Box3) -> Box3 {
        Box3 {
            min_x: self.min_x.min(o.min_x),
            min_y: self.min_y.min(o.min_y),
            min_t: self.min_t.min(o.min_t),
            max_x: self.max_x.max(o.max_x),
            max_y: self.max_y.max(o.max_y),
            max_t: self.max_t.max(o.max_t),
        }
    }

    pub fn contains(&self, o: &Box3) -> bool {
        self.min_x <= o.min_x
            && self.min_y <= o.min_y
            && self.min_t <= o.min_t
            && self.max_x >= o.max_x
            && self.max_y >= o.max_y
            && self.max_t >= o.max_t
    }

    /// Does the `±ψ, ±τ` box around `p` overlap this box?
    pub fn touches(&self, p: &TrajPoint, psi: f64, tau: u64) -> bool {
        let e = embr(p, psi);
        e.min_x <= self.max_x
            && self.min_x <= e.max_x
            && e.min_y <= self.max_y
            && self.min_y <= e.max_y
            && p.t.saturating_sub(tau) <= self.max_t
            && self.min_t <= p.t.saturating_add(tau)
    }

    fn center2(&self, dim: usize) -> f64 {
        match dim {
            0 => self.min_x + self.max_x,
            1 => self.min_y + self.max_y,
            _ => self.min_t as f64 + self.max_t as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RKind {
    Leaf { page: PageId },
    Internal { children: Vec<u32> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RNode {
    pub bbox: Box3,
    pub kind: RKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RTree3 {
    pub(crate) nodes: Vec<RNode>,
    pub(crate) root: Option<u32>,
    pub(crate) store: PageStore,
    pub(crate) page_capacity: usize,
    pub(crate) fanout: usize,
}

fn str_boxes(boxes: &[Box3], cap: usize) -> Vec<Vec<usize>> {
    str_groups(boxes.len(), 3, cap, |a, b, d| {
        boxes[a].center2(d).total_cmp(&boxes[b].center2(d))
    })
}

impl RTree3 {
    pub fn build(d: &Dataset, page_capacity: usize) -> Result<Self> {
        Self::build_with_fanout(d, page_capacity, DEFAULT_FANOUT)
    }

    pub fn build_with_fanout(d: &Dataset, page_capacity: usize, fanout: usize) -> Result<Self> {
        if page_capacity == 0 || fanout < 2 {
            return Err(crate::error::Error::InvalidParam(
                "baseline needs page capacity >= 1 and fan-out >= 2".into(),
            ));
        }
        let trajs = d.trajectories();
        let boxes: Vec<Box3> = trajs.iter().map(Box3::of_trajectory).collect();
        let mut store = PageStore::new(0);
        let mut nodes = Vec::new();
        let mut level: Vec<u32> = Vec::new();
        for group in str_boxes(&boxes, page_capacity) {
            let members: Vec<Trajectory> = group.iter().map(|&i| trajs[i].clone()).collect();
            let page = store.write_page(&members)?;
            let bbox = group
                .iter()
                .skip(1)
                .fold(boxes[group[0]], |acc, &i| acc.union(&boxes[i]));
            level.push(nodes.len() as u32);
            nodes.push(RNode {
                bbox,
                kind: RKind::Leaf { page },
            });
        }
        store.seal();
        while level.len() > 1 {
            let lboxes: Vec<Box3> = level.iter().map(|&n| nodes[n as usize].bbox).collect();
            let mut next = Vec::new();
            for group in str_boxes(&lboxes, fanout) {
                let bbox = group
                    .iter()
                    .skip(1)
                    .fold(lboxes[group[0]], |acc, &i| acc.union(&lboxes[i]));
                next.push(nodes.len() as u32);
                nodes.push(RNode {
                    bbox,
                    kind: RKind::Internal {
                        children: group.iter().map(|&i| level[i]).collect(),
                    },
                });
            }
            level = next;
        }
        Ok(RTree3 {
            root: level.first().copied(),
            nodes,
            store,
            page_capacity,
            fanout,
        })
    }

    pub fn nodes(&self) -> &[RNode] {
        &self.nodes
    }

    pub fn root(&self) -> Option<u32> {
        self.root
    }

    pub fn store(&self) -> &PageStore {
        &self.store
    }

    pub fn page_capacity(&self) -> usize {
        self.page_capacity
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, RKind::Leaf { .. }))
            .count()
    }

    pub fn height(&self) -> usize {
        let mut h = 0;
        let mut cur = self.root;
        while let Some(n) = cur {
            h += 1;
            cur = match &self.nodes[n as usize].kind {
                RKind::Internal { children } => children.first().copied(),
                RKind::Leaf { .. } => None,
            };
        }
        h
    }

    fn descend(&self, node: u32, points: &[TrajPoint], probe: &mut Probe<'_>, ctx: &mut QueryCtx) -> Result<()> {
        let n = &self.nodes[node as usize];
        let (psi, tau) = (probe.params.psi, probe.params.tau);
        let hits: Vec<TrajPoint> = points.iter().filter(|p| n.bbox.touches(p, psi, tau)).copied().collect();
        if hits.is_empty() {
            return Ok(());
        }
        ctx.visit(self.store.tag(), node);
        match &n.kind {
            RKind::Leaf { page } => probe.test_page(&self.store, *page, ctx),
            RKind::Internal { children } => {
                for &c in children {
                    self.descend(c, &hits, probe, ctx)?;
                }
                Ok(())
            }
        }
    }
}

impl ContactSource for RTree3 {
    fn probe(&self, probe: &mut Probe<'_>, ctx: &mut QueryCtx) -> Result<()> {
        match self.root {
            Some(r) => self.descend(r, probe.v.points(), probe, ctx),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QueryParams, UserId};
    use crate::query::trace;

    fn traj(user: u64, pts: &[(f64, f64, u64)]) -> Trajectory {
        Trajectory::new(
            UserId(user),
            pts.iter().map(|&(x, y, t)| TrajPoint::new(x, y, t)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn leaf_counts() {
        let d = Dataset::new(vec![traj(1, &[(0.0, 0.0, 0)])], 1).unwrap();
        let t = RTree3::build(&d, 4).unwrap();
        assert_eq!(t.leaf_count(), 1);
        assert_eq!(t.store().len(), 1);
        for n in [5usize, 16, 100] {
            let d = Dataset::new((0..n as u64).map(|i| traj(i, &[(i as f64, 0.0, i)])).collect(), 1).unwrap();
            let t = RTree3::build(&d, 4).unwrap();
            assert_eq!(t.leaf_count(), n.div_ceil(4));
        }
    }

    #[test]
    fn disjoint_query_reads_nothing() {
        let d = Dataset::new(vec![traj(1, &[(0.0, 0.0, 0)]), traj(2, &[(5.0, 5.0, 10)])], 1).unwrap();
        let t = RTree3::build(&d, 4).unwrap();
        let q = traj(0, &[(1000.0, 0.0, 0)]);
        let r = trace(&t, &q, &QueryParams::new(2.0, 60, 2).unwrap()).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.stats.unique_page_reads, 0);
        assert_eq!(r.stats.nodes_visited, 0);
    }

    #[test]
    fn empty_tree() {
        let d = Dataset::new(vec![], 1).unwrap();
        let t = RTree3::build(&d, 4).unwrap();
        assert_eq!(t.root(), None);
        let q = traj(0, &[(0.0, 0.0, 0)]);
        assert!(trace(&t, &q, &QueryParams::new(2.0, 60, 1).unwrap())
            .unwrap()
            .records
            .is_empty());
    }
}
