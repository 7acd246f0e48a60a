//! Contact tracing over the indexes.
//!
//! [`trace`] is the level-order driver shared by every index: it asks a
//! [`ContactSource`] which unrecorded users meet a frontier member, keeps the
//! earliest exposure per user (ties to the smaller via id), and expands the
//! frontier up to `L` levels. The QR-tree source is the divide-and-conquer
//! [`match_ct`] descent.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{better, meets, ExposureRecord, QueryParams, TrajPoint, Trajectory, UserId};
use crate::qr_index::{Q2rIndex, QrIndex};
use crate::spacetime::{NodeId, QuadTree, Region, TemporalBucketing};
use crate::storage::{PageId, QueryScope};

/// Slack added to EMBR half-widths so that rounding in `x ± ψ` can never
/// prune a pair the exact predicate accepts.
fn embr_slack(x: f64, y: f64, psi: f64) -> f64 {
    1e-9 * (1.0 + x.abs().max(y.abs()) + psi)
}

/// Square of half-width ψ (plus rounding slack) around a point.
pub fn embr(p: &TrajPoint, psi: f64) -> Region {
    let h = psi + embr_slack(p.x, p.y, psi);
    Region {
        min_x: p.x - h,
        min_y: p.y - h,
        max_x: p.x + h,
        max_y: p.y + h,
    }
}

/// The part of a frontier trajectory routed to one quadtree node.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySlice {
    pub points: Vec<TrajPoint>,
    pub psi: f64,
    pub tau: u64,
    pub t_min: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStats {
    pub unique_page_reads: u64,
    pub raw_page_reads: u64,
    pub nodes_visited: u64,
    pub candidates_tested: u64,
    pub wall_time_us: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceResult {
    /// Sorted by `(level, user)`.
    pub records: Vec<ExposureRecord>,
    pub stats: TraceStats,
    /// Every `(store tag, page)` read during the query.
    pub fetched: BTreeSet<(u32, PageId)>,
    /// `(store tag, node)` visits, when requested through [`QueryCtx`].
    pub visited: Vec<(u32, NodeId)>,
}

/// Per-query mutable state: read scope and counters.
#[derive(Debug, Default)]
pub struct QueryCtx {
    pub scope: QueryScope,
    pub nodes_visited: u64,
    pub candidates_tested: u64,
    pub record_visits: bool,
    pub visited: Vec<(u32, NodeId)>,
    fetched: BTreeSet<(u32, PageId)>,
}

impl QueryCtx {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn recording_visits() -> Self {
        QueryCtx {
            record_visits: true,
            ..Self::default()
        }
    }

    pub(crate) fn visit(&mut self, tag: u32, node: NodeId) {
        self.nodes_visited += 1;
        if self.record_visits {
            self.visited.push((tag, node));
        }
    }

    pub(crate) fn note_fetch(&mut self, tag: u32, page: PageId) {
        self.fetched.insert((tag, page));
    }
}

/// Per-frontier-member candidate test state: the users that may still be
/// exposed and the pages already examined for this member.
pub struct Probe<'a> {
    pub v: &'a Trajectory,
    pub t_min: Option<u64>,
    pub params: &'a QueryParams,
    pub excluded: &'a HashSet<UserId>,
    pub memo: HashSet<(u32, PageId)>,
    pub found: BTreeMap<UserId, (u64, Trajectory)>,
}

impl<'a> Probe<'a> {
    pub fn new(v: &'a Trajectory, t_min: Option<u64>, params: &'a QueryParams, excluded: &'a HashSet<UserId>) -> Self {
        Probe {
            v,
            t_min,
            params,
            excluded,
            memo: HashSet::new(),
            found: BTreeMap::new(),
        }
    }

    /// Runs the exact predicate against every eligible trajectory of a page.
    pub fn test_page(&mut self, store: &crate::storage::PageStore, page: PageId, ctx: &mut QueryCtx) -> Result<()> {
        if !self.memo.insert((store.tag(), page)) {
            return Ok(());
        }
        let group = store.read_page(page, &mut ctx.scope)?;
        ctx.note_fetch(store.tag(), page);
        for u in group {
            if self.excluded.contains(&u.user) || u.user == self.v.user {
                continue;
            }
            ctx.candidates_tested += 1;
            if let Some(t) = meets(&u, self.v, self.params.psi, self.params.tau, self.t_min) {
                match self.found.get(&u.user) {
                    Some((old, _)) if *old <= t => {}
                    _ => {
                        self.found.insert(u.user, (t, u));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Something that can list the users a trajectory exposes.
pub trait ContactSource {
    fn probe(&self, probe: &mut Probe<'_>, ctx: &mut QueryCtx) -> Result<()>;
}

/// For each child region, the slice points whose EMBR touches it.
pub fn extended_intersection(children: &[Region; 4], slice: &QuerySlice) -> [QuerySlice; 4] {
    let mut out: [QuerySlice; 4] = std::array::from_fn(|_| QuerySlice {
        points: Vec::new(),
        psi: slice.psi,
        tau: slice.tau,
        t_min: slice.t_min,
    });
    for p in &slice.points {
        let e = embr(p, slice.psi);
        for (c, r) in children.iter().enumerate() {
            if e.intersects(r) {
                out[c].points.push(*p);
            }
        }
    }
    out
}

/// All buckets overlapping `[t - τ, t + τ]` for some slice point.
pub fn extended_time_windows(slice: &QuerySlice, bucketing: &TemporalBucketing) -> BTreeSet<u64> {
    let mut out = BTreeSet::new();
    let mut last: Option<(u64, u64)> = None;
    for p in &slice.points {
        if let Some((lo, hi)) =
            bucketing.buckets_overlapping(p.t.saturating_sub(slice.tau), p.t.saturating_add(slice.tau))
        {
            // consecutive samples usually repeat the same window
            if last != Some((lo, hi)) {
                out.extend(lo..=hi);
                last = Some((lo, hi));
            }
        }
    }
    out
}

/// Reads the pages registered at `leaf` for any of `buckets` and tests
/// their trajectories against the probe's full frontier trajectory.
pub fn evaluate_contacts(
    index: &QrIndex,
    leaf: NodeId,
    buckets: &BTreeSet<u64>,
    probe: &mut Probe<'_>,
    ctx: &mut QueryCtx,
) -> Result<()> {
    for page in index.pages_for_buckets(leaf, buckets) {
        probe.test_page(index.store(), page, ctx)?;
    }
    Ok(())
}

/// Divide-and-conquer descent from `node` with the slice routed to it.
pub fn match_ct(
    index: &QrIndex,
    node: NodeId,
    slice: &QuerySlice,
    probe: &mut Probe<'_>,
    ctx: &mut QueryCtx,
) -> Result<()> {
    if slice.points.is_empty() {
        return Ok(());
    }
    ctx.visit(index.store().tag(), node);
    let tree: &QuadTree = index.tree();
    match tree.node(node).children() {
        None => {
            let buckets = extended_time_windows(slice, &index.bucketing());
            evaluate_contacts(index, node, &buckets, probe, ctx)
        }
        Some(children) => {
            let regions = children.map(|c| tree.node(c).region);
            let parts = extended_intersection(&regions, slice);
            for (c, part) in children.into_iter().zip(parts.iter()) {
                match_ct(index, c, part, probe, ctx)?;
            }
            Ok(())
        }
    }
}

/// Root slice: frontier points whose EMBR touches `region`.
fn root_slice(region: &Region, probe: &Probe<'_>) -> QuerySlice {
    QuerySlice {
        points: probe
            .v
            .points()
            .iter()
            .filter(|p| embr(p, probe.params.psi).intersects(region))
            .copied()
            .collect(),
        psi: probe.params.psi,
        tau: probe.params.tau,
        t_min: probe.t_min,
    }
}

impl ContactSource for QrIndex {
    fn probe(&self, probe: &mut Probe<'_>, ctx: &mut QueryCtx) -> Result<()> {
        let slice = root_slice(&self.tree().region(), probe);
        match_ct(self, QuadTree::ROOT, &slice, probe, ctx)
    }
}

impl Q2rIndex {
    /// QR-trees of every owning block whose region touches some EMBR of `q`.
    pub fn route(&self, q: &Trajectory, psi: f64) -> Vec<&QrIndex> {
        let embrs: Vec<Region> = q.points().iter().map(|p| embr(p, psi)).collect();
        let mut out = Vec::new();
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes()[n as usize];
            if !embrs.iter().any(|e| e.intersects(&node.region)) {
                continue;
            }
            if let Some(qr) = &node.owned {
                out.push(qr);
            }
            if let Some(ch) = node.children {
                stack.extend(ch.iter().rev());
            }
        }
        out
    }
}

impl ContactSource for Q2rIndex {
    fn probe(&self, probe: &mut Probe<'_>, ctx: &mut QueryCtx) -> Result<()> {
        for qr in self.route(probe.v, probe.params.psi) {
            qr.probe(probe, ctx)?;
        }
        Ok(())
    }
}

#[cfg(not(target_arch = "wasm32"))]
fn clock() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(target_arch = "wasm32")]
fn clock() -> Option<std::time::Instant> {
    None
}

/// Multi-level CTQ over any contact source.
pub fn trace<S: ContactSource + ?Sized>(source: &S, q: &Trajectory, params: &QueryParams) -> Result<TraceResult> {
    trace_with(source, q, params, QueryCtx::new())
}

pub fn trace_with<S: ContactSource + ?Sized>(
    source: &S,
    q: &Trajectory,
    params: &QueryParams,
    mut ctx: QueryCtx,
) -> Result<TraceResult> {
    params.validate()?;
    let start = clock();
    let mut recorded: HashSet<UserId> = HashSet::from([q.user]);
    let mut records = Vec::new();
    let mut frontier: Vec<(Trajectory, Option<u64>)> = vec![(q.clone(), None)];

    for level in 0..params.levels {
        if frontier.is_empty() {
            break;
        }
        let mut best: BTreeMap<UserId, (u64, UserId, Trajectory)> = BTreeMap::new();
        for (v, t_min) in &frontier {
            let mut probe = Probe::new(v, *t_min, params, &recorded);
            source.probe(&mut probe, &mut ctx)?;
            for (user, (t, traj)) in probe.found {
                let cur = best.get(&user).map(|(t, via, _)| (*t, *via));
                if better(cur, (t, v.user)) {
                    best.insert(user, (t, v.user, traj));
                }
            }
        }
        frontier = Vec::with_capacity(best.len());
        for (user, (t, via, traj)) in best {
            recorded.insert(user);
            records.push(ExposureRecord {
                level,
                user,
                t_exposed: t,
                via,
            });
            frontier.push((traj, Some(t)));
        }
    }

    let counter = ctx.scope.counter();
    Ok(TraceResult {
        records,
        stats: TraceStats {
            unique_page_reads: counter.unique_reads,
            raw_page_reads: counter.raw_reads,
            nodes_visited: ctx.nodes_visited,
            candidates_tested: ctx.candidates_tested,
            wall_time_us: start.map_or(0, |s| s.elapsed().as_micros() as u64),
        },
        fetched: ctx.fetched,
        visited: ctx.visited,
    })
}
