//! Domain types, the meeting predicate and the exhaustive CTQ oracle.
//!
//! Everything here is deliberately index-free: [`oracle_ctq`] scans every
//! trajectory of the dataset at every level, and serves as ground truth for
//! the indexed query paths.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u64);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One sample: planar position in meters, time in whole seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub x: f64,
    pub y: f64,
    pub t: u64,
}

impl TrajPoint {
    pub fn new(x: f64, y: f64, t: u64) -> Self {
        TrajPoint { x, y, t }
    }
}

/// A user's time-ordered samples. Never empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user: UserId,
    points: Vec<TrajPoint>,
}

impl Trajectory {
    pub fn new(user: UserId, points: Vec<TrajPoint>) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidTrajectory {
            user: user.0,
            reason: reason.to_string(),
        };
        if points.is_empty() {
            return Err(invalid("no points"));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if points.windows(2).any(|w| w[0].t > w[1].t) {
            return Err(invalid("points not sorted by time"));
        }
        Ok(Trajectory { user, points })
    }

    /// Sorts by time (stable, so equal timestamps keep their input order)
    /// before validating.
    pub fn from_unsorted(user: UserId, mut points: Vec<TrajPoint>) -> Result<Self> {
        points.sort_by_key(|p| p.t);
        Self::new(user, points)
    }

    pub fn points(&self) -> &[TrajPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> u64 {
        self.points[0].t
    }

    pub fn end(&self) -> u64 {
        self.points[self.points.len() - 1].t
    }

    /// Spatial bounding box as `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            b.0 = b.0.min(p.x);
            b.1 = b.1.min(p.y);
            b.2 = b.2.max(p.x);
            b.3 = b.3.max(p.y);
        }
        b
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    pub window_days: u32,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, window_days: u32) -> Result<Self> {
        let mut seen = HashSet::with_capacity(trajectories.len());
        for t in &trajectories {
            if !seen.insert(t.user) {
                return Err(Error::DuplicateUser(t.user.0));
            }
        }
        Ok(Dataset {
            trajectories,
            window_days,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<Trajectory> {
        self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, user: UserId) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.user == user)
    }

    pub fn point_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Smallest timestamp over all samples, or `None` for an empty dataset.
    pub fn min_time(&self) -> Option<u64> {
        self.trajectories.iter().map(Trajectory::start).min()
    }
}

/// CTQ thresholds: ψ in meters, τ in seconds, and the tracing depth L.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryParams {
    pub psi: f64,
    pub tau: u64,
    pub levels: u32,
}

impl QueryParams {
    pub fn new(psi: f64, tau: u64, levels: u32) -> Result<Self> {
        let p = QueryParams { psi, tau, levels };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.psi.is_finite() && self.psi > 0.0) {
            return Err(Error::InvalidParam(format!("psi must be > 0, got {}", self.psi)));
        }
        if self.levels < 1 {
            return Err(Error::InvalidParam("levels must be >= 1".into()));
        }
        Ok(())
    }
}

/// One member of the CTQ answer: `user` was exposed at `t_exposed` by `via`
/// through `level` intermediate carriers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExposureRecord {
    pub level: u32,
    pub user: UserId,
    pub t_exposed: u64,
    pub via: UserId,
}

pub fn spatial_dist(a: &TrajPoint, b: &TrajPoint) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

pub fn temporal_dist(t1: u64, t2: u64) -> u64 {
    t1.abs_diff(t2)
}

/// Earliest timestamp of `u` at which it meets `v`: some sample of `v` lies
/// within `psi` meters and `tau` seconds, and the `u` timestamp is strictly
/// after `t_min` when given.
///
/// Both trajectories are time-sorted, so the candidate `v` samples for each
/// `u` sample form a sliding window.
pub fn meets(u: &Trajectory, v: &Trajectory, psi: f64, tau: u64, t_min: Option<u64>) -> Option<u64> {
    let vp = v.points();
    let (mut lo, mut hi) = (0usize, 0usize);
    for a in u.points() {
        if t_min.is_some_and(|m| a.t <= m) {
            continue;
        }
        let from = a.t.saturating_sub(tau);
        let to = a.t.saturating_add(tau);
        while lo < vp.len() && vp[lo].t < from {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < vp.len() && vp[hi].t <= to {
            hi += 1;
        }
        if vp[lo..hi].iter().any(|b| spatial_dist(a, b) <= psi) {
            return Some(a.t);
        }
    }
    None
}

/// Picks the better of two `(t_exposed, via)` candidates: earlier time, then
/// smaller via id.
pub(crate) fn better(cur: Option<(u64, UserId)>, cand: (u64, UserId)) -> bool {
    match cur {
        None => true,
        Some(c) => cand < c,
    }
}

/// Exhaustive CTQ evaluation by level-order expansion over every trajectory
/// of `d`. Output is sorted by `(level, user)`.
pub fn oracle_ctq(d: &Dataset, q: &Trajectory, params: &QueryParams) -> Vec<ExposureRecord> {
    let mut recorded: HashSet<UserId> = HashSet::new();
    recorded.insert(q.user);
    let mut out = Vec::new();
    let mut frontier: Vec<(&Trajectory, Option<u64>)> = vec![(q, None)];

    for level in 0..params.levels {
        if frontier.is_empty() {
            break;
        }
        let mut found: Vec<(&Trajectory, u64, UserId)> = Vec::new();
        for u in d.trajectories() {
            if recorded.contains(&u.user) {
                continue;
            }
            let mut best: Option<(u64, UserId)> = None;
            for &(v, t_min) in &frontier {
                if let Some(t) = meets(u, v, params.psi, params.tau, t_min) {
                    if better(best, (t, v.user)) {
                        best = Some((t, v.user));
                    }
                }
            }
            if let Some((t, via)) = best {
                found.push((u, t, via));
            }
        }
        found.sort_by_key(|(u, _, _)| u.user);
        frontier = Vec::with_capacity(found.len());
        for (u, t, via) in found {
            recorded.insert(u.user);
            out.push(ExposureRecord {
                level,
                user: u.user,
                t_exposed: t,
                via,
            });
            frontier.push((u, Some(t)));
        }
    }
    out
}
