//! Shared fixtures: an independent brute-force CTQ, index bundles, random
//! lattice datasets and the threshold-edge battery.
#![allow(dead_code)]

use std::collections::BTreeSet;

use ctq::baseline3d::RTree3;
use ctq::model::{oracle_ctq, Dataset, ExposureRecord, QueryParams, TrajPoint, Trajectory, UserId};
use ctq::qr_index::{Q2rIndex, QrIndex, QrParams};
use ctq::query::trace;
use ctq::spacetime::Region;
use ctq::validate;
use proptest::prelude::*;

/// All-pairs CTQ. Distances are compared squared, which is exact for the
/// lattice coordinates the tests use.
pub fn brute_ctq(trajs: &[Trajectory], q: &Trajectory, p: &QueryParams) -> Vec<ExposureRecord> {
    let psi2 = p.psi * p.psi;
    let mut recorded: BTreeSet<UserId> = BTreeSet::from([q.user]);
    let mut frontier: Vec<(Trajectory, Option<u64>)> = vec![(q.clone(), None)];
    let mut out = Vec::new();
    for level in 0..p.levels {
        let mut next = Vec::new();
        for u in trajs {
            if recorded.contains(&u.user) {
                continue;
            }
            let mut best: Option<(u64, UserId)> = None;
            for (v, t_min) in &frontier {
                for a in u.points() {
                    if t_min.is_some_and(|m| a.t <= m) {
                        continue;
                    }
                    let hit = v.points().iter().any(|b| {
                        let (dx, dy) = (a.x - b.x, a.y - b.y);
                        a.t.abs_diff(b.t) <= p.tau && dx * dx + dy * dy <= psi2
                    });
                    if hit && best.is_none_or(|c| (a.t, v.user) < c) {
                        best = Some((a.t, v.user));
                    }
                }
            }
            if let Some((t, via)) = best {
                next.push(ExposureRecord {
                    level,
                    user: u.user,
                    t_exposed: t,
                    via,
                });
            }
        }
        frontier.clear();
        for r in &next {
            recorded.insert(r.user);
            let t = trajs.iter().find(|t| t.user == r.user).unwrap().clone();
            frontier.push((t, Some(r.t_exposed)));
        }
        out.extend(next);
    }
    out.sort();
    out
}

/// The three indexes over one dataset.
pub struct Indexes {
    pub qr: QrIndex,
    pub q2r: Q2rIndex,
    pub baseline: RTree3,
}

impl Indexes {
    pub fn build(d: &Dataset, qr: QrParams, theta_traj: usize, fanout: usize) -> Self {
        let idx = Indexes {
            qr: QrIndex::build(d, qr).unwrap(),
            q2r: Q2rIndex::build(d, theta_traj, qr).unwrap(),
            baseline: RTree3::build_with_fanout(d, qr.page_capacity, fanout).unwrap(),
        };
        idx.check(d);
        idx
    }

    pub fn check(&self, d: &Dataset) {
        validate::check_qr(&self.qr).unwrap();
        validate::check_page_atomicity(&[self.qr.store()], d).unwrap();
        validate::check_q2r(&self.q2r, d).unwrap();
        validate::check_rtree(&self.baseline, d).unwrap();
    }

    /// Runs every index plus the library oracle; returns the first
    /// disagreement with `want`.
    pub fn compare(&self, d: &Dataset, q: &Trajectory, p: &QueryParams, want: &[ExposureRecord]) -> Result<(), String> {
        let runs = [
            ("oracle_ctq", oracle_ctq(d, q, p)),
            ("qr", trace(&self.qr, q, p).unwrap().records),
            ("q2r", trace(&self.q2r, q, p).unwrap().records),
            ("baseline", trace(&self.baseline, q, p).unwrap().records),
        ];
        for (name, got) in runs {
            if got != want {
                return Err(format!("{name}: got {got:?}, want {want:?}"));
            }
        }
        Ok(())
    }
}

pub fn traj(user: u64, pts: &[(f64, f64, u64)]) -> Trajectory {
    Trajectory::from_unsorted(
        UserId(user),
        pts.iter().map(|&(x, y, t)| TrajPoint::new(x, y, t)).collect(),
    )
    .unwrap()
}

/// Small dense datasets on a 0.5 m lattice with 30 s steps, so exact
/// threshold ties are common.
pub fn lattice_dataset(max_users: usize, max_points: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(
        prop::collection::vec((0u32..=24, 0u32..=24, 0u64..=400), 1..=max_points),
        1..=max_users,
    )
    .prop_map(|users| {
        let trajs = users
            .into_iter()
            .enumerate()
            .map(|(i, pts)| {
                let pts: Vec<(f64, f64, u64)> = pts
                    .into_iter()
                    .map(|(x, y, t)| (x as f64 * 0.5, y as f64 * 0.5, t * 30))
                    .collect();
                traj(i as u64 + 1, &pts)
            })
            .collect();
        Dataset::new(trajs, 1).unwrap()
    })
}

pub fn grid_params() -> impl Strategy<Value = QueryParams> {
    (
        prop::sample::select(vec![1.0, 2.0, 4.0, 10.0]),
        prop::sample::select(vec![60u64, 900, 1800, 3600]),
        1u32..=3,
    )
        .prop_map(|(psi, tau, l)| QueryParams::new(psi, tau, l).unwrap())
}

pub fn small_qr_params() -> impl Strategy<Value = QrParams> {
    (1usize..=6, 1usize..=5, prop::sample::select(vec![60u64, 600, 3600])).prop_map(|(theta, b, w)| QrParams {
        theta,
        page_capacity: b,
        bucket_width: w,
        ..QrParams::default()
    })
}

/// One hand-built instance with its expected answer.
pub struct EdgeCase {
    pub name: &'static str,
    pub data: Vec<Trajectory>,
    pub q: Trajectory,
    pub params: QueryParams,
    pub want: Vec<(u32, u64, u64, u64)>,
}

fn rec(level: u32, user: u64, t: u64, via: u64) -> (u32, u64, u64, u64) {
    (level, user, t, via)
}

/// Instances placed exactly on ψ, τ, cell boundaries, bucket boundaries and
/// `t_exposed`. Coordinates are symmetric about the origin, so the root
/// split of any padded enclosing region lies on x = 0 and y = 0.
pub fn edge_cases() -> Vec<EdgeCase> {
    let p = |psi: f64, tau: u64, l: u32| QueryParams::new(psi, tau, l).unwrap();
    let frame = || vec![traj(90, &[(-8.0, -8.0, 0), (8.0, 8.0, 0)])];
    let with_frame = |mut v: Vec<Trajectory>| {
        v.extend(frame());
        v
    };
    vec![
        EdgeCase {
            name: "distance exactly psi (3-4-5)",
            data: with_frame(vec![traj(1, &[(3.0, 4.0, 100)])]),
            q: traj(0, &[(0.0, 0.0, 100)]),
            params: p(5.0, 60, 1),
            want: vec![rec(0, 1, 100, 0)],
        },
        EdgeCase {
            name: "distance just over psi",
            data: with_frame(vec![traj(1, &[(3.0, 4.000001, 100)])]),
            q: traj(0, &[(0.0, 0.0, 100)]),
            params: p(5.0, 60, 1),
            want: vec![],
        },
        EdgeCase {
            name: "time gap exactly tau, both directions",
            data: with_frame(vec![traj(1, &[(1.0, 0.0, 1000)]), traj(2, &[(0.0, 1.0, 1000 + 1800)])]),
            q: traj(0, &[(0.0, 0.0, 1000 + 900), (0.0, 0.5, 4600)]),
            params: p(2.0, 900, 1),
            want: vec![rec(0, 1, 1000, 0), rec(0, 2, 2800, 0)],
        },
        EdgeCase {
            name: "time gap tau + 1",
            data: with_frame(vec![traj(1, &[(1.0, 0.0, 1000)])]),
            q: traj(0, &[(0.0, 0.0, 1901)]),
            params: p(2.0, 900, 1),
            want: vec![],
        },
        EdgeCase {
            name: "samples on the root split lines",
            data: with_frame(vec![
                traj(1, &[(0.0, 2.0, 50)]),
                traj(2, &[(-2.0, 0.0, 50)]),
                traj(3, &[(0.0, -2.0, 50)]),
                traj(4, &[(2.0, 0.0, 50)]),
                traj(5, &[(2.0, 2.0, 50)]),
            ]),
            q: traj(0, &[(0.0, 0.0, 50)]),
            params: p(2.0, 60, 1),
            want: vec![rec(0, 1, 50, 0), rec(0, 2, 50, 0), rec(0, 3, 50, 0), rec(0, 4, 50, 0)],
        },
        EdgeCase {
            name: "contact across a split line",
            data: with_frame(vec![traj(1, &[(-0.5, 3.0, 70)]), traj(2, &[(3.0, -0.25, 70)])]),
            q: traj(0, &[(0.5, 3.0, 70), (3.0, 0.25, 70)]),
            params: p(1.0, 0, 1),
            want: vec![rec(0, 1, 70, 0), rec(0, 2, 70, 0)],
        },
        EdgeCase {
            name: "windows ending on bucket boundaries",
            data: with_frame(vec![
                traj(1, &[(1.0, 1.0, 3600)]),
                traj(2, &[(1.0, -1.0, 7199)]),
                traj(3, &[(-1.0, 1.0, 7201)]),
                traj(4, &[(-1.0, -1.0, 7200)]),
                traj(5, &[(-1.0, -1.0, 3599)]),
            ]),
            q: traj(0, &[(0.0, 0.0, 5400)]),
            params: p(2.0, 1800, 1),
            want: vec![rec(0, 1, 3600, 0), rec(0, 2, 7199, 0), rec(0, 4, 7200, 0)],
        },
        EdgeCase {
            name: "second level sample exactly at t_exposed",
            data: with_frame(vec![
                traj(1, &[(1.0, 0.0, 100), (5.0, 5.0, 500)]),
                traj(2, &[(1.5, 0.0, 100)]),
            ]),
            q: traj(0, &[(0.0, 0.0, 100)]),
            params: p(1.0, 0, 2),
            want: vec![rec(0, 1, 100, 0)],
        },
        EdgeCase {
            name: "second level needs a strictly later sample",
            data: with_frame(vec![
                traj(1, &[(1.0, 0.0, 100), (5.0, 5.0, 500)]),
                traj(2, &[(6.0, 5.0, 100), (5.0, 6.0, 501)]),
            ]),
            q: traj(0, &[(0.0, 0.0, 100)]),
            params: p(1.0, 1000, 2),
            want: vec![rec(0, 1, 100, 0), rec(1, 2, 501, 1)],
        },
        EdgeCase {
            name: "earlier exposure beats a smaller via",
            data: with_frame(vec![
                traj(1, &[(2.0, 0.0, 100)]),
                traj(2, &[(-2.0, 0.0, 100)]),
                traj(3, &[(-2.0, 1.0, 190), (2.0, 1.0, 200)]),
            ]),
            q: traj(0, &[(0.0, 0.0, 100)]),
            params: p(2.0, 1000, 2),
            want: vec![rec(0, 1, 100, 0), rec(0, 2, 100, 0), rec(1, 3, 190, 2)],
        },
        EdgeCase {
            name: "tie on via at the second level",
            data: with_frame(vec![
                traj(1, &[(2.0, 0.0, 100), (4.0, 4.0, 150)]),
                traj(2, &[(-2.0, 0.0, 100), (4.0, 4.0, 150)]),
                traj(3, &[(4.0, 4.5, 150)]),
            ]),
            q: traj(0, &[(0.0, 0.0, 100)]),
            params: p(2.0, 0, 2),
            want: vec![rec(0, 1, 100, 0), rec(0, 2, 100, 0), rec(1, 3, 150, 1)],
        },
        EdgeCase {
            name: "samples on the region's max corner",
            data: vec![
                traj(1, &[(8.0, 8.0, 10)]),
                traj(2, &[(-8.0, -8.0, 10)]),
                traj(3, &[(8.0, -8.0, 10)]),
            ],
            q: traj(0, &[(8.0, 7.0, 10)]),
            params: p(1.0, 0, 1),
            want: vec![rec(0, 1, 10, 0)],
        },
    ]
}

impl EdgeCase {
    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.data.clone(), 1).unwrap()
    }

    pub fn expected(&self) -> Vec<ExposureRecord> {
        self.want
            .iter()
            .map(|&(level, u, t, via)| ExposureRecord {
                level,
                user: UserId(u),
                t_exposed: t,
                via: UserId(via),
            })
            .collect()
    }

    /// Checks the hand answer against the brute force, then every index
    /// under several build settings, including a QR-tree on an unpadded
    /// region whose cell edges pass through the samples.
    pub fn run(&self) -> Result<(), String> {
        let d = self.dataset();
        let want = self.expected();
        let brute = brute_ctq(d.trajectories(), &self.q, &self.params);
        if brute != want {
            return Err(format!("hand answer {want:?} disagrees with brute force {brute:?}"));
        }
        for theta in [1, 2, 128] {
            for width in [60, 3600] {
                let params = QrParams {
                    theta,
                    page_capacity: 2,
                    bucket_width: width,
                    ..QrParams::default()
                };
                for tt in [0, 1, 64] {
                    let idx = Indexes::build(&d, params, tt, 2);
                    idx.compare(&d, &self.q, &self.params, &want)
                        .map_err(|e| format!("theta={theta} width={width} theta_traj={tt}: {e}"))?;
                }
                let tight = QrIndex::build_in(&d, params, Region::new(-8.0, -8.0, 8.0, 8.0).unwrap()).unwrap();
                validate::check_qr(&tight)?;
                let got = trace(&tight, &self.q, &self.params).unwrap().records;
                if got != want {
                    return Err(format!("qr on [-8,8]^2 theta={theta}: got {got:?}"));
                }
            }
        }
        Ok(())
    }
}
