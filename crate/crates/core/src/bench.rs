//! Parameter sweeps comparing the QR-tree, Q²R-tree and 3D R-tree baseline.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline3d::RTree3;
use crate::error::{Error, Result};
use crate::model::{oracle_ctq, Dataset, ExposureRecord, QueryParams, Trajectory, UserId};
use crate::qr_index::{Q2rIndex, QrIndex, QrParams, DEFAULT_THETA_TRAJ};
use crate::query::{trace, TraceResult};
use crate::workload::{generate, users_with_length, GenSpec};

/// Query trajectory length classes.
pub const QUERY_POINT_BUCKETS: [(usize, usize); 4] = [(1, 50), (51, 100), (101, 200), (201, usize::MAX)];
pub const TRAJECTORY_COUNTS: [usize; 4] = [10_000, 25_000, 50_000, 100_000];
pub const PSI_VALUES: [f64; 4] = [1.0, 2.0, 4.0, 10.0];
pub const TAU_VALUES: [u64; 5] = [60, 900, 1800, 3600, 10_800];
pub const LEVEL_VALUES: [u32; 3] = [1, 2, 3];
/// τ held fixed along the levels axis, as in the depth experiment.
pub const LEVELS_AXIS_TAU: u64 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    QueryPoints,
    Trajectories,
    Psi,
    Tau,
    Levels,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::QueryPoints,
        Axis::Trajectories,
        Axis::Psi,
        Axis::Tau,
        Axis::Levels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::QueryPoints => "query-points",
            Axis::Trajectories => "trajectories",
            Axis::Psi => "psi",
            Axis::Tau => "tau",
            Axis::Levels => "levels",
        }
    }
}

/// One experiment setting. Sweeps vary exactly one field from the defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub query_points: (usize, usize),
    pub trajectories: usize,
    pub psi: f64,
    pub tau: u64,
    pub levels: u32,
}

impl Default for Setting {
    fn default() -> Self {
        Setting {
            query_points: (51, 100),
            trajectories: 50_000,
            psi: 2.0,
            tau: 1800,
            levels: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: Vec<Axis>,
    pub defaults: Setting,
    /// Override the trajectory-count axis values (for desk-scale runs).
    pub trajectory_counts: Vec<usize>,
    pub queries: usize,
    pub generator: GenSpec,
    /// Planted chains per 1,000 users.
    pub chains_per_1k: usize,
    pub chain_len: usize,
    pub qr: QrParams,
    pub theta_traj: usize,
    pub verify: bool,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            axes: Axis::ALL.to_vec(),
            defaults: Setting::default(),
            trajectory_counts: TRAJECTORY_COUNTS.to_vec(),
            queries: 100,
            generator: GenSpec {
                points_per_user: (10, 300),
                ..GenSpec::default()
            },
            chains_per_1k: 20,
            chain_len: 3,
            qr: QrParams::default(),
            theta_traj: DEFAULT_THETA_TRAJ,
            verify: false,
            seed: 1,
        }
    }
}

impl SweepSpec {
    /// The settings of one axis: that field varied, the rest at defaults.
    pub fn settings(&self, axis: Axis) -> Vec<(String, Setting)> {
        let d = self.defaults;
        match axis {
            Axis::QueryPoints => QUERY_POINT_BUCKETS
                .iter()
                .map(|&b| (bucket_label(b), Setting { query_points: b, ..d }))
                .collect(),
            Axis::Trajectories => self
                .trajectory_counts
                .iter()
                .map(|&n| (n.to_string(), Setting { trajectories: n, ..d }))
                .collect(),
            Axis::Psi => PSI_VALUES
                .iter()
                .map(|&v| (format!("{v}m"), Setting { psi: v, ..d }))
                .collect(),
            Axis::Tau => TAU_VALUES
                .iter()
                .map(|&v| (format!("{v}s"), Setting { tau: v, ..d }))
                .collect(),
            Axis::Levels => LEVEL_VALUES
                .iter()
                .map(|&v| {
                    let s = Setting {
                        levels: v,
                        tau: LEVELS_AXIS_TAU,
                        ..d
                    };
                    (v.to_string(), s)
                })
                .collect(),
        }
    }
}

fn bucket_label(b: (usize, usize)) -> String {
    if b.1 == usize::MAX {
        format!(">{}", b.0 - 1)
    } else {
        format!("{}-{}", b.0, b.1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApproachSummary {
    pub mean_runtime_us: f64,
    pub mean_unique_page_reads: f64,
    pub mean_raw_page_reads: f64,
    pub mean_records: f64,
    pub total_pages: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: Axis,
    pub value: String,
    pub setting: Setting,
    pub queries: usize,
    pub qr: ApproachSummary,
    pub q2r: ApproachSummary,
    pub baseline: ApproachSummary,
    /// Mean unique page reads, QR over baseline.
    pub qr_to_baseline: f64,
    /// Mean unique page reads, Q²R over QR.
    pub q2r_to_qr: f64,
    /// Per-query `(qr, baseline)` unique page reads.
    pub per_query_reads: Vec<(u64, u64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

/// The three indexes over one dataset.
pub struct Workbench {
    pub dataset: Dataset,
    pub qr: QrIndex,
    pub q2r: Q2rIndex,
    pub baseline: RTree3,
    /// Users taking part in planted contacts, in plant order.
    pub planted_users: Vec<UserId>,
}

impl Workbench {
    pub fn build(dataset: Dataset, planted_users: Vec<UserId>, qr: QrParams, theta_traj: usize) -> Result<Self> {
        Ok(Workbench {
            qr: QrIndex::build(&dataset, qr)?,
            q2r: Q2rIndex::build(&dataset, theta_traj, qr)?,
            baseline: RTree3::build(&dataset, qr.page_capacity)?,
            dataset,
            planted_users,
        })
    }

    pub fn generate(spec: &SweepSpec, n: usize) -> Result<Self> {
        let gen = GenSpec {
            n_users: n,
            seed: spec.seed.wrapping_add(n as u64),
            ..spec.generator.clone()
        }
        .with_random_chains(n * spec.chains_per_1k / 1000, spec.chain_len);
        let (d, plants) = generate(&gen)?;
        let mut planted = Vec::new();
        for p in plants {
            for u in [p.user_a, p.user_b] {
                if !planted.contains(&u) {
                    planted.push(u);
                }
            }
        }
        Self::build(d, planted, spec.qr, spec.theta_traj)
    }

    /// Query trajectories with a length in `bucket`: planted participants
    /// first, then other users, shuffled by `seed`.
    pub fn pick_queries(&self, bucket: (usize, usize), count: usize, seed: u64) -> Vec<&Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fits = |t: &&Trajectory| (bucket.0..=bucket.1).contains(&t.len());
        let mut planted: Vec<&Trajectory> = self
            .planted_users
            .iter()
            .filter_map(|&u| self.dataset.get(u))
            .filter(fits)
            .collect();
        planted.shuffle(&mut rng);
        let mut rest: Vec<&Trajectory> = users_with_length(&self.dataset, bucket.0, bucket.1)
            .into_iter()
            .filter(|u| !self.planted_users.contains(u))
            .filter_map(|u| self.dataset.get(u))
            .collect();
        rest.shuffle(&mut rng);
        planted.into_iter().chain(rest).take(count).collect()
    }
}

fn summarize(results: &[TraceResult], total_pages: usize) -> ApproachSummary {
    let n = results.len().max(1) as f64;
    ApproachSummary {
        mean_runtime_us: results.iter().map(|r| r.stats.wall_time_us as f64).sum::<f64>() / n,
        mean_unique_page_reads: results.iter().map(|r| r.stats.unique_page_reads as f64).sum::<f64>() / n,
        mean_raw_page_reads: results.iter().map(|r| r.stats.raw_page_reads as f64).sum::<f64>() / n,
        mean_records: results.iter().map(|r| r.records.len() as f64).sum::<f64>() / n,
        total_pages,
    }
}

/// Raised when an index disagrees with the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub approach: &'static str,
    pub query_user: UserId,
    pub expected: Vec<ExposureRecord>,
    pub got: Vec<ExposureRecord>,
}

/// Runs every approach on the same queries for one setting.
pub fn run_setting(
    bench: &Workbench,
    setting: &Setting,
    queries: usize,
    seed: u64,
    verify: bool,
) -> Result<(SweepPoint, Vec<Divergence>)> {
    let params = QueryParams::new(setting.psi, setting.tau, setting.levels)?;
    let qs = bench.pick_queries(setting.query_points, queries, seed);
    let (mut rq, mut r2, mut rb) = (Vec::new(), Vec::new(), Vec::new());
    let mut divergences = Vec::new();
    for q in &qs {
        let a = trace(&bench.qr, q, &params)?;
        let b = trace(&bench.q2r, q, &params)?;
        let c = trace(&bench.baseline, q, &params)?;
        if verify {
            let want = oracle_ctq(&bench.dataset, q, &params);
            for (name, got) in [("qr", &a), ("q2r", &b), ("baseline", &c)] {
                if got.records != want {
                    divergences.push(Divergence {
                        approach: name,
                        query_user: q.user,
                        expected: want.clone(),
                        got: got.records.clone(),
                    });
                }
            }
        }
        rq.push(a);
        r2.push(b);
        rb.push(c);
    }
    let qr = summarize(&rq, bench.qr.store().len());
    let q2r = summarize(&r2, bench.q2r.page_count());
    let baseline = summarize(&rb, bench.baseline.store().len());
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    Ok((
        SweepPoint {
            axis: Axis::Psi,
            value: String::new(),
            setting: *setting,
            queries: qs.len(),
            qr_to_baseline: ratio(qr.mean_unique_page_reads, baseline.mean_unique_page_reads),
            q2r_to_qr: ratio(q2r.mean_unique_page_reads, qr.mean_unique_page_reads),
            qr,
            q2r,
            baseline,
            per_query_reads: rq
                .iter()
                .zip(&rb)
                .map(|(a, b)| (a.stats.unique_page_reads, b.stats.unique_page_reads))
                .collect(),
        },
        divergences,
    ))
}

/// Runs every configured axis. Workbenches are built once per dataset size
/// and reused across axes.
pub fn run_sweep(spec: &SweepSpec, mut progress: impl FnMut(&str)) -> Result<(SweepReport, Vec<Divergence>)> {
    if spec.queries == 0 {
        return Err(Error::InvalidParam("sweep needs at least one query".into()));
    }
    let mut benches: BTreeMap<usize, Workbench> = BTreeMap::new();
    let mut report = SweepReport::default();
    let mut all_div = Vec::new();
    for &axis in &spec.axes {
        for (label, setting) in spec.settings(axis) {
            let bench = match benches.entry(setting.trajectories) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => {
                    progress(&format!("building indexes over {} trajectories", setting.trajectories));
                    e.insert(Workbench::generate(spec, setting.trajectories)?)
                }
            };
            progress(&format!("{}={label}", axis.name()));
            let (mut point, div) = run_setting(bench, &setting, spec.queries, spec.seed, spec.verify)?;
            point.axis = axis;
            point.value = label;
            report.points.push(point);
            all_div.extend(div);
        }
    }
    Ok((report, all_div))
}

impl SweepReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<13} {:>9} {:>7} {:>12} {:>12} {:>12} {:>10} {:>10} {:>10} {:>9} {:>9}",
            "axis", "value", "queries", "qr_us", "q2r_us", "bl_us", "qr_io", "q2r_io", "bl_io", "qr:bl", "q2r:qr"
        );
        for p in &self.points {
            let _ = writeln!(
                s,
                "{:<13} {:>9} {:>7} {:>12.1} {:>12.1} {:>12.1} {:>10.2} {:>10.2} {:>10.2} {:>9.3} {:>9.3}",
                p.axis.name(),
                p.value,
                p.queries,
                p.qr.mean_runtime_us,
                p.q2r.mean_runtime_us,
                p.baseline.mean_runtime_us,
                p.qr.mean_unique_page_reads,
                p.q2r.mean_unique_page_reads,
                p.baseline.mean_unique_page_reads,
                p.qr_to_baseline,
                p.q2r_to_qr,
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepSpec {
        SweepSpec {
            defaults: Setting {
                trajectories: 10,
                ..Default::default()
            },
            trajectory_counts: vec![10],
            queries: 3,
            generator: GenSpec {
                points_per_user: (1, 250),
                extent: 500.0,
                ..Default::default()
            },
            chains_per_1k: 300,
            verify: true,
            ..Default::default()
        }
    }

    #[test]
    fn one_axis_varies_per_experiment() {
        let spec = SweepSpec::default();
        for axis in Axis::ALL {
            let d = match axis {
                Axis::Levels => Setting {
                    tau: LEVELS_AXIS_TAU,
                    ..spec.defaults
                },
                _ => spec.defaults,
            };
            for (_, s) in spec.settings(axis) {
                let diffs = [
                    s.query_points != d.query_points,
                    s.trajectories != d.trajectories,
                    s.psi != d.psi,
                    s.tau != d.tau,
                    s.levels != d.levels,
                ];
                assert!(diffs.iter().filter(|&&x| x).count() <= 1);
            }
            let values: Vec<Setting> = spec.settings(axis).into_iter().map(|(_, s)| s).collect();
            assert!(values.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn tiny_sweep_completes() {
        let (rep, div) = run_sweep(&tiny(), |_| {}).unwrap();
        assert!(div.is_empty(), "{div:?}");
        assert_eq!(rep.points.len(), 4 + 1 + 4 + 5 + 3);
        let text = rep.to_text();
        assert!(text.contains("q2r:qr"));
        for p in &rep.points {
            assert!(p.qr.total_pages > 0 && p.q2r.total_pages > 0 && p.baseline.total_pages > 0);
        }
    }
}
