//! Data ingestion and synthetic workloads.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, TrajPoint, Trajectory, UserId};

const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordMode {
    #[default]
    Planar,
    /// The x column holds latitude and the y column longitude, in degrees.
    Geographic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochPolicy {
    /// Timestamps are used as given.
    #[default]
    Raw,
    /// Shift so the earliest row is at t = 0.
    Rebase,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub user: String,
    pub x: String,
    pub y: String,
    pub t: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            user: "user_id".into(),
            x: "x".into(),
            y: "y".into(),
            t: "t".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub columns: ColumnMap,
    pub coords: CoordMode,
    pub epoch: EpochPolicy,
    pub window_days: u32,
    /// Projection center `(lat, lon)`; defaults to the centroid of the rows.
    pub projection_center: Option<(f64, f64)>,
    /// Offset subtracted from timestamps under [`EpochPolicy::Rebase`];
    /// defaults to the minimum timestamp.
    pub time_offset: Option<u64>,
}

/// Conventions a dataset was ingested under. Persisted with indexes so that
/// query files are read the same way.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestConventions {
    pub coords: CoordMode,
    pub epoch: EpochPolicy,
    pub time_offset: u64,
    pub projection_center: Option<(f64, f64)>,
    pub window_days: u32,
}

impl IngestConventions {
    /// Options that read another file (e.g. a query) consistently.
    pub fn follow(&self, columns: ColumnMap) -> IngestOptions {
        IngestOptions {
            columns,
            coords: self.coords,
            epoch: self.epoch,
            window_days: self.window_days,
            projection_center: self.projection_center,
            time_offset: Some(self.time_offset),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub rows: usize,
    /// `(line number, reason)` for each skipped row.
    pub skipped: Vec<(u64, String)>,
    pub conventions: IngestConventions,
}

pub fn ingest_csv_path(path: &Path, opts: &IngestOptions) -> Result<(Dataset, IngestReport)> {
    let f = std::fs::File::open(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    ingest_csv(f, opts)
}

/// Reads `user,x,y,t` rows (column names per `opts.columns`) into per-user
/// time-sorted trajectories. Malformed rows are skipped and reported.
pub fn ingest_csv<R: Read>(input: R, opts: &IngestOptions) -> Result<(Dataset, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::Ingest(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingest(format!("missing column {name:?}")))
    };
    let (cu, cx, cy, ct) = (
        col(&opts.columns.user)?,
        col(&opts.columns.x)?,
        col(&opts.columns.y)?,
        col(&opts.columns.t)?,
    );

    let mut rows: Vec<(UserId, f64, f64, u64)> = Vec::new();
    let mut skipped = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                skipped.push((line, e.to_string()));
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).ok_or_else(|| format!("missing field {i}"));
        let parsed = (|| -> std::result::Result<_, String> {
            let u: u64 = field(cu)?.parse().map_err(|e| format!("user id: {e}"))?;
            let x: f64 = field(cx)?.parse().map_err(|e| format!("x: {e}"))?;
            let y: f64 = field(cy)?.parse().map_err(|e| format!("y: {e}"))?;
            let t: u64 = field(ct)?.parse().map_err(|e| format!("t: {e}"))?;
            if !x.is_finite() || !y.is_finite() {
                return Err("non-finite coordinate".into());
            }
            if opts.coords == CoordMode::Geographic && (x.abs() > 90.0 || y.abs() > 180.0) {
                return Err("latitude/longitude out of range".into());
            }
            Ok((UserId(u), x, y, t))
        })();
        match parsed {
            Ok(r) => rows.push(r),
            Err(reason) => skipped.push((line, reason)),
        }
    }
    if rows.is_empty() {
        return Err(Error::Ingest(format!("no valid rows ({} skipped)", skipped.len())));
    }

    let projection_center = match opts.coords {
        CoordMode::Planar => None,
        CoordMode::Geographic => Some(opts.projection_center.unwrap_or_else(|| {
            let n = rows.len() as f64;
            let lat = rows.iter().map(|r| r.1).sum::<f64>() / n;
            let lon = rows.iter().map(|r| r.2).sum::<f64>() / n;
            (lat, lon)
        })),
    };
    let time_offset = match opts.epoch {
        EpochPolicy::Raw => 0,
        EpochPolicy::Rebase => opts
            .time_offset
            .unwrap_or_else(|| rows.iter().map(|r| r.3).min().expect("non-empty")),
    };

    let mut per_user: BTreeMap<UserId, Vec<TrajPoint>> = BTreeMap::new();
    for (u, x, y, t) in rows.iter().copied() {
        let (px, py) = match projection_center {
            None => (x, y),
            Some(c) => project(c, x, y),
        };
        let t = t.checked_sub(time_offset).ok_or_else(|| {
            Error::Ingest(format!(
                "timestamp {t} precedes the dataset time offset {time_offset}; epoch conventions differ"
            ))
        })?;
        per_user.entry(u).or_default().push(TrajPoint::new(px, py, t));
    }
    let trajectories = per_user
        .into_iter()
        .map(|(u, pts)| Trajectory::from_unsorted(u, pts))
        .collect::<Result<Vec<_>>>()?;

    let report = IngestReport {
        rows: rows.len(),
        skipped,
        conventions: IngestConventions {
            coords: opts.coords,
            epoch: opts.epoch,
            time_offset,
            projection_center,
            window_days: opts.window_days,
        },
    };
    Ok((Dataset::new(trajectories, opts.window_days)?, report))
}

/// Equirectangular projection about `center = (lat, lon)`; meters east and
/// north of the center.
pub fn project(center: (f64, f64), lat: f64, lon: f64) -> (f64, f64) {
    let (lat0, lon0) = (center.0.to_radians(), center.1.to_radians());
    let x = EARTH_RADIUS_M * (lon.to_radians() - lon0) * lat0.cos();
    let y = EARTH_RADIUS_M * (lat.to_radians() - lat0);
    (x, y)
}

/// Writes `user_id,x,y,t` rows. Floats use the shortest round-tripping
/// representation, so re-ingesting yields identical trajectories.
pub fn write_csv<W: Write>(d: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Ingest(e.to_string());
    w.write_record(["user_id", "x", "y", "t"]).map_err(err)?;
    for t in d {
        for p in t.points() {
            w.write_record([t.user.0.to_string(), p.x.to_string(), p.y.to_string(), p.t.to_string()])
                .map_err(err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A meeting injected into generated data: `user_a` is sampled at `place`
/// (or at its walk position nearest `time` when unset) and `user_b` within
/// half the default ψ and τ of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedContact {
    pub user_a: UserId,
    pub user_b: UserId,
    pub place: Option<(f64, f64)>,
    pub time: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_users: usize,
    /// Inclusive range of samples per user, before planted samples.
    pub points_per_user: (usize, usize),
    /// Side of the square region, meters.
    pub extent: f64,
    /// Median step between consecutive samples, meters (log-normal).
    pub step_median: f64,
    pub step_sigma: f64,
    /// Probability that a step returns to the user's home position.
    pub home_return: f64,
    pub duration: u64,
    pub planted: Vec<PlantedContact>,
    /// Spatial and temporal bounds on planted offsets (ψ/2 and τ/2 of the
    /// default thresholds).
    pub plant_radius: f64,
    pub plant_dt: u64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_users: 1000,
            points_per_user: (20, 200),
            extent: 20_000.0,
            step_median: 400.0,
            step_sigma: 1.0,
            home_return: 0.15,
            duration: 14 * 86_400,
            planted: Vec::new(),
            plant_radius: 1.0,
            plant_dt: 900,
            seed: 1,
        }
    }
}

impl GenSpec {
    /// Adds `chains` random contact chains of `len` hops, each hop strictly
    /// later than the previous one, between distinct users.
    pub fn with_random_chains(mut self, chains: usize, len: usize) -> Self {
        if self.n_users < 2 {
            return self;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        for _ in 0..chains {
            let mut a = rng.random_range(0..self.n_users as u64);
            let span = self.duration / (len as u64 + 1);
            let mut t = rng.random_range(0..span.max(1));
            for _ in 0..len {
                let mut b = rng.random_range(0..self.n_users as u64);
                while b == a {
                    b = rng.random_range(0..self.n_users as u64);
                }
                self.planted.push(PlantedContact {
                    user_a: UserId(a),
                    user_b: UserId(b),
                    place: None,
                    time: t,
                });
                t += self.plant_dt * 2 + rng.random_range(1..span.max(2));
                a = b;
            }
        }
        self
    }
}

/// Ground truth for one planted meeting after injection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantRecord {
    pub user_a: UserId,
    pub user_b: UserId,
    pub a: TrajPoint,
    pub b: TrajPoint,
}

/// Seeded random-walk dataset with planted contacts. User ids are `0..n`.
pub fn generate(spec: &GenSpec) -> Result<(Dataset, Vec<PlantRecord>)> {
    let (lo, hi) = spec.points_per_user;
    if lo == 0 || hi < lo || spec.extent.is_nan() || spec.extent <= 0.0 || spec.duration == 0 {
        return Err(Error::InvalidParam(
            "generator needs 1 <= min points <= max points, extent > 0, duration > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let steps = LogNormal::new(spec.step_median.max(1e-9).ln(), spec.step_sigma.max(0.0))
        .map_err(|e| Error::InvalidParam(e.to_string()))?;
    let reflect = |v: f64| {
        let m = v.rem_euclid(2.0 * spec.extent);
        if m > spec.extent {
            2.0 * spec.extent - m
        } else {
            m
        }
    };

    let mut walks: Vec<Vec<TrajPoint>> = Vec::with_capacity(spec.n_users);
    for _ in 0..spec.n_users {
        let n = rng.random_range(lo..=hi);
        let mut times: Vec<u64> = (0..n).map(|_| rng.random_range(0..spec.duration)).collect();
        times.sort_unstable();
        let home = (rng.random_range(0.0..spec.extent), rng.random_range(0.0..spec.extent));
        let (mut x, mut y) = home;
        let mut pts = Vec::with_capacity(n);
        for t in times {
            if rng.random_bool(spec.home_return.clamp(0.0, 1.0)) {
                (x, y) = home;
            } else {
                let len = steps.sample(&mut rng);
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                x = reflect(x + len * dir.cos());
                y = reflect(y + len * dir.sin());
            }
            pts.push(TrajPoint::new(x, y, t));
        }
        walks.push(pts);
    }

    let mut plants = Vec::with_capacity(spec.planted.len());
    for pc in &spec.planted {
        let (a, b) = (pc.user_a.0 as usize, pc.user_b.0 as usize);
        if a >= walks.len() || b >= walks.len() || a == b {
            return Err(Error::InvalidParam(format!(
                "planted contact {} -> {} names unknown users",
                pc.user_a, pc.user_b
            )));
        }
        let place = pc.place.unwrap_or_else(|| {
            let w = &walks[a];
            let i = w.partition_point(|p| p.t < pc.time).min(w.len() - 1);
            (w[i].x, w[i].y)
        });
        let r = rng.random_range(0.0..=spec.plant_radius);
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        let pa = TrajPoint::new(place.0, place.1, pc.time);
        let pb = TrajPoint::new(
            place.0 + r * dir.cos(),
            place.1 + r * dir.sin(),
            pc.time + rng.random_range(0..=spec.plant_dt),
        );
        // keep the offset inside the bound after rounding
        let pb = if crate::model::spatial_dist(&pa, &pb) > spec.plant_radius {
            TrajPoint { x: pa.x, y: pa.y, ..pb }
        } else {
            pb
        };
        for (u, p) in [(a, pa), (b, pb)] {
            let w = &mut walks[u];
            let at = w.partition_point(|q| q.t <= p.t);
            w.insert(at, p);
        }
        plants.push(PlantRecord {
            user_a: pc.user_a,
            user_b: pc.user_b,
            a: pa,
            b: pb,
        });
    }

    let trajectories = walks
        .into_iter()
        .enumerate()
        .map(|(i, pts)| Trajectory::new(UserId(i as u64), pts))
        .collect::<Result<Vec<_>>>()?;
    let days = spec.duration.div_ceil(86_400) as u32;
    Ok((Dataset::new(trajectories, days)?, plants))
}

/// Ids of dataset users whose sample count lies in `[lo, hi]`.
pub fn users_with_length(d: &Dataset, lo: usize, hi: usize) -> Vec<UserId> {
    d.trajectories()
        .iter()
        .filter(|t| (lo..=hi).contains(&t.len()))
        .map(|t| t.user)
        .collect()
}
