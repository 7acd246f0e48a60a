//! Browser demo: a synthetic city, its QR-tree, and multi-level traces
//! compared against the 3D R-tree baseline.
//!
//! Every exported method returns JSON so the page needs no bindings beyond
//! strings and numbers.

use std::collections::BTreeSet;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ctq::baseline3d::RTree3;
use ctq::model::{oracle_ctq, Dataset, ExposureRecord, QueryParams, UserId};
use ctq::qr_index::{QrIndex, QrParams};
use ctq::query::{trace, trace_with, QueryCtx};
use ctq::spacetime::Region;
use ctq::workload::{generate, GenSpec};

/// Side of the demo region, meters.
pub const EXTENT: f64 = 3_000.0;

#[derive(Serialize)]
struct Leaf {
    id: u32,
    depth: u8,
    samples: usize,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

#[derive(Serialize)]
struct Track {
    user: u64,
    /// `[x, y, t]` samples.
    points: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct Reads {
    unique_pages: u64,
    nodes_visited: u64,
    pages_total: usize,
}

#[derive(Serialize)]
struct Trace {
    records: Vec<ExposureRecord>,
    qr: Reads,
    baseline: Reads,
    /// QR-tree leaves the query visited.
    touched_leaves: Vec<u32>,
    /// Every user stored on a page the QR-tree read.
    fetched_users: Vec<u64>,
    matches_oracle: bool,
}

#[derive(Serialize)]
struct Failure {
    error: String,
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn failure(e: impl ToString) -> String {
    to_json(&Failure { error: e.to_string() })
}

#[wasm_bindgen]
pub struct Demo {
    data: Dataset,
    qr: QrIndex,
    baseline: RTree3,
    chain_starts: Vec<u64>,
}

#[wasm_bindgen]
impl Demo {
    /// Generates `users` trajectories with a few planted contact chains and
    /// indexes them with leaf capacity `theta`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, users: u32, theta: u32) -> Result<Demo, String> {
        let spec = GenSpec {
            n_users: users.max(1) as usize,
            points_per_user: (5, 60),
            extent: EXTENT,
            step_median: 120.0,
            seed: seed as u64,
            ..GenSpec::default()
        }
        .with_random_chains(3, 3);
        let (data, plants) = generate(&spec).map_err(|e| e.to_string())?;
        let params = QrParams {
            theta: theta.max(1) as usize,
            ..QrParams::default()
        };
        let qr = QrIndex::build(&data, params).map_err(|e| e.to_string())?;
        let baseline = RTree3::build(&data, params.page_capacity).map_err(|e| e.to_string())?;
        let chain_starts = plants
            .iter()
            .map(|p| p.user_a.0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Demo {
            data,
            qr,
            baseline,
            chain_starts,
        })
    }

    /// Root region as `[min_x, min_y, max_x, max_y]`.
    pub fn region(&self) -> Vec<f64> {
        let r: Region = self.qr.tree().node(0).region;
        vec![r.min_x, r.min_y, r.max_x, r.max_y]
    }

    /// Users that start a planted chain; good first queries.
    pub fn chain_starts(&self) -> Vec<f64> {
        self.chain_starts.iter().map(|&u| u as f64).collect()
    }

    pub fn leaves_json(&self) -> String {
        let t = self.qr.tree();
        let leaves: Vec<Leaf> = t
            .leaves()
            .map(|id| {
                let n = t.node(id);
                Leaf {
                    id,
                    depth: n.id.depth,
                    samples: n.leaf_points().len(),
                    x0: n.region.min_x,
                    y0: n.region.min_y,
                    x1: n.region.max_x,
                    y1: n.region.max_y,
                }
            })
            .collect();
        to_json(&leaves)
    }

    pub fn trajectories_json(&self) -> String {
        let tracks: Vec<Track> = self
            .data
            .trajectories()
            .iter()
            .map(|t| Track {
                user: t.user.0,
                points: t.points().iter().map(|p| [p.x, p.y, p.t as f64]).collect(),
            })
            .collect();
        to_json(&tracks)
    }

    /// User whose nearest sample is closest to `(x, y)`.
    pub fn nearest_user(&self, x: f64, y: f64) -> Option<f64> {
        self.data
            .trajectories()
            .iter()
            .flat_map(|t| t.points().iter().map(move |p| ((p.x - x).hypot(p.y - y), t.user.0)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, u)| u as f64)
    }

    /// Traces `user` for `levels` levels with thresholds `psi` meters and
    /// `tau` seconds on both indexes.
    pub fn trace_json(&self, user: f64, psi: f64, tau: f64, levels: u32) -> String {
        match self.run(user, psi, tau, levels) {
            Ok(t) => to_json(&t),
            Err(e) => failure(e),
        }
    }
}

impl Demo {
    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn qr(&self) -> &QrIndex {
        &self.qr
    }

    fn run(&self, user: f64, psi: f64, tau: f64, levels: u32) -> Result<Trace, String> {
        if !(user >= 0.0 && user.fract() == 0.0) {
            return Err(format!("bad user id {user}"));
        }
        if !(tau >= 0.0 && tau.fract() == 0.0) {
            return Err(format!("bad tau {tau}"));
        }
        let q = self
            .data
            .get(UserId(user as u64))
            .ok_or_else(|| format!("no user {user}"))?;
        let p = QueryParams::new(psi, tau as u64, levels).map_err(|e| e.to_string())?;
        let qr = trace_with(&self.qr, q, &p, QueryCtx::recording_visits()).map_err(|e| e.to_string())?;
        let bl = trace(&self.baseline, q, &p).map_err(|e| e.to_string())?;
        let tree = self.qr.tree();
        let touched: BTreeSet<u32> = qr
            .visited
            .iter()
            .map(|&(_, n)| n)
            .filter(|&n| tree.node(n).is_leaf())
            .collect();
        let mut fetched_users = Vec::new();
        for &(_, page) in &qr.fetched {
            let members = self.qr.store().peek_page(page).map_err(|e| e.to_string())?;
            fetched_users.extend(members.iter().map(|t| t.user.0));
        }
        fetched_users.sort_unstable();
        let matches_oracle = qr.records == oracle_ctq(&self.data, q, &p) && bl.records == qr.records;
        Ok(Trace {
            records: qr.records,
            qr: Reads {
                unique_pages: qr.stats.unique_page_reads,
                nodes_visited: qr.stats.nodes_visited,
                pages_total: self.qr.store().len(),
            },
            baseline: Reads {
                unique_pages: bl.stats.unique_page_reads,
                nodes_visited: bl.stats.nodes_visited,
                pages_total: self.baseline.store().len(),
            },
            touched_leaves: touched.into_iter().collect(),
            fetched_users,
            matches_oracle,
        })
    }
}
