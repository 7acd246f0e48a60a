//! Trajectory indexes for multi-level contact tracing queries (CTQ).
//!
//! Given a set of user trajectories and an infected user's trajectory `q`,
//! a CTQ returns every user who met `q` (within ψ meters and τ seconds) and,
//! up to `L` levels deep, every user who later met one of those.
//!
//! * [`model`]: domain types, the meeting predicate and an exhaustive oracle.
//! * [`spacetime`]: quadtree, z-order ids, time buckets.
//! * [`qr_index`]: QR-tree and Q²R-tree builds.
//! * [`query`]: the divide-and-conquer matcher and the level-order driver.
//! * [`baseline3d`]: the 3D R-tree comparison index.
//! * [`storage`]: page store with read counting, and the index file format.
//! * [`workload`] / [`bench`]: CSV ingest, synthetic data, parameter sweeps.
//!
//! ```
//! use ctq::model::{Dataset, QueryParams, TrajPoint, Trajectory, UserId};
//! use ctq::qr_index::{QrIndex, QrParams};
//! use ctq::query::trace;
//!
//! let a = Trajectory::new(UserId(1), vec![TrajPoint::new(0.5, 0.0, 100)]).unwrap();
//! let d = Dataset::new(vec![a], 1).unwrap();
//! let idx = QrIndex::build(&d, QrParams::default()).unwrap();
//! let q = Trajectory::new(UserId(0), vec![TrajPoint::new(0.0, 0.0, 130)]).unwrap();
//! let r = trace(&idx, &q, &QueryParams::new(2.0, 60, 1).unwrap()).unwrap();
//! assert_eq!(r.records.len(), 1);
//! ```

pub mod baseline3d;
pub mod bench;
pub mod error;
pub mod model;
mod pack;
pub mod qr_index;
pub mod query;
pub mod spacetime;
pub mod storage;
pub mod validate;
pub mod workload;

pub use error::{Error, Result};
pub use pack::str_groups;
