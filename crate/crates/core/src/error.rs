use thiserror::Error;

use crate::storage::PageId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid trajectory for user {user}: {reason}")]
    InvalidTrajectory { user: u64, reason: String },

    #[error("duplicate user id {0} in dataset")]
    DuplicateUser(u64),

    #[error("cell ({cx}, {cy}) out of range for depth {depth}")]
    CellOutOfRange { cx: u64, cy: u64, depth: u8 },

    #[error("point ({x}, {y}) lies outside the indexed region")]
    OutsideRegion { x: f64, y: f64 },

    #[error("timestamp {t} precedes bucketing epoch {epoch}")]
    BeforeEpoch { t: u64, epoch: u64 },

    #[error("page store is sealed")]
    StoreSealed,

    #[error("unknown page {0}")]
    UnknownPage(PageId),

    #[error("corrupt page {page}: {reason}")]
    CorruptPage { page: PageId, reason: String },

    #[error("index file: {0}")]
    Format(String),

    #[error("ingest: {0}")]
    Ingest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
