//! Simulated block device.
//!
//! A page holds a serialized group of whole trajectories. Reads are counted
//! twice: every call bumps the raw counter, and a [`QueryScope`] remembers
//! which pages it has already seen so repeated reads inside one query are
//! only charged once on the unique counter.

mod codec;
mod file;

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Trajectory;

pub use codec::{ByteReader, ByteWriter};
pub use file::{
    load_index, persist_index, read_index_file, write_index_file, AnyIndex, IndexKind, FORMAT_VERSION, MAGIC,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PageId(pub u64);

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Read counters for one query scope.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounter {
    pub raw_reads: u64,
    pub unique_reads: u64,
}

/// Per-query read bookkeeping. Pages are keyed by `(store tag, page id)` so
/// one scope can span the several stores of a Q²R index.
#[derive(Debug, Default)]
pub struct QueryScope {
    seen: HashSet<(u32, PageId)>,
    raw_reads: u64,
}

impl QueryScope {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counter(&self) -> AccessCounter {
        AccessCounter {
            raw_reads: self.raw_reads,
            unique_reads: self.seen.len() as u64,
        }
    }

    pub fn has_seen(&self, tag: u32, id: PageId) -> bool {
        self.seen.contains(&(tag, id))
    }

    fn record(&mut self, tag: u32, id: PageId) {
        self.raw_reads += 1;
        self.seen.insert((tag, id));
    }
}

#[derive(Debug, Default)]
pub struct PageStore {
    tag: u32,
    pages: Vec<Vec<u8>>,
    sealed: bool,
    total_reads: AtomicU64,
}

impl PartialEq for PageStore {
    fn eq(&self, other: &Self) -> bool {
        self.tag == other.tag && self.pages == other.pages && self.sealed == other.sealed
    }
}

impl Clone for PageStore {
    fn clone(&self) -> Self {
        PageStore {
            tag: self.tag,
            pages: self.pages.clone(),
            sealed: self.sealed,
            total_reads: AtomicU64::new(self.total_reads.load(Ordering::Relaxed)),
        }
    }
}

impl PageStore {
    pub fn new(tag: u32) -> Self {
        PageStore {
            tag,
            ..Default::default()
        }
    }

    pub(crate) fn from_raw(tag: u32, pages: Vec<Vec<u8>>) -> Self {
        PageStore {
            tag,
            pages,
            sealed: true,
            total_reads: AtomicU64::new(0),
        }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn write_page(&mut self, trajectories: &[Trajectory]) -> Result<PageId> {
        if self.sealed {
            return Err(Error::StoreSealed);
        }
        let mut w = ByteWriter::new();
        w.u32(trajectories.len() as u32);
        for t in trajectories {
            w.trajectory(t);
        }
        self.pages.push(w.into_inner());
        Ok(PageId(self.pages.len() as u64 - 1))
    }

    /// Counted read.
    pub fn read_page(&self, id: PageId, scope: &mut QueryScope) -> Result<Vec<Trajectory>> {
        let out = self.peek_page(id)?;
        self.total_reads.fetch_add(1, Ordering::Relaxed);
        scope.record(self.tag, id);
        Ok(out)
    }

    /// Uncounted read, for builds, validation and export.
    pub fn peek_page(&self, id: PageId) -> Result<Vec<Trajectory>> {
        let bytes = self.raw_page(id)?;
        decode_page(id, bytes)
    }

    pub(crate) fn raw_page(&self, id: PageId) -> Result<&[u8]> {
        self.pages
            .get(id.0 as usize)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownPage(id))
    }

    pub fn page_ids(&self) -> impl Iterator<Item = PageId> {
        (0..self.pages.len() as u64).map(PageId)
    }

    /// Reads counted since construction, across all scopes.
    pub fn total_reads(&self) -> u64 {
        self.total_reads.load(Ordering::Relaxed)
    }

    pub fn byte_size(&self) -> usize {
        self.pages.iter().map(Vec::len).sum()
    }

    /// Every stored trajectory, in page order.
    pub fn all_trajectories(&self) -> Result<Vec<Trajectory>> {
        let mut out = Vec::new();
        for id in self.page_ids() {
            out.extend(self.peek_page(id)?);
        }
        Ok(out)
    }
}

fn decode_page(id: PageId, bytes: &[u8]) -> Result<Vec<Trajectory>> {
    let corrupt = |e: Error| Error::CorruptPage {
        page: id,
        reason: e.to_string(),
    };
    let mut r = ByteReader::new(bytes);
    let n = r.u32().map_err(corrupt)?;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        out.push(r.trajectory().map_err(corrupt)?);
    }
    if !r.is_empty() {
        return Err(Error::CorruptPage {
            page: id,
            reason: "trailing bytes".into(),
        });
    }
    Ok(out)
}

/// Renders `key=value` lines.
pub fn stats_lines<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TrajPoint, UserId};

    fn t(u: u64, n: usize) -> Trajectory {
        Trajectory::new(
            UserId(u),
            (0..n)
                .map(|i| TrajPoint::new(i as f64 * 1.5, -(i as f64), i as u64 * 10))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dense_ids_and_round_trip() {
        let mut s = PageStore::new(0);
        let group = vec![t(1, 3), t(2, 1)];
        assert_eq!(s.write_page(&group).unwrap(), PageId(0));
        for i in 1..10 {
            assert_eq!(s.write_page(&[t(i + 10, 2)]).unwrap(), PageId(i));
        }
        let mut scope = QueryScope::new();
        assert_eq!(s.read_page(PageId(0), &mut scope).unwrap(), group);
    }

    #[test]
    fn counting() {
        let mut s = PageStore::new(3);
        s.write_page(&[t(1, 2)]).unwrap();
        s.write_page(&[t(2, 2)]).unwrap();
        s.seal();
        let mut a = QueryScope::new();
        s.read_page(PageId(0), &mut a).unwrap();
        s.read_page(PageId(0), &mut a).unwrap();
        assert_eq!(
            a.counter(),
            AccessCounter {
                raw_reads: 2,
                unique_reads: 1
            }
        );
        let mut b = QueryScope::new();
        s.read_page(PageId(0), &mut b).unwrap();
        assert_eq!(b.counter().unique_reads, 1);
        assert_eq!(s.total_reads(), 3);
        assert!(matches!(
            s.read_page(PageId(7), &mut b),
            Err(Error::UnknownPage(PageId(7)))
        ));
        s.peek_page(PageId(1)).unwrap();
        assert_eq!(s.total_reads(), 3);
    }

    #[test]
    fn sealed_rejects_writes() {
        let mut s = PageStore::new(0);
        s.seal();
        assert!(matches!(s.write_page(&[t(1, 1)]), Err(Error::StoreSealed)));
    }

    #[test]
    fn truncated_page_is_an_error() {
        let mut s = PageStore::new(0);
        s.write_page(&[t(1, 4)]).unwrap();
        let bytes = s.raw_page(PageId(0)).unwrap();
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_page(PageId(0), short), Err(Error::CorruptPage { .. })));
    }
}
