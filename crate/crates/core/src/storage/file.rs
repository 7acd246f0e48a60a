//! Index file format. See `docs/index-format.md` for the byte layout.
//!
//! A file is `MAGIC`, a `u32` version, a kind byte, then a run of sections
//! `(tag: [u8; 4], len: u64, payload, crc32(payload): u32)` closed by an
//! `END\0` section. All integers little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::{ByteReader, ByteWriter};
use super::{PageId, PageStore};
use crate::baseline3d::{Box3, RKind, RNode, RTree3};
use crate::error::{Error, Result};
use crate::qr_index::{PageAssignment, Q2rIndex, Q2rNode, QrIndex, QrParams, RegistryEntry};
use crate::spacetime::{NodeKind, QuadNode, QuadTree, Region, SpatialId, TemporalBucketing};

pub const MAGIC: &[u8; 8] = b"CTQINDEX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Qr,
    Q2r,
    Baseline,
}

impl IndexKind {
    fn code(self) -> u8 {
        match self {
            IndexKind::Qr => 1,
            IndexKind::Q2r => 2,
            IndexKind::Baseline => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(IndexKind::Qr),
            2 => Ok(IndexKind::Q2r),
            3 => Ok(IndexKind::Baseline),
            _ => Err(Error::Format(format!("unknown index kind {c}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyIndex {
    Qr(QrIndex),
    Q2r(Q2rIndex),
    Baseline(RTree3),
}

impl AnyIndex {
    pub fn kind(&self) -> IndexKind {
        match self {
            AnyIndex::Qr(_) => IndexKind::Qr,
            AnyIndex::Q2r(_) => IndexKind::Q2r,
            AnyIndex::Baseline(_) => IndexKind::Baseline,
        }
    }

    pub fn stores(&self) -> Vec<&PageStore> {
        match self {
            AnyIndex::Qr(q) => vec![q.store()],
            AnyIndex::Q2r(q) => q.owners().map(|(_, x)| x.store()).collect(),
            AnyIndex::Baseline(b) => vec![b.store()],
        }
    }
}

fn section(w: &mut ByteWriter, tag: &[u8; 4], payload: &[u8]) {
    w.raw(tag);
    w.u64(payload.len() as u64);
    w.raw(payload);
    w.u32(crc32fast::hash(payload));
}

fn read_section<'a>(r: &mut ByteReader<'a>, want: &[u8; 4]) -> Result<&'a [u8]> {
    let tag = r.take(4)?;
    if tag != want {
        return Err(Error::Format(format!(
            "expected section {:?}, found {:?}",
            String::from_utf8_lossy(want),
            String::from_utf8_lossy(tag)
        )));
    }
    let payload = r.bytes()?;
    let crc = r.u32()?;
    if crc32fast::hash(payload) != crc {
        return Err(Error::Format(format!(
            "checksum mismatch in section {}",
            String::from_utf8_lossy(want)
        )));
    }
    Ok(payload)
}

fn finish(r: ByteReader<'_>, what: &str) -> Result<()> {
    if r.is_empty() {
        Ok(())
    } else {
        Err(Error::Format(format!("{} trailing bytes in {what}", r.remaining())))
    }
}

fn put_region(w: &mut ByteWriter, r: &Region) {
    w.f64(r.min_x);
    w.f64(r.min_y);
    w.f64(r.max_x);
    w.f64(r.max_y);
}

fn get_region(r: &mut ByteReader<'_>) -> Result<Region> {
    let (a, b, c, d) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    Region::new(a, b, c, d).map_err(|e| Error::Format(e.to_string()))
}

fn put_params(w: &mut ByteWriter, p: &QrParams) {
    w.u64(p.theta as u64);
    w.u64(p.page_capacity as u64);
    w.u64(p.bucket_width);
    w.u8(p.max_depth);
}

fn get_params(r: &mut ByteReader<'_>) -> Result<QrParams> {
    let p = QrParams {
        theta: r.u64()? as usize,
        page_capacity: r.u64()? as usize,
        bucket_width: r.u64()?,
        max_depth: r.u8()?,
    };
    p.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(p)
}

fn put_pages(w: &mut ByteWriter, s: &PageStore) {
    w.u32(s.tag());
    w.u64(s.len() as u64);
    for id in s.page_ids() {
        w.bytes(s.raw_page(id).expect("own page"));
    }
}

fn get_pages(r: &mut ByteReader<'_>) -> Result<PageStore> {
    let tag = r.u32()?;
    let n = r.count(8)?;
    let mut pages = Vec::with_capacity(n);
    for _ in 0..n {
        pages.push(r.bytes()?.to_vec());
    }
    let store = PageStore::from_raw(tag, pages);
    // decode once so a damaged page fails the load rather than a query
    for id in store.page_ids() {
        store.peek_page(id)?;
    }
    Ok(store)
}

fn encode_qr(idx: &QrIndex) -> Vec<u8> {
    let mut w = ByteWriter::new();

    let mut p = ByteWriter::new();
    put_params(&mut p, &idx.params);
    p.u64(idx.bucketing.epoch);
    p.u64(idx.bucketing.width);
    section(&mut w, b"PARM", &p.into_inner());

    let mut t = ByteWriter::new();
    t.u64(idx.tree.nodes().len() as u64);
    for n in idx.tree.nodes() {
        put_region(&mut t, &n.region);
        t.u64(n.id.code);
        t.u8(n.id.depth);
        match &n.kind {
            NodeKind::Leaf { points } => {
                t.u8(0);
                t.u64(points.len() as u64);
                for &pt in points {
                    t.u32(pt);
                }
            }
            NodeKind::Internal { children } => {
                t.u8(1);
                for &c in children {
                    t.u32(c);
                }
            }
        }
    }
    section(&mut w, b"QTRE", &t.into_inner());

    let mut g = ByteWriter::new();
    for entries in &idx.registry {
        g.u64(entries.len() as u64);
        for e in entries {
            g.u64(e.page_id.0);
            g.u64(e.bucket_min);
            g.u64(e.bucket_max);
        }
    }
    section(&mut w, b"REGI", &g.into_inner());

    let mut s = ByteWriter::new();
    put_pages(&mut s, &idx.store);
    section(&mut w, b"PAGE", &s.into_inner());
    w.into_inner()
}

fn decode_qr(buf: &[u8]) -> Result<QrIndex> {
    let mut r = ByteReader::new(buf);

    let mut p = ByteReader::new(read_section(&mut r, b"PARM")?);
    let params = get_params(&mut p)?;
    let bucketing = TemporalBucketing::new(p.u64()?, p.u64()?).map_err(|e| Error::Format(e.to_string()))?;
    finish(p, "PARM")?;

    let mut t = ByteReader::new(read_section(&mut r, b"QTRE")?);
    let n = t.count(42)?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let region = get_region(&mut t)?;
        let id = SpatialId {
            code: t.u64()?,
            depth: t.u8()?,
        };
        let kind = match t.u8()? {
            0 => {
                let k = t.count(4)?;
                let mut points = Vec::with_capacity(k);
                for _ in 0..k {
                    points.push(t.u32()?);
                }
                NodeKind::Leaf { points }
            }
            1 => {
                let mut children = [0u32; 4];
                for c in &mut children {
                    *c = t.u32()?;
                    if *c as usize >= n {
                        return Err(Error::Format(format!("child index {c} out of range")));
                    }
                }
                NodeKind::Internal { children }
            }
            k => return Err(Error::Format(format!("bad node kind {k}"))),
        };
        nodes.push(QuadNode { region, id, kind });
    }
    finish(t, "QTRE")?;
    if nodes.is_empty() {
        return Err(Error::Format("quadtree has no root".into()));
    }
    let tree = QuadTree::from_nodes(nodes, params.theta, params.max_depth);

    let mut g = ByteReader::new(read_section(&mut r, b"REGI")?);
    let mut registry = Vec::with_capacity(tree.nodes().len());
    for _ in 0..tree.nodes().len() {
        let k = g.count(24)?;
        let mut entries = Vec::with_capacity(k);
        for _ in 0..k {
            entries.push(RegistryEntry {
                page_id: PageId(g.u64()?),
                bucket_min: g.u64()?,
                bucket_max: g.u64()?,
            });
        }
        registry.push(entries);
    }
    finish(g, "REGI")?;

    let mut s = ByteReader::new(read_section(&mut r, b"PAGE")?);
    let store = get_pages(&mut s)?;
    finish(s, "PAGE")?;
    finish(r, "QR body")?;

    if registry.iter().flatten().any(|e| e.page_id.0 >= store.len() as u64) {
        return Err(Error::Format("registry references a missing page".into()));
    }
    let assignments = store
        .page_ids()
        .map(|id| {
            Ok(PageAssignment {
                page_id: id,
                members: store.peek_page(id)?.iter().map(|t| t.user).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(QrIndex {
        tree,
        registry,
        bucketing,
        params,
        store,
        assignments,
    })
}

fn encode_q2r(idx: &Q2rIndex) -> Vec<u8> {
    let mut w = ByteWriter::new();
    let mut p = ByteWriter::new();
    p.u64(idx.theta_traj as u64);
    put_params(&mut p, &idx.params);
    section(&mut w, b"PARM", &p.into_inner());

    let mut t = ByteWriter::new();
    t.u64(idx.nodes.len() as u64);
    for n in &idx.nodes {
        put_region(&mut t, &n.region);
        t.u64(n.id.code);
        t.u8(n.id.depth);
        match n.children {
            Some(ch) => {
                t.u8(1);
                for c in ch {
                    t.u32(c);
                }
            }
            None => t.u8(0),
        }
        t.u8(n.owned.is_some() as u8);
    }
    section(&mut w, b"QTOP", &t.into_inner());

    for n in &idx.nodes {
        if let Some(qr) = &n.owned {
            section(&mut w, b"QRSB", &encode_qr(qr));
        }
    }
    w.into_inner()
}

fn decode_q2r(buf: &[u8]) -> Result<Q2rIndex> {
    let mut r = ByteReader::new(buf);
    let mut p = ByteReader::new(read_section(&mut r, b"PARM")?);
    let theta_traj = p.u64()? as usize;
    let params = get_params(&mut p)?;
    finish(p, "PARM")?;

    let mut t = ByteReader::new(read_section(&mut r, b"QTOP")?);
    let n = t.count(43)?;
    let mut nodes = Vec::with_capacity(n);
    let mut has_owned = Vec::with_capacity(n);
    for _ in 0..n {
        let region = get_region(&mut t)?;
        let id = SpatialId {
            code: t.u64()?,
            depth: t.u8()?,
        };
        let children = match t.u8()? {
            0 => None,
            1 => {
                let mut ch = [0u32; 4];
                for c in &mut ch {
                    *c = t.u32()?;
                    if *c as usize >= n {
                        return Err(Error::Format(format!("child index {c} out of range")));
                    }
                }
                Some(ch)
            }
            k => return Err(Error::Format(format!("bad child flag {k}"))),
        };
        has_owned.push(t.u8()? != 0);
        nodes.push(Q2rNode {
            region,
            id,
            children,
            owned: None,
        });
    }
    finish(t, "QTOP")?;
    if nodes.is_empty() {
        return Err(Error::Format("top quadtree has no root".into()));
    }
    for (node, owned) in nodes.iter_mut().zip(has_owned) {
        if owned {
            node.owned = Some(decode_qr(read_section(&mut r, b"QRSB")?)?);
        }
    }
    finish(r, "Q2R body")?;
    Ok(Q2rIndex {
        nodes,
        theta_traj,
        params,
    })
}

fn encode_rtree(t: &RTree3) -> Vec<u8> {
    let mut w = ByteWriter::new();
    let mut p = ByteWriter::new();
    p.u64(t.page_capacity as u64);
    p.u64(t.fanout as u64);
    p.u64(t.root.map_or(u64::MAX, u64::from));
    section(&mut w, b"PARM", &p.into_inner());

    let mut n = ByteWriter::new();
    n.u64(t.nodes.len() as u64);
    for node in &t.nodes {
        let b = &node.bbox;
        n.f64(b.min_x);
        n.f64(b.min_y);
        n.u64(b.min_t);
        n.f64(b.max_x);
        n.f64(b.max_y);
        n.u64(b.max_t);
        match &node.kind {
            RKind::Leaf { page } => {
                n.u8(0);
                n.u64(page.0);
            }
            RKind::Internal { children } => {
                n.u8(1);
                n.u64(children.len() as u64);
                for &c in children {
                    n.u32(c);
                }
            }
        }
    }
    section(&mut w, b"RTRE", &n.into_inner());

    let mut s = ByteWriter::new();
    put_pages(&mut s, &t.store);
    section(&mut w, b"PAGE", &s.into_inner());
    w.into_inner()
}

fn decode_rtree(buf: &[u8]) -> Result<RTree3> {
    let mut r = ByteReader::new(buf);
    let mut p = ByteReader::new(read_section(&mut r, b"PARM")?);
    let page_capacity = p.u64()? as usize;
    let fanout = p.u64()? as usize;
    let root = match p.u64()? {
        u64::MAX => None,
        v => Some(u32::try_from(v).map_err(|_| Error::Format("root index overflow".into()))?),
    };
    finish(p, "PARM")?;

    let mut nr = ByteReader::new(read_section(&mut r, b"RTRE")?);
    let n = nr.count(57)?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let bbox = Box3 {
            min_x: nr.f64()?,
            min_y: nr.f64()?,
            min_t: nr.u64()?,
            max_x: nr.f64()?,
            max_y: nr.f64()?,
            max_t: nr.u64()?,
        };
        let kind = match nr.u8()? {
            0 => RKind::Leaf {
                page: PageId(nr.u64()?),
            },
            1 => {
                let k = nr.count(4)?;
                let mut children = Vec::with_capacity(k);
                for _ in 0..k {
                    let c = nr.u32()?;
                    if c as usize >= n {
                        return Err(Error::Format(format!("child index {c} out of range")));
                    }
                    children.push(c);
                }
                RKind::Internal { children }
            }
            k => return Err(Error::Format(format!("bad node kind {k}"))),
        };
        nodes.push(RNode { bbox, kind });
    }
    finish(nr, "RTRE")?;
    if root.is_some_and(|x| x as usize >= n) {
        return Err(Error::Format("root out of range".into()));
    }

    let mut s = ByteReader::new(read_section(&mut r, b"PAGE")?);
    let store = get_pages(&mut s)?;
    finish(s, "PAGE")?;
    finish(r, "baseline body")?;
    if nodes
        .iter()
        .any(|x| matches!(x.kind, RKind::Leaf { page } if page.0 >= store.len() as u64))
    {
        return Err(Error::Format("leaf references a missing page".into()));
    }
    Ok(RTree3 {
        nodes,
        root,
        store,
        page_capacity,
        fanout,
    })
}

/// Serializes an index with an opaque metadata blob (ingest conventions).
pub fn persist_index(index: &AnyIndex, meta: &[u8]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.raw(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(index.kind().code());
    section(&mut w, b"META", meta);
    let body = match index {
        AnyIndex::Qr(q) => encode_qr(q),
        AnyIndex::Q2r(q) => encode_q2r(q),
        AnyIndex::Baseline(b) => encode_rtree(b),
    };
    section(&mut w, b"BODY", &body);
    section(&mut w, b"END\0", &[]);
    w.into_inner()
}

pub fn load_index(buf: &[u8]) -> Result<(AnyIndex, Vec<u8>)> {
    let mut r = ByteReader::new(buf);
    if r.take(8).map_err(|_| Error::Format("file too short".into()))? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "version mismatch: file {version}, supported {FORMAT_VERSION}"
        )));
    }
    let kind = IndexKind::from_code(r.u8()?)?;
    let meta = read_section(&mut r, b"META")?.to_vec();
    let body = read_section(&mut r, b"BODY")?;
    read_section(&mut r, b"END\0")?;
    finish(r, "file")?;
    let index = match kind {
        IndexKind::Qr => AnyIndex::Qr(decode_qr(body)?),
        IndexKind::Q2r => AnyIndex::Q2r(decode_q2r(body)?),
        IndexKind::Baseline => AnyIndex::Baseline(decode_rtree(body)?),
    };
    Ok((index, meta))
}

pub fn write_index_file(path: &Path, index: &AnyIndex, meta: &[u8]) -> Result<u64> {
    let bytes = persist_index(index, meta);
    std::fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn read_index_file(path: &Path) -> Result<(AnyIndex, Vec<u8>)> {
    load_index(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dataset, TrajPoint, Trajectory, UserId};

    fn data() -> Dataset {
        let ts = (0..30u64)
            .map(|i| {
                Trajectory::new(
                    UserId(i),
                    (0..5)
                        .map(|k| TrajPoint::new((i * 3 + k) as f64 % 17.0, (i + k * 2) as f64 % 11.0, i * 50 + k * 700))
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        Dataset::new(ts, 2).unwrap()
    }

    fn all_kinds(d: &Dataset) -> Vec<AnyIndex> {
        let p = QrParams {
            theta: 4,
            ..Default::default()
        };
        vec![
            AnyIndex::Qr(QrIndex::build(d, p).unwrap()),
            AnyIndex::Q2r(Q2rIndex::build(d, 2, p).unwrap()),
            AnyIndex::Baseline(RTree3::build(d, 4).unwrap()),
        ]
    }

    #[test]
    fn round_trip_all_kinds() {
        let d = data();
        for idx in all_kinds(&d) {
            let bytes = persist_index(&idx, b"meta");
            let (back, meta) = load_index(&bytes).unwrap();
            assert_eq!(meta, b"meta");
            assert_eq!(back, idx);
            assert_eq!(persist_index(&back, b"meta"), bytes);
        }
    }

    #[test]
    fn empty_round_trip() {
        let d = Dataset::new(vec![], 0).unwrap();
        for idx in all_kinds(&d) {
            let bytes = persist_index(&idx, b"");
            assert_eq!(load_index(&bytes).unwrap().0, idx);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let d = data();
        let idx = &all_kinds(&d)[0];
        let bytes = persist_index(idx, b"m");
        // flip one byte at a time across the file; every flip must fail
        for pos in (0..bytes.len()).step_by(97) {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x5a;
            assert!(load_index(&bad).is_err(), "flip at {pos} went unnoticed");
        }
        assert!(load_index(&bytes[..bytes.len() - 1]).is_err());
        let mut v = bytes.clone();
        v[8] = 99;
        assert!(matches!(load_index(&v), Err(Error::Format(m)) if m.contains("version")));
    }
}
