//! Little-endian primitive encoding shared by pages and index files.

use crate::error::{Error, Result};
use crate::model::{TrajPoint, Trajectory, UserId};

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }

    pub fn raw(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn trajectory(&mut self, t: &Trajectory) {
        self.u64(t.user.0);
        self.u32(t.len() as u32);
        for p in t.points() {
            self.f64(p.x);
            self.f64(p.y);
            self.u64(p.t);
        }
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| Error::Format("length overflow".into()))?;
        self.take(n)
    }

    /// Element count that must fit in the remaining input at `min_size`
    /// bytes per element.
    pub fn count(&mut self, min_size: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(min_size.max(1)) > self.remaining() {
            return Err(Error::Format(format!("implausible element count {n}")));
        }
        Ok(n)
    }

    pub fn trajectory(&mut self) -> Result<Trajectory> {
        let user = UserId(self.u64()?);
        let n = self.u32()? as usize;
        if n.saturating_mul(24) > self.remaining() {
            return Err(Error::Format(format!("trajectory {user} claims {n} points")));
        }
        let mut pts = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.f64()?;
            let y = self.f64()?;
            let t = self.u64()?;
            pts.push(TrajPoint { x, y, t });
        }
        Trajectory::new(user, pts)
    }
}
