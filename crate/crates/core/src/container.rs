//! Versioned little-endian binary container shared by instances, learned
//! parameters and Transformer weights.
//!
//! Layout: `b"ICSR"`, `u16` version, `u8` kind tag, `u8` reserved (0), then a
//! kind-specific payload of `u64` counts and `f64` values. Matrices are
//! row-major.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ICSR";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Instance = 1,
    Lista = 2,
    ListaCp = 3,
    ListaVm = 4,
    Transformer = 5,
}

impl Kind {
    fn from_tag(tag: u8) -> Option<Kind> {
        match tag {
            1 => Some(Kind::Instance),
            2 => Some(Kind::Lista),
            3 => Some(Kind::ListaCp),
            4 => Some(Kind::ListaVm),
            5 => Some(Kind::Transformer),
            _ => None,
        }
    }
}

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(kind: Kind) -> Self {
        let mut buf = Vec::with_capacity(256);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(kind as u8);
        buf.push(0);
        Writer { buf }
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn vector(&mut self, v: ArrayView1<f64>) -> &mut Self {
        for &x in v.iter() {
            self.f64(x);
        }
        self
    }

    pub fn matrix(&mut self, m: ArrayView2<f64>) -> &mut Self {
        for row in m.rows() {
            self.vector(row);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Validate the header and position the reader at the payload.
    pub fn open(buf: &'a [u8], expected: Kind) -> Result<Self> {
        if buf.len() < HEADER_LEN {
            return Err(parse(buf.len(), "truncated header"));
        }
        if &buf[..4] != MAGIC {
            return Err(parse(0, "bad magic"));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != VERSION {
            return Err(parse(4, format!("unsupported version {version}")));
        }
        match Kind::from_tag(buf[6]) {
            Some(k) if k == expected => {}
            Some(k) => return Err(parse(6, format!("expected {expected:?} payload, found {k:?}"))),
            None => return Err(parse(6, format!("unknown kind tag {}", buf[6]))),
        }
        Ok(Reader {
            buf,
            pos: HEADER_LEN,
        })
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(parse(
                self.buf.len(),
                format!("truncated payload: need {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    /// Read a count and check it fits comfortably in memory.
    pub fn count(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        if v > (1 << 32) {
            return Err(parse(at, format!("{what} = {v} is implausibly large")));
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn vector(&mut self, len: usize) -> Result<Array1<f64>> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.f64()?);
        }
        Ok(Array1::from_vec(out))
    }

    pub fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let v = self.vector(rows * cols)?;
        Ok(v.into_shape_with_order((rows, cols)).expect("exact length"))
    }

    /// Require that exactly `values` f64s remain before decoding a body.
    pub fn expect_f64s(&self, values: usize, context: &str) -> Result<()> {
        let want = values
            .checked_mul(8)
            .ok_or_else(|| parse(self.pos, "size overflow"))?;
        if self.remaining() != want {
            return Err(parse(
                self.pos,
                format!(
                    "{context}: body has {} bytes, header implies {want}",
                    self.remaining()
                ),
            ));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(parse(self.pos, format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_checks() {
        let bytes = Writer::new(Kind::ListaVm).finish();
        assert!(Reader::open(&bytes, Kind::ListaVm).is_ok());
        let err = Reader::open(&bytes, Kind::Instance).err().unwrap();
        assert!(matches!(err, Error::Parse { offset: 6, .. }));
        assert!(Reader::open(&bytes[..5], Kind::ListaVm).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Reader::open(&bad, Kind::ListaVm),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_value_reports_offset() {
        let mut w = Writer::new(Kind::Instance);
        w.u64(3);
        let mut bytes = w.finish();
        bytes.pop();
        let mut r = Reader::open(&bytes, Kind::Instance).unwrap();
        assert!(matches!(r.u64(), Err(Error::Parse { .. })));
    }
}
