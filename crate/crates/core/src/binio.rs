//! Little-endian readers/writers shared by the binary artifact formats.
//!
//! Every format starts with an 8-byte ASCII magic followed by a `u16`
//! version. Readers track the byte offset so that truncation and header
//! corruption can be reported precisely.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u16 = 1;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8]) -> Self {
        let mut w = Writer {
            buf: Vec::with_capacity(1024),
        };
        w.buf.extend_from_slice(magic);
        w.u16(FORMAT_VERSION);
        w
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn scalars<T: Scalar>(&mut self, v: &[T]) {
        self.buf.reserve(v.len() * 4);
        for &x in v {
            self.f32(x.as_f32());
        }
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn len_u32(&mut self, len: usize) -> Result<()> {
        let v = u32::try_from(len)
            .map_err(|_| Error::Data(format!("length {len} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    name: String,
}

impl<'a> Reader<'a> {
    /// Checks the magic and version and positions the reader after them.
    pub fn open(buf: &'a [u8], magic: &[u8; 8], name: impl Into<String>) -> Result<Self> {
        let mut r = Reader {
            buf,
            pos: 0,
            name: name.into(),
        };
        let got = r.take(8)?;
        if got != magic {
            return Err(r.error_at(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let at = r.pos;
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(r.error_at(at, format!("unsupported version {version}")));
        }
        Ok(r)
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn error_at(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            source_name: self.name.clone(),
            offset,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error_at(
                self.pos,
                format!(
                    "truncated payload: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            )),
        }
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    /// Reads `n` little-endian `f32`s, rejecting non-finite values.
    pub fn scalars<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let start = self.pos;
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| self.error_at(start, "element count overflows"))?,
        )?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(self.error_at(start + 4 * i, format!("non-finite value {v}")));
            }
            out.push(T::of(v as f64));
        }
        Ok(out)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.error_at(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
