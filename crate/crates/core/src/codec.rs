//! Little-endian binary helpers shared by model checkpoints and index files.
//!
//! Layout convention: 8-byte magic, `u32` format version, then the
//! container-specific header and payload. Counts are `u64`, reals are IEEE
//! `f64`, flags are a single byte.

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Check magic and version; returns a reader positioned after them.
    pub fn open(buf: &'a [u8], magic: &[u8; 8], version: u32) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let m = r.take(8, "magic")?;
        if m != magic {
            return Err(Error::format(
                "magic",
                format!(
                    "expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(m)
                ),
            ));
        }
        let v = r.u32("version")?;
        if v != version {
            return Err(Error::format(
                "version",
                format!("unsupported version {v}, expected {version}"),
            ));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                field,
                format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            )),
        }
    }

    pub fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    /// A `u64` count that must fit comfortably in memory.
    pub fn count(&mut self, field: &str) -> Result<usize> {
        let v = self.u64(field)?;
        if v > (1 << 40) {
            return Err(Error::format(field, format!("implausible count {v}")));
        }
        Ok(v as usize)
    }

    pub fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(field, "length overflow"))?;
        let b = self.take(bytes, field)?;
        let out: Vec<f64> = b
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(field, "non-finite value"));
        }
        Ok(out)
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                "trailer",
                format!("{} unexpected trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
