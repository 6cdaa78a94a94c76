use crate::error::{Error, Result};

/// Little-endian byte sink.
#[derive(Debug, Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    pub fn u32(&mut self, x: u32) {
        self.bytes(&x.to_le_bytes());
    }

    pub fn u64(&mut self, x: u64) {
        self.bytes(&x.to_le_bytes());
    }

    pub fn f64(&mut self, x: f64) {
        self.bytes(&x.to_le_bytes());
    }

    pub fn len_u32(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::config("length does not fit in 32 bits"))?;
        self.u32(n);
        Ok(())
    }

    /// Length-prefixed vector.
    pub fn f64s(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        for x in xs {
            self.f64(*x);
        }
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.len_u32(s.len())?;
        self.bytes(s.as_bytes());
        Ok(())
    }

    /// Appends a tagged section: tag, payload length, payload, CRC32 of the
    /// payload.
    pub fn section(&mut self, tag: &[u8; 4], payload: &[u8]) {
        self.bytes(tag);
        self.u64(payload.len() as u64);
        self.bytes(payload);
        self.u32(crc32fast::hash(payload));
    }
}

/// Little-endian cursor; running past the end is an integrity error.
pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8], what: &'static str) -> Self {
        ByteReader { data, pos: 0, what }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Integrity(format!("{} truncated at byte {}", self.what, self.data.len())));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n > (self.remaining() / 8) as u64 {
            return Err(Error::Integrity(format!("{} vector length {n} exceeds the data", self.what)));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Integrity(format!("{} holds invalid UTF-8", self.what)))
    }

    /// Reads a section written by [`ByteWriter::section`] and checks its tag
    /// and CRC.
    pub fn section(&mut self, tag: &[u8; 4]) -> Result<&'a [u8]> {
        let found = self.take(4)?;
        if found != tag {
            return Err(Error::Integrity(format!(
                "{}: expected section {}, found {}",
                self.what,
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = self.u64()?;
        if len > self.remaining() as u64 {
            return Err(Error::Integrity(format!("{} truncated in section {}", self.what, String::from_utf8_lossy(tag))));
        }
        let payload = self.take(len as usize)?;
        let crc = self.u32()?;
        if crc != crc32fast::hash(payload) {
            return Err(Error::Integrity(format!("{}: CRC mismatch in section {}", self.what, String::from_utf8_lossy(tag))));
        }
        Ok(payload)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Integrity(format!("{} has {} trailing bytes", self.what, self.remaining())));
        }
        Ok(())
    }
}

/// Checks an 8-byte magic and a format version.
pub(crate) fn read_header(r: &mut ByteReader<'_>, magic: &[u8; 8], version: u32) -> Result<()> {
    let m = r.take(8).map_err(|_| Error::Integrity(format!("not a {} file", String::from_utf8_lossy(magic))))?;
    if m != magic {
        return Err(Error::Integrity(format!("bad magic: expected {}", String::from_utf8_lossy(magic))));
    }
    let v = r.u32()?;
    if v != version {
        return Err(Error::Integrity(format!("unsupported format version {v} (expected {version})")));
    }
    Ok(())
}
