//! Little-endian readers/writers for the crate's binary file formats.
//!
//! All reads are bounds-checked against the remaining input before any
//! allocation happens, so the decoders can be pointed at untrusted bytes.

use crate::error::{Error, Result};

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "truncated input reading {what}: need {n} bytes, have {}",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn read_u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn read_f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(f64::from_le_bytes(arr))
    }

    /// `n` f64 values; the byte length is validated before allocating.
    pub fn read_f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format(format!("length overflow reading {what}")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| {
                let mut arr = [0u8; 8];
                arr.copy_from_slice(c);
                f64::from_le_bytes(arr)
            })
            .collect())
    }

    /// u32 length prefix followed by that many raw bytes.
    pub fn read_prefixed_bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let len = self.read_u32(what)? as usize;
        self.take(len, what)
    }

    pub fn read_prefixed_str(&mut self, what: &str) -> Result<&'a str> {
        let raw = self.read_prefixed_bytes(what)?;
        std::str::from_utf8(raw)
            .map_err(|_| Error::Format(format!("invalid UTF-8 reading {what}")))
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4], what: &str) -> Result<()> {
        let got = self.take(4, what)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic for {what}: expected {magic:?}, got {got:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64_slice(&mut self, vs: &[f64]) {
        for v in vs {
            self.put_f64(*v);
        }
    }

    pub fn put_prefixed_bytes(&mut self, bytes: &[u8]) {
        self.put_u32(bytes.len() as u32);
        self.buf.extend_from_slice(bytes);
    }

    pub fn put_prefixed_str(&mut self, s: &str) {
        self.put_prefixed_bytes(s.as_bytes());
    }

    pub fn put_magic(&mut self, magic: &[u8; 4]) {
        self.buf.extend_from_slice(magic);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_scalars() {
        let mut w = ByteWriter::new();
        w.put_u8(7);
        w.put_u32(123_456);
        w.put_f64(-2.5);
        w.put_prefixed_str("héllo");
        let bytes = w.into_bytes();

        let mut r = ByteReader::new(&bytes);
        assert_eq!(r.read_u8("a").unwrap(), 7);
        assert_eq!(r.read_u32("b").unwrap(), 123_456);
        assert_eq!(r.read_f64("c").unwrap(), -2.5);
        assert_eq!(r.read_prefixed_str("d").unwrap(), "héllo");
        assert!(r.is_empty());
    }

    #[test]
    fn truncated_read_is_an_error_not_a_panic() {
        let mut r = ByteReader::new(&[1, 2]);
        assert!(r.read_u32("x").is_err());
    }

    #[test]
    fn huge_prefix_does_not_allocate() {
        // length prefix far beyond the actual buffer
        let mut bytes = u32::MAX.to_le_bytes().to_vec();
        bytes.push(0);
        let mut r = ByteReader::new(&bytes);
        assert!(r.read_prefixed_bytes("x").is_err());
    }
}
