//! Little-endian byte encoding helpers shared by the binary file formats.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
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

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Appends the SHA-256 of everything written so far and returns the bytes with the digest.
    pub fn finish_with_hash(mut self) -> (Vec<u8>, [u8; 32]) {
        let digest: [u8; 32] = Sha256::digest(&self.buf).into();
        self.buf.extend_from_slice(&digest);
        (self.buf, digest)
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                len: self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.array::<4>()?;
        if &found != expected {
            return Err(Error::BadMagic {
                expected: *expected,
                found,
            });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            offset: at,
            message: "string is not UTF-8".into(),
        })
    }

    /// A count followed by `elem_size`-byte elements; rejects counts the buffer cannot hold.
    pub fn count(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem_size) > self.remaining() {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n.saturating_mul(elem_size),
                len: self.buf.len(),
            });
        }
        Ok(n)
    }
}

/// Splits `bytes` into payload and trailing SHA-256, verifying the digest.
pub fn verify_trailing_hash(bytes: &[u8]) -> Result<(&[u8], [u8; 32])> {
    if bytes.len() < 32 {
        return Err(Error::Truncated {
            offset: 0,
            needed: 32,
            len: bytes.len(),
        });
    }
    let (payload, stored) = bytes.split_at(bytes.len() - 32);
    let digest: [u8; 32] = Sha256::digest(payload).into();
    if digest != stored {
        return Err(Error::HashMismatch);
    }
    Ok((payload, digest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_read_reports_offset() {
        let mut r = ByteReader::new(&[1, 0, 0]);
        let err = r.u32().unwrap_err();
        assert!(matches!(err, Error::Truncated { offset: 0, needed: 4, len: 3 }));
    }

    #[test]
    fn hash_roundtrip_and_tamper() {
        let mut w = ByteWriter::new();
        w.str("hello");
        w.f32(1.5);
        let (mut bytes, digest) = w.finish_with_hash();
        let (payload, d) = verify_trailing_hash(&bytes).unwrap();
        assert_eq!(d, digest);
        let mut r = ByteReader::new(payload);
        assert_eq!(r.str().unwrap(), "hello");
        assert_eq!(r.f32().unwrap(), 1.5);
        bytes[2] ^= 1;
        assert!(matches!(verify_trailing_hash(&bytes), Err(Error::HashMismatch)));
    }
}
