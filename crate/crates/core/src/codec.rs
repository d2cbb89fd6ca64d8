//! Canonical binary encoding.
//!
//! Every multi-byte integer is big-endian. Variable-length fields carry a
//! `u32` length prefix. Structures are encoded field by field in declaration
//! order with no padding, so equal values always produce equal bytes.
//!
//! | type      | layout                                   |
//! |-----------|------------------------------------------|
//! | `u8`      | 1 byte                                   |
//! | `u32`     | 4 bytes BE                               |
//! | `u64`     | 8 bytes BE                               |
//! | `i64`     | 8 bytes BE, two's complement             |
//! | digest    | 32 raw bytes                             |
//! | bytes/str | `u32` length, then the raw bytes (UTF-8) |
//! | list      | `u32` count, then each element           |

use thiserror::Error;

use crate::hash::Hash256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("invalid tag {tag} at offset {offset}")]
    BadTag { tag: u8, offset: usize },
    #[error("invalid utf-8 string at offset {0}")]
    BadUtf8(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Encoder { buf: Vec::with_capacity(n) }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn digest(&mut self, h: &Hash256) -> &mut Self {
        self.buf.extend_from_slice(&h.0);
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::Truncated(self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn digest(&mut self) -> Result<Hash256, DecodeError> {
        Ok(Hash256(self.take(32)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String, DecodeError> {
        let at = self.pos;
        String::from_utf8(self.bytes()?).map_err(|_| DecodeError::BadUtf8(at))
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_are_big_endian() {
        let mut e = Encoder::new();
        e.u32(1).u64(2).i64(-1);
        let b = e.finish();
        assert_eq!(&b[..4], &[0, 0, 0, 1]);
        assert_eq!(&b[4..12], &[0, 0, 0, 0, 0, 0, 0, 2]);
        assert_eq!(&b[12..], &[0xff; 8]);
    }

    #[test]
    fn truncated_input_reports_offset() {
        let mut d = Decoder::new(&[0, 0, 0, 5, 1, 2]);
        assert_eq!(d.bytes(), Err(DecodeError::Truncated(4)));
    }
}
