//! Portable binary envelope shared by dataset and checkpoint files.
//!
//! Layout: 8-byte magic, little-endian `u32` version, then a sequence of
//! sections. Each section is a `u32` tag length, the UTF-8 tag, a `u64`
//! payload length and the payload. All numbers inside payloads are
//! little-endian.

use std::path::Path;

use crate::{Error, Result};

pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub magic: [u8; 8],
    pub sections: Vec<(String, Vec<u8>)>,
}

impl Envelope {
    pub fn new(magic: [u8; 8]) -> Self {
        Self {
            magic,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, tag: &str, payload: Vec<u8>) {
        self.sections.push((tag.to_owned(), payload));
    }

    pub fn section(&self, tag: &str) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| Error::Format(format!("missing section {tag:?}")))
    }

    pub fn has_section(&self, tag: &str) -> bool {
        self.sections.iter().any(|(t, _)| t == tag)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.buf.extend_from_slice(&self.magic);
        w.u32(VERSION);
        for (tag, payload) in &self.sections {
            w.str(tag);
            w.u64(payload.len() as u64);
            w.buf.extend_from_slice(payload);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let found = r.take(8)?;
        if found != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version} (this build reads version {VERSION})"
            )));
        }
        let mut env = Envelope::new(*magic);
        while !r.is_empty() {
            let tag = r.str()?;
            let len = r.u64()? as usize;
            let payload = r.take(len)?.to_vec();
            env.sections.push((tag, payload));
        }
        Ok(env)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, magic: &[u8; 8]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, magic)
    }
}

#[derive(Default)]
pub struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn usizes(&mut self, vs: &[usize]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.u64(v as u64);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| Error::Format(format!("invalid UTF-8: {e}")))
    }

    fn len_prefix(&mut self, width: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(width) > self.bytes.len() - self.pos {
            return Err(Error::Format(format!("truncated array of {n} elements")));
        }
        Ok(n)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.u64().map(|v| v as usize)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTTEST";

    fn sample() -> Envelope {
        let mut env = Envelope::new(*MAGIC);
        let mut w = ByteWriter::default();
        w.f64s(&[1.5, -2.0]);
        w.str("hi");
        env.push("body", w.finish());
        env
    }

    #[test]
    fn round_trip() {
        let env = sample();
        let back = Envelope::from_bytes(&env.to_bytes(), MAGIC).unwrap();
        assert_eq!(env, back);
        let mut r = ByteReader::new(back.section("body").unwrap());
        assert_eq!(r.f64s().unwrap(), vec![1.5, -2.0]);
        assert_eq!(r.str().unwrap(), "hi");
    }

    #[test]
    fn truncated_is_format_error() {
        let bytes = sample().to_bytes();
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(
                Envelope::from_bytes(&bytes[..cut], MAGIC),
                Err(Error::Format(_))
            ));
        }
    }

    #[test]
    fn newer_version_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        match Envelope::from_bytes(&bytes, MAGIC) {
            Err(Error::Format(msg)) => assert!(msg.contains("version 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Envelope::from_bytes(&bytes, b"OTHERMAG").is_err());
    }
}
