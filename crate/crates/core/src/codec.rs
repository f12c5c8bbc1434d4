// Copyright 2026 the nebula authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Binary container discipline shared by every checkpoint and window file:
//! 4-byte magic, `u32` version, little-endian length-prefixed payload
//! sections, and a trailing CRC32 over all preceding bytes.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodecError {
    /// Payload truncated, bad magic, or checksum mismatch.
    CorruptContainer(String),
    /// Magic matched but the format version is not supported.
    VersionMismatch { found: u32, expected: u32 },
}

impl fmt::Display for CodecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecError::CorruptContainer(what) => write!(f, "corrupt container: {what}"),
            CodecError::VersionMismatch { found, expected } => {
                write!(f, "version mismatch: found {found}, expected {expected}")
            }
        }
    }
}

impl core::error::Error for CodecError {}

/// CRC32 (IEEE 802.3, reflected) over `bytes`.
pub fn crc32(bytes: &[u8]) -> u32 {
    const fn table() -> [u32; 256] {
        let mut t = [0u32; 256];
        let mut i = 0;
        while i < 256 {
            let mut c = i as u32;
            let mut k = 0;
            while k < 8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                k += 1;
            }
            t[i] = c;
            i += 1;
        }
        t
    }
    const TABLE: [u32; 256] = table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = TABLE[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

/// Append-only little-endian byte writer.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn with_header(magic: [u8; 4], version: u32) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(&magic);
        w.put_u32(version);
        w
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_bytes(&mut self, v: &[u8]) {
        self.put_u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    pub fn put_str(&mut self, v: &str) {
        self.put_bytes(v.as_bytes());
    }

    pub fn put_u64_array(&mut self, v: &[u64]) {
        self.put_u32(v.len() as u32);
        for &x in v {
            self.put_u64(x);
        }
    }

    pub fn put_i64_array(&mut self, v: &[i64]) {
        self.put_u32(v.len() as u32);
        for &x in v {
            self.put_i64(x);
        }
    }

    pub fn put_u8_array(&mut self, v: &[u8]) {
        self.put_bytes(v);
    }

    pub fn put_f64_array(&mut self, v: &[f64]) {
        self.put_u32(v.len() as u32);
        for &x in v {
            self.put_f64(x);
        }
    }

    /// Appends the CRC32 trailer and returns the finished container.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32(&self.buf);
        self.put_u32(crc);
        self.buf
    }
}

/// Cursor over a container body; the constructor validates magic, version,
/// and the CRC trailer before any field is read.
#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn open(bytes: &'a [u8], magic: [u8; 4], version: u32) -> Result<Self, CodecError> {
        if bytes.len() < 12 {
            return Err(CodecError::CorruptContainer(String::from("short file")));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32(body) != stored {
            return Err(CodecError::CorruptContainer(String::from("checksum mismatch")));
        }
        if body[..4] != magic {
            return Err(CodecError::CorruptContainer(String::from("bad magic")));
        }
        let found = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if found != version {
            return Err(CodecError::VersionMismatch { found, expected: version });
        }
        Ok(Reader { buf: body, pos: 8 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::CorruptContainer(String::from("truncated section")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, CodecError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn string(&mut self) -> Result<String, CodecError> {
        let raw = self.bytes()?;
        core::str::from_utf8(raw)
            .map(String::from)
            .map_err(|_| CodecError::CorruptContainer(String::from("invalid utf-8")))
    }

    pub fn u64_array(&mut self) -> Result<Vec<u64>, CodecError> {
        let n = self.u32()? as usize;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.u64()?);
        }
        Ok(v)
    }

    pub fn i64_array(&mut self) -> Result<Vec<i64>, CodecError> {
        let n = self.u32()? as usize;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.i64()?);
        }
        Ok(v)
    }

    pub fn u8_array(&mut self) -> Result<Vec<u8>, CodecError> {
        Ok(self.bytes()?.to_vec())
    }

    pub fn f64_array(&mut self) -> Result<Vec<f64>, CodecError> {
        let n = self.u32()? as usize;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }

    /// Fails unless every payload byte has been consumed.
    pub fn done(&self) -> Result<(), CodecError> {
        if self.pos != self.buf.len() {
            return Err(CodecError::CorruptContainer(String::from("trailing bytes")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc32_known_vector() {
        // "123456789" is the standard check input for CRC-32/IEEE.
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn round_trip_sections() {
        let mut w = Writer::with_header(*b"TEST", 3);
        w.put_u64(42);
        w.put_str("hello");
        w.put_f64_array(&[1.5, -0.25]);
        let bytes = w.finish();

        let mut r = Reader::open(&bytes, *b"TEST", 3).unwrap();
        assert_eq!(r.u64().unwrap(), 42);
        assert_eq!(r.string().unwrap(), "hello");
        assert_eq!(r.f64_array().unwrap(), vec![1.5, -0.25]);
        r.done().unwrap();
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let mut w = Writer::with_header(*b"TEST", 1);
        w.put_u64(7);
        let mut bytes = w.finish();
        bytes[9] ^= 0x40;
        assert!(matches!(
            Reader::open(&bytes, *b"TEST", 1),
            Err(CodecError::CorruptContainer(_))
        ));
    }

    #[test]
    fn truncation_is_corrupt() {
        let mut w = Writer::with_header(*b"TEST", 1);
        w.put_u64(7);
        let bytes = w.finish();
        assert!(matches!(
            Reader::open(&bytes[..bytes.len() - 3], *b"TEST", 1),
            Err(CodecError::CorruptContainer(_))
        ));
    }

    #[test]
    fn wrong_version_reported() {
        let w = Writer::with_header(*b"TEST", 9);
        let bytes = w.finish();
        assert_eq!(
            Reader::open(&bytes, *b"TEST", 1).unwrap_err(),
            CodecError::VersionMismatch { found: 9, expected: 1 }
        );
    }
}
