//! Little-endian cursor over an in-memory file image, shared by the record
//! and checkpoint readers.

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, FormatReason, Result};

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Id of the last fully decoded record, reported on truncation.
    pub last_good: Option<String>,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader {
            buf,
            pos: 0,
            last_good: None,
        }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn truncated(&self) -> Error {
        Error::format(
            self.offset(),
            FormatReason::Truncated {
                last_good: self.last_good.clone(),
            },
        )
    }

    pub fn invalid_at(&self, offset: u64, msg: impl Into<String>) -> Error {
        Error::format(offset, FormatReason::Invalid(msg.into()))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.truncated());
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    /// Checks a leading magic tag and a version no newer than `version`.
    pub fn header(&mut self, magic: &[u8; 4], version: u16) -> Result<u16> {
        if self.remaining() < 4 || &self.buf[..4] != magic {
            return Err(Error::format(0, FormatReason::BadMagic));
        }
        self.pos = 4;
        let found = self.u16()?;
        if found == 0 || found > version {
            return Err(Error::format(4, FormatReason::UnsupportedVersion(found)));
        }
        Ok(found)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.bytes(2)?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.bytes(4)?))
    }

    /// A length-prefixed UTF-8 string of at most `max` bytes.
    pub fn string(&mut self, max: usize, what: &str) -> Result<String> {
        let at = self.offset();
        let len = self.u32()? as usize;
        if len > max {
            return Err(self.invalid_at(at, format!("{what} length {len} exceeds {max}")));
        }
        let raw = self.bytes(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.invalid_at(at, format!("{what} is not UTF-8")))
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.bytes(count.checked_mul(4).ok_or_else(|| self.truncated())?)?;
        Ok(raw.chunks_exact(4).map(LittleEndian::read_f32).collect())
    }

    pub fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(count.checked_mul(8).ok_or_else(|| self.truncated())?)?;
        Ok(raw.chunks_exact(8).map(LittleEndian::read_f64).collect())
    }
}
