//! Little-endian helpers shared by the F4E and F4I formats.

use std::io::{self, Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt};

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    inner: Cursor<&'a [u8]>,
}

fn eof(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::TruncatedFile
    } else {
        Error::io("<buffer>", e)
    }
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self {
            inner: Cursor::new(bytes),
        }
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let mut found = [0u8; 4];
        self.inner.read_exact(&mut found).map_err(eof)?;
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.inner.read_u8().map_err(eof)
    }

    pub fn u16(&mut self) -> Result<u16> {
        self.inner.read_u16::<LittleEndian>().map_err(eof)
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.inner.read_u32::<LittleEndian>().map_err(eof)
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.inner.read_u64::<LittleEndian>().map_err(eof)
    }

    pub fn f32s(&mut self, n: usize, out: &mut Vec<f32>) -> Result<()> {
        if self.remaining() < n.saturating_mul(4) {
            return Err(Error::TruncatedFile);
        }
        let start = out.len();
        out.resize(start + n, 0.0);
        self.inner
            .read_f32_into::<LittleEndian>(&mut out[start..])
            .map_err(eof)
    }

    pub fn string(&mut self, len: usize, index: u64) -> Result<String> {
        if self.remaining() < len {
            return Err(Error::TruncatedFile);
        }
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf).map_err(eof)?;
        String::from_utf8(buf).map_err(|e| Error::CorruptRecord {
            index,
            message: e.to_string(),
        })
    }

    pub fn remaining(&self) -> usize {
        let len = self.inner.get_ref().len() as u64;
        (len - self.inner.position().min(len)) as usize
    }
}
