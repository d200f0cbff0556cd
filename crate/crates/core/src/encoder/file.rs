//! F4E embedding batches and the lookup-table encoder built on them.
//!
//! Layout, all little-endian, no padding:
//!
//! ```text
//! "F4EM" | version u16 = 1 | dim u32 | count u64
//! count × ( id_len u16 | id UTF-8 | dim × f32 )
//! ```

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use super::{EncoderSpec, TextEncoder};
use crate::binio::Reader;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::index::Caption;

pub const F4E_MAGIC: [u8; 4] = *b"F4EM";
pub const F4E_VERSION: u16 = 1;

pub fn write_embedding_file(records: &[(String, EmbeddingVector)], path: &Path) -> Result<()> {
    let dim = records.first().map_or(0, |(_, v)| v.dim());
    let mut seen = HashSet::with_capacity(records.len());
    for (id, v) in records {
        if v.dim() != dim {
            return Err(Error::MixedDims {
                first: dim,
                other: v.dim(),
            });
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::CorruptRecord {
                index: seen.len() as u64,
                message: format!("id of {} bytes exceeds u16 length prefix", id.len()),
            });
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }

    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&F4E_MAGIC).map_err(io)?;
    w.write_u16::<LittleEndian>(F4E_VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(dim as u32).map_err(io)?;
    w.write_u64::<LittleEndian>(records.len() as u64).map_err(io)?;
    for (id, v) in records {
        w.write_u16::<LittleEndian>(id.len() as u16).map_err(io)?;
        w.write_all(id.as_bytes()).map_err(io)?;
        for &x in v.values() {
            w.write_f32::<LittleEndian>(x).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads every record in file order, normalizing each vector.
///
/// Any byte length other than the one implied by the header (short or with
/// bytes left over after the last record) is `TruncatedFile`. A header
/// declaring records of dimension 0 is `DimMismatch`.
pub fn load_embedding_file(path: &Path) -> Result<Vec<(String, EmbeddingVector)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_bytes(&bytes)
}

pub(crate) fn parse_embedding_bytes(bytes: &[u8]) -> Result<Vec<(String, EmbeddingVector)>> {
    let mut r = Reader::new(bytes);
    r.magic(F4E_MAGIC)?;
    let version = r.u16()?;
    if version != F4E_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    if count > 0 && dim == 0 {
        return Err(Error::DimMismatch(dim));
    }

    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut seen = HashSet::new();
    let mut buf = Vec::with_capacity(dim);
    for index in 0..count {
        let id_len = r.u16()? as usize;
        let id = r.string(id_len, index)?;
        buf.clear();
        r.f32s(dim, &mut buf)?;
        let v = EmbeddingVector::new(buf.clone())
            .and_then(|v| v.l2_normalize())
            .map_err(|e| Error::CorruptRecord {
                index,
                message: e.to_string(),
            })?;
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        records.push((id, v));
    }
    if r.remaining() != 0 {
        return Err(Error::TruncatedFile);
    }
    Ok(records)
}

/// Precomputed embeddings looked up by key.
///
/// Captions resolve by id first and then by text; free text (prediction
/// texts, item phrases) resolves by exact text.
pub struct TableEncoder {
    dim: usize,
    table: HashMap<String, EmbeddingVector>,
    source: String,
}

impl TableEncoder {
    pub fn new(records: Vec<(String, EmbeddingVector)>) -> Result<Self> {
        let dim = records.first().map_or(0, |(_, v)| v.dim());
        let mut table = HashMap::with_capacity(records.len());
        for (id, v) in records {
            if v.dim() != dim {
                return Err(Error::MixedDims {
                    first: dim,
                    other: v.dim(),
                });
            }
            let v = v.l2_normalize()?;
            if table.insert(id.clone(), v).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(Self {
            dim,
            table,
            source: String::new(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut enc = Self::new(load_embedding_file(path)?)?;
        enc.source = path.display().to_string();
        Ok(enc)
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.table.get(key)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl TextEncoder for TableEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        EncoderSpec::file(&self.source, self.dim).fingerprint()
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| Error::UnknownText(t.to_string()))
            })
            .collect()
    }

    fn encode_captions(&self, captions: &[Caption]) -> Result<Vec<EmbeddingVector>> {
        captions
            .iter()
            .map(|c| {
                self.table
                    .get(&c.id)
                    .or_else(|| self.table.get(&c.text))
                    .cloned()
                    .ok_or_else(|| Error::UnknownText(c.id.clone()))
            })
            .collect()
    }
}
