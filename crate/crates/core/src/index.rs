//! Caption corpora and the immutable, self-contained caption index.
//!
//! F4I layout, little-endian, no padding:
//!
//! ```text
//! "F4IX" | version u16 = 1 | kind u8 (0 dense, 1 sparse) | dim u32 | count u64
//! count × ( id_len u32 | id UTF-8 | text_len u32 | text UTF-8 )
//! count × dim × f32
//! fingerprint_len u32 | fingerprint UTF-8
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::Reader;
use crate::embedding::{EmbeddingVector, UNIT_TOLERANCE};
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::rerank::parse_items;

pub const F4I_MAGIC: [u8; 4] = *b"F4IX";
pub const F4I_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionKind {
    Dense,
    Sparse,
}

impl CaptionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaptionKind::Dense => "dense",
            CaptionKind::Sparse => "sparse",
        }
    }

    fn code(&self) -> u8 {
        match self {
            CaptionKind::Dense => 0,
            CaptionKind::Sparse => 1,
        }
    }
}

impl fmt::Display for CaptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaptionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dense" => Ok(CaptionKind::Dense),
            "sparse" => Ok(CaptionKind::Sparse),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub id: String,
    pub text: String,
    pub kind: CaptionKind,
}

impl Caption {
    pub fn dense(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            kind: CaptionKind::Dense,
        }
    }

    pub fn sparse(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            kind: CaptionKind::Sparse,
        }
    }
}

/// Searchable caption database: one unit-norm embedding row per caption.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionIndex {
    captions: Vec<Caption>,
    embeddings: Vec<f32>,
    dim: usize,
    kind: CaptionKind,
    encoder_fingerprint: String,
    positions: HashMap<String, usize>,
}

impl CaptionIndex {
    /// Assembles an index from captions and their embeddings, checking every invariant.
    pub fn from_parts(
        captions: Vec<Caption>,
        embeddings: Vec<EmbeddingVector>,
        encoder_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if captions.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        assert_eq!(captions.len(), embeddings.len(), "one embedding per caption");
        let kind = captions[0].kind;
        let dim = embeddings[0].dim();
        let mut flat = Vec::with_capacity(captions.len() * dim);
        for v in &embeddings {
            if v.dim() != dim {
                return Err(Error::MixedDims {
                    first: dim,
                    other: v.dim(),
                });
            }
            let v = v.l2_normalize()?;
            flat.extend_from_slice(v.values());
        }
        Self::from_flat(captions, flat, dim, kind, encoder_fingerprint.into())
    }

    fn from_flat(
        captions: Vec<Caption>,
        embeddings: Vec<f32>,
        dim: usize,
        kind: CaptionKind,
        encoder_fingerprint: String,
    ) -> Result<Self> {
        let mut positions = HashMap::with_capacity(captions.len());
        for (i, c) in captions.iter().enumerate() {
            if c.kind != kind {
                return Err(Error::MixedKinds);
            }
            if positions.insert(c.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(c.id.clone()));
            }
        }
        Ok(Self {
            captions,
            embeddings,
            dim,
            kind,
            encoder_fingerprint,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> CaptionKind {
        self.kind
    }

    pub fn encoder_fingerprint(&self) -> &str {
        &self.encoder_fingerprint
    }

    pub fn captions(&self) -> &[Caption] {
        &self.captions
    }

    pub fn caption(&self, row: usize) -> &Caption {
        &self.captions[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.embeddings[row * self.dim..(row + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.embeddings.chunks_exact(self.dim)
    }

    /// Flat row-major embedding matrix.
    pub fn matrix(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn embedding(&self, id: &str) -> Option<EmbeddingVector> {
        self.position(id)
            .map(|row| EmbeddingVector::new(self.row(row).to_vec()).expect("stored rows are finite"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_index(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_index(path)
    }
}

/// Encodes every caption with `encoder`; rows are normalized.
pub fn build_index(captions: Vec<Caption>, encoder: &dyn TextEncoder) -> Result<CaptionIndex> {
    if captions.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen = HashMap::with_capacity(captions.len());
    for c in &captions {
        if seen.insert(c.id.as_str(), ()).is_some() {
            return Err(Error::DuplicateId(c.id.clone()));
        }
    }
    let embeddings: Vec<EmbeddingVector> = captions
        .par_chunks(256)
        .map(|chunk| encoder.encode_captions(chunk))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if let Some(v) = embeddings.iter().find(|v| v.dim() != encoder.dim()) {
        return Err(Error::DimensionMismatch {
            expected: encoder.dim(),
            actual: v.dim(),
        });
    }
    CaptionIndex::from_parts(captions, embeddings, encoder.fingerprint())
}

pub fn save_index(index: &CaptionIndex, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&F4I_MAGIC).map_err(io)?;
    w.write_u16::<LittleEndian>(F4I_VERSION).map_err(io)?;
    w.write_u8(index.kind.code()).map_err(io)?;
    w.write_u32::<LittleEndian>(index.dim as u32).map_err(io)?;
    w.write_u64::<LittleEndian>(index.len() as u64).map_err(io)?;
    let put_str = |w: &mut BufWriter<File>, s: &str| -> std::io::Result<()> {
        w.write_u32::<LittleEndian>(s.len() as u32)?;
        w.write_all(s.as_bytes())
    };
    for c in &index.captions {
        put_str(&mut w, &c.id).map_err(io)?;
        put_str(&mut w, &c.text).map_err(io)?;
    }
    for &x in &index.embeddings {
        w.write_f32::<LittleEndian>(x).map_err(io)?;
    }
    put_str(&mut w, &index.encoder_fingerprint).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_index(path: &Path) -> Result<CaptionIndex> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_index_bytes(&bytes)
}

pub(crate) fn parse_index_bytes(bytes: &[u8]) -> Result<CaptionIndex> {
    let mut r = Reader::new(bytes);
    r.magic(F4I_MAGIC)?;
    let version = r.u16()?;
    if version != F4I_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let kind = match r.u8()? {
        0 => CaptionKind::Dense,
        1 => CaptionKind::Sparse,
        other => {
            return Err(Error::CorruptRecord {
                index: 0,
                message: format!("unknown kind code {other}"),
            })
        }
    };
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    if dim == 0 {
        return Err(Error::DimMismatch(dim));
    }

    let mut captions = Vec::with_capacity(count.min(1 << 20) as usize);
    for i in 0..count {
        let id_len = r.u32()? as usize;
        let id = r.string(id_len, i)?;
        let text_len = r.u32()? as usize;
        let text = r.string(text_len, i)?;
        captions.push(Caption { id, text, kind });
    }
    let total = (count as usize)
        .checked_mul(dim)
        .ok_or(Error::TruncatedFile)?;
    let mut embeddings = Vec::with_capacity(total);
    r.f32s(total, &mut embeddings)?;
    let fp_len = r.u32()? as usize;
    let fingerprint = r.string(fp_len, count)?;
    if r.remaining() != 0 {
        return Err(Error::TruncatedFile);
    }

    for (i, row) in embeddings.chunks_exact(dim).enumerate() {
        let v = EmbeddingVector::new(row.to_vec()).map_err(|e| Error::CorruptRecord {
            index: i as u64,
            message: e.to_string(),
        })?;
        if (v.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::CorruptRecord {
                index: i as u64,
                message: format!("row norm {} is not unit", v.norm()),
            });
        }
    }
    CaptionIndex::from_flat(captions, embeddings, dim, kind, fingerprint)
}

#[derive(Deserialize)]
struct RawCaption {
    id: String,
    text: String,
    kind: String,
}

/// Reads a JSONL caption file: `{"id": .., "text": .., "kind": "dense"|"sparse"}` per line.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn ingest_captions(path: &Path) -> Result<Vec<Caption>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_captions(BufReader::new(file), path)
}

pub(crate) fn read_captions(reader: impl BufRead, path: &Path) -> Result<Vec<Caption>> {
    let mut captions = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCaption = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        let kind: CaptionKind = raw.kind.parse().map_err(|kind| Error::UnknownKind {
            line: line_no,
            kind,
        })?;
        if raw.text.trim().is_empty() {
            return Err(Error::MalformedLine {
                line: line_no,
                message: "empty caption text".into(),
            });
        }
        if kind == CaptionKind::Sparse && parse_items(&raw.text).is_err() {
            return Err(Error::MalformedLine {
                line: line_no,
                message: "sparse caption has no items".into(),
            });
        }
        if seen.insert(raw.id.clone(), line_no).is_some() {
            return Err(Error::DuplicateId(raw.id));
        }
        captions.push(Caption {
            id: raw.id,
            text: raw.text,
            kind,
        });
    }
    Ok(captions)
}

/// Writes captions as JSONL in the format [`ingest_captions`] reads.
pub fn write_captions(captions: &[Caption], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for c in captions {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}
