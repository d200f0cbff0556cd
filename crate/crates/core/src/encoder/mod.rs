//! Text and image embedding sources.
//!
//! Three interchangeable backends sit behind [`TextEncoder`]: a seeded
//! synthetic bag-of-tokens encoder for offline work, a lookup table loaded
//! from an F4E embedding file, and an HTTP client for a remote embedding
//! service.

mod file;
mod remote;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

pub use file::{load_embedding_file, write_embedding_file, TableEncoder, F4E_MAGIC, F4E_VERSION};
pub use remote::{RemoteEncoder, RetryPolicy, ENDPOINT_ENV, MAX_TEXT_BYTES};
pub use synthetic::{encode_image_synthetic, encode_text_synthetic, SyntheticEncoder};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::index::Caption;

pub const MIN_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    File,
    Synthetic,
    Remote,
}

impl EncoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EncoderKind::File => "file",
            EncoderKind::Synthetic => "synthetic",
            EncoderKind::Remote => "remote",
        }
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "file" => Ok(EncoderKind::File),
            "synthetic" => Ok(EncoderKind::Synthetic),
            "remote" => Ok(EncoderKind::Remote),
            other => Err(Error::InvalidEncoderSpec(format!("unknown encoder kind {other:?}"))),
        }
    }
}

/// Identity and configuration of an embedding source.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub dim: usize,
    /// Synthetic only.
    pub seed: u64,
    /// Remote only.
    pub endpoint: Option<String>,
    /// File only: F4E table keyed by caption id or text.
    pub path: Option<PathBuf>,
}

impl EncoderSpec {
    pub fn synthetic(dim: usize, seed: u64) -> Self {
        Self {
            kind: EncoderKind::Synthetic,
            dim,
            seed,
            endpoint: None,
            path: None,
        }
    }

    pub fn remote(endpoint: impl Into<String>, dim: usize) -> Self {
        Self {
            kind: EncoderKind::Remote,
            dim,
            seed: 0,
            endpoint: Some(endpoint.into()),
            path: None,
        }
    }

    /// Remote spec whose endpoint comes from `F4_ENCODER_ENDPOINT`.
    pub fn remote_from_env(dim: usize) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::InvalidEncoderSpec(format!("{ENDPOINT_ENV} is not set")))?;
        Ok(Self::remote(endpoint, dim))
    }

    pub fn file(path: impl Into<PathBuf>, dim: usize) -> Self {
        Self {
            kind: EncoderKind::File,
            dim,
            seed: 0,
            endpoint: None,
            path: Some(path.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < MIN_DIM {
            return Err(Error::InvalidEncoderSpec(format!(
                "dim {} is below the minimum of {MIN_DIM}",
                self.dim
            )));
        }
        match self.kind {
            EncoderKind::Remote if self.endpoint.as_deref().is_none_or(str::is_empty) => Err(
                Error::InvalidEncoderSpec("remote encoder needs an endpoint".into()),
            ),
            EncoderKind::File if self.path.is_none() => Err(Error::InvalidEncoderSpec(
                "file encoder needs a path".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Stable identity string, e.g. `synthetic;dim=64;seed=7`.
    pub fn fingerprint(&self) -> String {
        let mut s = format!("{};dim={}", self.kind.as_str(), self.dim);
        match self.kind {
            EncoderKind::Synthetic => s.push_str(&format!(";seed={}", self.seed)),
            EncoderKind::Remote => {
                s.push_str(&format!(";endpoint={}", self.endpoint.as_deref().unwrap_or("")))
            }
            EncoderKind::File => s.push_str(&format!(
                ";path={}",
                self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
            )),
        }
        s
    }

    /// Inverse of [`EncoderSpec::fingerprint`].
    pub fn from_fingerprint(fp: &str) -> Result<Self> {
        let bad = || Error::InvalidEncoderSpec(format!("unparseable fingerprint {fp:?}"));
        let mut parts = fp.split(';');
        let kind: EncoderKind = parts.next().ok_or_else(bad)?.parse()?;
        let mut spec = Self {
            kind,
            dim: 0,
            seed: 0,
            endpoint: None,
            path: None,
        };
        for part in parts {
            let (key, value) = part.split_once('=').ok_or_else(bad)?;
            match key {
                "dim" => spec.dim = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "endpoint" => spec.endpoint = Some(value.to_string()),
                "path" => spec.path = Some(PathBuf::from(value)),
                _ => return Err(bad()),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for EncoderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fingerprint())
    }
}

/// Anything that turns text into unit-norm embeddings.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    fn fingerprint(&self) -> String;

    /// One unit vector per input, in input order.
    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.encode_batch(&[text])?;
        out.pop().ok_or_else(|| Error::MalformedResponse("empty batch result".into()))
    }

    fn encode_captions(&self, captions: &[Caption]) -> Result<Vec<EmbeddingVector>> {
        let texts: Vec<&str> = captions.iter().map(|c| c.text.as_str()).collect();
        self.encode_batch(&texts)
    }
}

/// Opens the backend described by `spec`.
pub fn open_encoder(spec: &EncoderSpec) -> Result<Box<dyn TextEncoder>> {
    spec.validate()?;
    Ok(match spec.kind {
        EncoderKind::Synthetic => Box::new(SyntheticEncoder::new(spec.dim, spec.seed)),
        EncoderKind::Remote => Box::new(RemoteEncoder::new(
            spec.endpoint.clone().unwrap_or_default(),
            spec.dim,
        )?),
        EncoderKind::File => {
            let path = spec.path.as_ref().expect("validated");
            let table = TableEncoder::from_file(path)?;
            if table.dim() != spec.dim {
                return Err(Error::DimensionMismatch {
                    expected: spec.dim,
                    actual: table.dim(),
                });
            }
            Box::new(table)
        }
    })
}

/// Lowercase, split on commas and whitespace, strip ASCII punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .map(|t| {
            t.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}
