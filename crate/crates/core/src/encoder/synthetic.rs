use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::{tokenize, EncoderKind, EncoderSpec, TextEncoder};
use crate::embedding::{normalize_f64, EmbeddingVector};
use crate::error::{Error, Result};

/// Seeded random-projection bag-of-tokens encoder.
///
/// Each token maps to a unit Gaussian direction drawn from a generator seeded
/// by `sha256(seed || dim || token)`. A text embeds to the normalized sum of
/// its token directions, so texts sharing tokens land close together.
pub struct SyntheticEncoder {
    dim: usize,
    seed: u64,
    vocabulary: RwLock<HashMap<String, Arc<[f64]>>>,
}

impl SyntheticEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            vocabulary: RwLock::new(HashMap::new()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Unit projection vector for one token.
    pub fn token_vector(&self, token: &str) -> Arc<[f64]> {
        if let Some(v) = self.vocabulary.read().unwrap().get(token) {
            return Arc::clone(v);
        }
        let v: Arc<[f64]> = project_token(token, self.seed, self.dim).into();
        self.vocabulary
            .write()
            .unwrap()
            .entry(token.to_string())
            .or_insert(v)
            .clone()
    }

    pub fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        // Summation order fixed so equal token multisets embed bit-identically.
        tokens.sort_unstable();
        let mut acc = vec![0.0f64; self.dim];
        for token in &tokens {
            let tv = self.token_vector(token);
            for (a, t) in acc.iter_mut().zip(tv.iter()) {
                *a += t;
            }
        }
        normalize_f64(&acc)
    }

    /// A synthetic "image": its caption's embedding plus seeded Gaussian noise.
    ///
    /// The noise vector has i.i.d. N(0, 1) entries (expected norm `sqrt(dim)`)
    /// and is scaled by `noise_sigma` before the sum is renormalized.
    pub fn encode_image(
        &self,
        gt_caption: &str,
        noise_sigma: f64,
        noise_seed: u64,
    ) -> Result<EmbeddingVector> {
        let clean = self.encode_text(gt_caption)?;
        self.perturb(&clean, noise_sigma, noise_seed)
    }

    /// Adds `noise_sigma`-scaled seeded Gaussian noise to `clean` and renormalizes.
    pub fn perturb(
        &self,
        clean: &EmbeddingVector,
        noise_sigma: f64,
        noise_seed: u64,
    ) -> Result<EmbeddingVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let acc: Vec<f64> = clean
            .values()
            .iter()
            .map(|&c| {
                let g: f64 = rng.sample(StandardNormal);
                c as f64 + noise_sigma * g
            })
            .collect();
        normalize_f64(&acc)
    }
}

fn project_token(token: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((dim as u64).to_le_bytes());
    hasher.update(token.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl TextEncoder for SyntheticEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        EncoderSpec::synthetic(self.dim, self.seed).fingerprint()
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.encode_text(t)).collect()
    }
}

fn synthetic_only(spec: &EncoderSpec) -> Result<SyntheticEncoder> {
    if spec.kind != EncoderKind::Synthetic {
        return Err(Error::InvalidEncoderSpec(format!(
            "expected a synthetic encoder, got {}",
            spec.kind.as_str()
        )));
    }
    spec.validate()?;
    Ok(SyntheticEncoder::new(spec.dim, spec.seed))
}

pub fn encode_text_synthetic(text: &str, spec: &EncoderSpec) -> Result<EmbeddingVector> {
    synthetic_only(spec)?.encode_text(text)
}

pub fn encode_image_synthetic(
    gt_caption: &str,
    noise_sigma: f64,
    spec: &EncoderSpec,
    noise_seed: u64,
) -> Result<EmbeddingVector> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParams(format!("noise sigma {noise_sigma} must be finite and >= 0")));
    }
    synthetic_only(spec)?.encode_image(gt_caption, noise_sigma, noise_seed)
}
