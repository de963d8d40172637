use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::sim::ObservationFrame;

pub const DEFAULT_DIM: usize = 64;

/// Unit-norm embedding of a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `raw`; an all-zero input stays zero.
    pub fn normalized(mut raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            raw.iter_mut().for_each(|x| *x /= norm);
        }
        Self(raw)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Adds isotropic Gaussian noise of scale `sigma` and renormalizes.
    pub fn jitter<R: Rng + ?Sized>(&self, rng: &mut R, sigma: f64) -> Self {
        let raw = self
            .0
            .iter()
            .map(|x| {
                let n: f64 = StandardNormal.sample(rng);
                x + sigma * n
            })
            .collect();
        Self::normalized(raw)
    }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Maps a frame to a vector. Implementations must be pure.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, frame: &ObservationFrame) -> EmbeddingVector;
}

/// Signed feature hashing of `fact=value` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHashEmbedder {
    pub dim: usize,
}

impl Default for FeatureHashEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl FeatureHashEmbedder {
    /// Slot and sign of one token.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = fnv1a(token.as_bytes());
        let index = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        (index, sign)
    }

    pub fn embed_facts<'a>(
        &self,
        facts: impl IntoIterator<Item = (&'a str, bool)>,
    ) -> EmbeddingVector {
        let mut raw = vec![0.0; self.dim];
        for (name, value) in facts {
            let (i, s) = self.slot(&format!("{name}={value}"));
            raw[i] += s;
        }
        EmbeddingVector::normalized(raw)
    }
}

impl Embedder for FeatureHashEmbedder {
    fn id(&self) -> &str {
        "feature-hash"
    }

    fn embed(&self, frame: &ObservationFrame) -> EmbeddingVector {
        self.embed_facts(frame.facts.iter().map(|(k, v)| (k.as_str(), *v)))
    }
}

/// Embeds with the default embedder.
pub fn embed_frame(frame: &ObservationFrame) -> EmbeddingVector {
    FeatureHashEmbedder::default().embed(frame)
}
