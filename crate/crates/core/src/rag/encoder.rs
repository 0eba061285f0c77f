use std::sync::Arc;

use super::RagError;
use crate::num::Scalar;
use crate::smmf::Gateway;

/// Dimension of the reference encoder.
pub const DEFAULT_DIM: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercase alphanumeric words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// Reference encoder: token counts hashed into `dim` buckets, L2-normalized.
/// Text without tokens maps to the zero vector.
pub fn embed<F: Scalar>(text: &str, dim: usize) -> Vec<F> {
    let mut counts = vec![0f64; dim];
    for token in tokenize(text) {
        counts[(fnv1a64(token.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    counts.into_iter().map(|c| if norm > 0.0 { F::lit(c / norm) } else { F::zero() }).collect()
}

/// Cosine similarity clamped to [-1, 1]; zero when either side is zero.
pub fn cosine<F: Scalar>(a: &[F], b: &[F]) -> F {
    let (mut dot, mut na, mut nb) = (F::zero(), F::zero(), F::zero());
    for (x, y) in a.iter().zip(b) {
        dot = dot + *x * *y;
        na = na + *x * *x;
        nb = nb + *y * *y;
    }
    if na == F::zero() || nb == F::zero() {
        return F::zero();
    }
    let c = dot / (na.sqrt() * nb.sqrt());
    c.max(-F::one()).min(F::one())
}

/// Turns texts into vectors for indexing.
pub trait Embedder<F: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<F>>, RagError>;
}

#[derive(Debug, Clone, Copy)]
pub struct HashEncoder {
    pub dim: usize,
}

impl Default for HashEncoder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl<F: Scalar> Embedder<F> for HashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<F>>, RagError> {
        Ok(texts.iter().map(|t| embed(t, self.dim)).collect())
    }
}

/// Embeddings served by a gateway worker with the embedding capability.
pub struct GatewayEmbedder {
    pub gateway: Arc<Gateway>,
    pub model: String,
    pub dim: usize,
}

impl<F: Scalar> Embedder<F> for GatewayEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<F>>, RagError> {
        let vectors = self.gateway.embed(texts, &self.model).map_err(|e| RagError::Embedding(e.to_string()))?;
        vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(RagError::DimensionMismatch { expected: self.dim, got: v.len() });
                }
                Ok(v.into_iter().map(F::lit).collect())
            })
            .collect()
    }
}
