//! Passage embeddings: the provider contract, a built-in trainable encoder,
//! contrastive (multiple negatives ranking) adaptation, a persistent vector
//! store, and embedding-quality statistics.

mod encoder;
mod loss;
mod metrics;
mod store;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Passage;

pub use encoder::{BuiltinEncoder, EncoderConfig};
pub use loss::{mnr_loss, mnr_loss_and_grad, mnr_loss_with_negatives, MnrGradient};
pub use metrics::{eval_embeddings, fractional_ranks, pair_stats, pearson, spearman, EmbeddingStats};
pub use store::VectorStore;
pub use train::{projection_loss_and_grad, train_encoder, EncoderTrainConfig, TrainedEncoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&x| f64::from(x)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(values: Vec<f32>) -> Self {
        EmbeddingVector(values)
    }
}

/// Anything that maps passage text to fixed-dimension vectors.
pub trait EmbeddingProvider {
    fn name(&self) -> String;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector>;

    fn embed_passage(&self, passage: &Passage) -> Result<EmbeddingVector> {
        self.embed(&passage.text)
    }
}

/// Cosine similarity, computed in 64-bit.
pub fn cosine_sim(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (mut uv, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((uv / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarity over 64-bit vectors.
pub fn cosine_f64(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let nu = crate::util::norm(u);
    let nv = crate::util::norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(crate::util::dot(u, v) / (nu * nv))
}

/// Embeds every passage into a fresh store tagged with the provider's name.
pub fn embed_passages<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    passages: &[Passage],
    provenance: impl Into<String>,
) -> Result<VectorStore> {
    let mut store = VectorStore::new(provider.dimension(), provenance);
    for passage in passages {
        store.insert(passage.source.clone(), provider.embed_passage(passage)?)?;
    }
    Ok(store)
}
