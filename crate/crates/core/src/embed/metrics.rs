use serde::{Deserialize, Serialize};

use super::{cosine_sim, EmbeddingProvider};
use crate::corpus::PairLabel;
use crate::error::{Error, Result};
use crate::util::compensated_sum;

/// Embedding quality over labelled pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub pearson: f64,
    pub spearman: f64,
    /// Mean negated Euclidean distance over positive pairs minus the same over
    /// negative pairs. Larger means positives sit closer than negatives.
    pub euclidean_mean_signed: f64,
    pub mean_positive_cosine: f64,
    pub mean_negative_cosine: f64,
    pub pairs: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::empty("correlation needs at least two points"));
    }
    let n = x.len() as f64;
    let mx = compensated_sum(x.iter().copied()) / n;
    let my = compensated_sum(y.iter().copied()) / n;
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = compensated_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let syy = compensated_sum(y.iter().map(|b| (b - my) * (b - my)));
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("first"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of fractional ranks (ties share their mean rank).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share their mean
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Statistics for already-embedded pairs `(u, v, label)`.
pub fn pair_stats(pairs: &[(&[f32], &[f32], PairLabel)]) -> Result<EmbeddingStats> {
    if pairs.len() < 3 {
        return Err(Error::empty("embedding evaluation needs at least three pairs"));
    }
    let mut scores = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    let (mut pos_dist, mut neg_dist, mut pos_cos, mut neg_cos) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (u, v, label) in pairs {
        let cos = cosine_sim(u, v)?;
        let dist = u
            .iter()
            .zip(v.iter())
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
            .sum::<f64>()
            .sqrt();
        scores.push(cos);
        labels.push(label.as_f64());
        match label {
            PairLabel::Positive => {
                pos_dist.push(-dist);
                pos_cos.push(cos);
            }
            PairLabel::Negative => {
                neg_dist.push(-dist);
                neg_cos.push(cos);
            }
        }
    }
    if pos_cos.is_empty() || neg_cos.is_empty() {
        return Err(Error::empty("embedding evaluation needs both positive and negative pairs"));
    }
    let mean = |v: &[f64]| compensated_sum(v.iter().copied()) / v.len() as f64;
    Ok(EmbeddingStats {
        pearson: pearson(&scores, &labels)?,
        spearman: spearman(&scores, &labels)?,
        euclidean_mean_signed: mean(&pos_dist) - mean(&neg_dist),
        mean_positive_cosine: mean(&pos_cos),
        mean_negative_cosine: mean(&neg_cos),
        pairs: pairs.len(),
    })
}

/// Embeds both sides of every `(text_a, text_b, label)` pair and scores them.
pub fn eval_embeddings<P: EmbeddingProvider + ?Sized>(
    pairs: &[(&str, &str, PairLabel)],
    provider: &P,
) -> Result<EmbeddingStats> {
    let embedded = pairs
        .iter()
        .map(|(a, b, label)| Ok((provider.embed(a)?, provider.embed(b)?, *label)))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<(&[f32], &[f32], PairLabel)> =
        embedded.iter().map(|(u, v, l)| (u.as_slice(), v.as_slice(), *l)).collect();
    pair_stats(&views)
}
