//! Report-level representations from per-trace embeddings.
//!
//! A report may carry several traces. For a query/candidate pair the
//! representation is one of: the most similar trace pair (`max`), the mean
//! of each side (`mean`), an α-weighted concatenation of both
//! (`param_max_mean`), or multi-head attention pooling (`attention`).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::cosine_f64;
use crate::error::{Error, Result};
use crate::util::{dot, sigmoid};

pub const DEFAULT_HEADS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Max,
    Mean,
    ParamMaxMean,
    Attention,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMode::Max => "max",
            AggregationMode::Mean => "mean",
            AggregationMode::ParamMaxMean => "pmm",
            AggregationMode::Attention => "attn",
        })
    }
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(AggregationMode::Max),
            "mean" => Ok(AggregationMode::Mean),
            "pmm" | "param_max_mean" => Ok(AggregationMode::ParamMaxMean),
            "attn" | "attention" => Ok(AggregationMode::Attention),
            other => Err(Error::config(format!("unknown aggregation mode `{other}`"))),
        }
    }
}

/// Trainable aggregation state, stored flat so the ranker's optimizer can
/// update it alongside its own weights.
///
/// Layout by mode: `param_max_mean` holds `[alpha_raw]`; `attention` holds
/// `heads` query vectors followed by `heads` row-major `dim x dim` output
/// blocks (the per-head slices of the concat-then-project matrix);
/// `max` and `mean` hold nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationParams {
    pub mode: AggregationMode,
    pub dim: usize,
    pub heads: usize,
    weights: Vec<f64>,
}

impl AggregationParams {
    /// `alpha_raw` starts at 0 (α = 0.5). Attention queries start small and
    /// random so heads can diverge; output blocks start at `I / heads`.
    pub fn new(mode: AggregationMode, dim: usize, seed: u64) -> Self {
        let heads = if mode == AggregationMode::Attention { DEFAULT_HEADS } else { 0 };
        let weights = match mode {
            AggregationMode::Max | AggregationMode::Mean => Vec::new(),
            AggregationMode::ParamMaxMean => vec![0.0],
            AggregationMode::Attention => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let spread = 0.1 / (dim.max(1) as f64).sqrt();
                let mut w: Vec<f64> = (0..heads * dim).map(|_| rng.gen_range(-spread..spread)).collect();
                for _ in 0..heads {
                    let mut block = vec![0.0; dim * dim];
                    for i in 0..dim {
                        block[i * dim + i] = 1.0 / heads as f64;
                    }
                    w.extend(block);
                }
                w
            }
        };
        AggregationParams {
            mode,
            dim,
            heads,
            weights,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: weights.len(),
            });
        }
        self.weights = weights;
        Ok(())
    }

    /// Raw (unsquashed) α; zero for modes without one.
    pub fn alpha_raw(&self) -> f64 {
        match self.mode {
            AggregationMode::ParamMaxMean => self.weights[0],
            _ => 0.0,
        }
    }

    pub fn set_alpha_raw(&mut self, value: f64) {
        if self.mode == AggregationMode::ParamMaxMean {
            self.weights[0] = value;
        }
    }

    /// α in [0, 1].
    pub fn alpha(&self) -> f64 {
        sigmoid(self.alpha_raw())
    }

    pub fn queries(&self) -> &[f64] {
        &self.weights[..self.heads * self.dim]
    }

    pub fn queries_mut(&mut self) -> &mut [f64] {
        let n = self.heads * self.dim;
        &mut self.weights[..n]
    }

    fn block(&self, head: usize) -> &[f64] {
        let start = self.heads * self.dim + head * self.dim * self.dim;
        &self.weights[start..start + self.dim * self.dim]
    }

    /// Length of the representation produced for embeddings of length `dim`.
    pub fn output_dim(&self) -> usize {
        match self.mode {
            AggregationMode::ParamMaxMean => 2 * self.dim,
            _ => self.dim,
        }
    }
}

/// Most similar (query trace, candidate trace) pair by cosine; ties go to
/// the lexicographically smallest `(i, j)`.
pub fn max_pair(qe: &[Vec<f64>], se: &[Vec<f64>]) -> Result<(usize, usize, f64)> {
    if qe.is_empty() || se.is_empty() {
        return Err(Error::empty("max_pair needs traces on both sides"));
    }
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (i, q) in qe.iter().enumerate() {
        for (j, s) in se.iter().enumerate() {
            let sim = cosine_f64(q, s)?;
            if sim > best.2 {
                best = (i, j, sim);
            }
        }
    }
    Ok(best)
}

pub fn mean_pool(e: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = e.first().ok_or_else(|| Error::empty("mean_pool needs at least one vector"))?;
    let mut sum = vec![0.0; first.len()];
    for v in e {
        if v.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                actual: v.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = e.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// `(f_Q, f_S)` with `f_Q = α·QE[i] ‖ (1−α)·mean(QE)`, `(i, j)` from
/// [`max_pair`], and `f_S` built the same way from `SE[j]`.
pub fn param_max_mean(qe: &[Vec<f64>], se: &[Vec<f64>], alpha_raw: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (i, j, _) = max_pair(qe, se)?;
    let alpha = sigmoid(alpha_raw);
    let side = |e: &[Vec<f64>], k: usize| -> Result<Vec<f64>> {
        let mean = mean_pool(e)?;
        Ok(e[k].iter().map(|x| alpha * x).chain(mean.iter().map(|m| (1.0 - alpha) * m)).collect())
    };
    Ok((side(qe, i)?, side(se, j)?))
}

/// Per-head softmax weights over the vectors, `heads x n` row-major.
pub fn attention_weights(e: &[Vec<f64>], params: &AggregationParams) -> Result<Vec<f64>> {
    if params.mode != AggregationMode::Attention {
        return Err(Error::config("attention weights need attention parameters"));
    }
    if e.is_empty() {
        return Err(Error::empty("attention_pool needs at least one vector"));
    }
    let d = params.dim;
    if let Some(v) = e.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: v.len(),
        });
    }
    let mut weights = Vec::with_capacity(params.heads * e.len());
    for h in 0..params.heads {
        let q = &params.queries()[h * d..(h + 1) * d];
        let logits: Vec<f64> = e.iter().map(|v| dot(q, v)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        weights.extend(exps.into_iter().map(|x| x / z));
    }
    Ok(weights)
}

/// `Σ_h P_h Σ_i a_hi e_i`: each head's attention-weighted sum, projected by
/// its output block and summed (concat-then-project).
pub fn attention_pool(e: &[Vec<f64>], params: &AggregationParams) -> Result<Vec<f64>> {
    let weights = attention_weights(e, params)?;
    Ok(attention_forward(e, params, &weights).0)
}

/// Output and per-head pooled vectors.
fn attention_forward(e: &[Vec<f64>], params: &AggregationParams, weights: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = params.dim;
    let n = e.len();
    let mut out = vec![0.0; d];
    let mut pooled_heads = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let mut pooled = vec![0.0; d];
        for (a, v) in weights[h * n..(h + 1) * n].iter().zip(e) {
            for (p, x) in pooled.iter_mut().zip(v) {
                *p += a * x;
            }
        }
        for (o, row) in out.iter_mut().zip(params.block(h).chunks_exact(d)) {
            *o += dot(row, &pooled);
        }
        pooled_heads.push(pooled);
    }
    (out, pooled_heads)
}

/// Representations of a query/candidate report pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportPair {
    pub f_q: Vec<f64>,
    pub f_s: Vec<f64>,
    /// Trace pair chosen by `max_pair`, for the modes that use it.
    pub selected: Option<(usize, usize)>,
}

pub fn represent(qe: &[Vec<f64>], se: &[Vec<f64>], params: &AggregationParams) -> Result<ReportPair> {
    match params.mode {
        AggregationMode::Max => {
            let (i, j, _) = max_pair(qe, se)?;
            Ok(ReportPair {
                f_q: qe[i].clone(),
                f_s: se[j].clone(),
                selected: Some((i, j)),
            })
        }
        AggregationMode::Mean => Ok(ReportPair {
            f_q: mean_pool(qe)?,
            f_s: mean_pool(se)?,
            selected: None,
        }),
        AggregationMode::ParamMaxMean => {
            let (i, j, _) = max_pair(qe, se)?;
            let (f_q, f_s) = param_max_mean(qe, se, params.alpha_raw())?;
            Ok(ReportPair {
                f_q,
                f_s,
                selected: Some((i, j)),
            })
        }
        AggregationMode::Attention => Ok(ReportPair {
            f_q: attention_pool(qe, params)?,
            f_s: attention_pool(se, params)?,
            selected: None,
        }),
    }
}

/// Gradient with respect to `params.weights()` given upstream gradients of
/// `f_q` and `f_s`. The trace pair chosen by `max_pair` is held fixed.
pub fn backward(
    qe: &[Vec<f64>],
    se: &[Vec<f64>],
    params: &AggregationParams,
    pair: &ReportPair,
    g_q: &[f64],
    g_s: &[f64],
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.weights.len()];
    match params.mode {
        AggregationMode::Max | AggregationMode::Mean => {}
        AggregationMode::ParamMaxMean => {
            let (i, j) = pair.selected.ok_or_else(|| Error::config("param_max_mean pair lacks a selection"))?;
            let d = params.dim;
            let side = |e: &[Vec<f64>], k: usize, g: &[f64]| -> Result<f64> {
                let mean = mean_pool(e)?;
                Ok(dot(&g[..d], &e[k]) - dot(&g[d..], &mean))
            };
            let d_alpha = side(qe, i, g_q)? + side(se, j, g_s)?;
            let alpha = params.alpha();
            grad[0] = d_alpha * alpha * (1.0 - alpha);
        }
        AggregationMode::Attention => {
            attention_backward(qe, params, g_q, &mut grad)?;
            attention_backward(se, params, g_s, &mut grad)?;
        }
    }
    Ok(grad)
}

fn attention_backward(e: &[Vec<f64>], params: &AggregationParams, g: &[f64], grad: &mut [f64]) -> Result<()> {
    let d = params.dim;
    let n = e.len();
    let weights = attention_weights(e, params)?;
    let (_, pooled_heads) = attention_forward(e, params, &weights);
    for h in 0..params.heads {
        let block_start = params.heads * d + h * d * d;
        // output block: d out / d P = g ⊗ pooled
        for r in 0..d {
            for c in 0..d {
                grad[block_start + r * d + c] += g[r] * pooled_heads[h][c];
            }
        }
        // back into the pooled vector, then through the softmax
        let block = params.block(h);
        let mut g_pooled = vec![0.0; d];
        for (r, row) in block.chunks_exact(d).enumerate() {
            for (gp, w) in g_pooled.iter_mut().zip(row) {
                *gp += g[r] * w;
            }
        }
        let a = &weights[h * n..(h + 1) * n];
        let g_a: Vec<f64> = e.iter().map(|v| dot(&g_pooled, v)).collect();
        let mean_g: f64 = a.iter().zip(&g_a).map(|(ai, gi)| ai * gi).sum();
        for (i, v) in e.iter().enumerate() {
            let g_logit = a[i] * (g_a[i] - mean_g);
            for (k, x) in v.iter().enumerate() {
                grad[h * d + k] += g_logit * x;
            }
        }
    }
    Ok(())
}
