use crate::error::{Error, Result};
use crate::util::{dot, norm};

/// Gradients of the multiple negatives ranking loss with respect to the raw
/// (unnormalised) anchor and column vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MnrGradient {
    pub anchors: Vec<Vec<f64>>,
    pub columns: Vec<Vec<f64>>,
}

/// Multiple negatives ranking loss with in-batch negatives.
///
/// Row `i` is a softmax over `scale * cos(anchor_i, positive_j)` for all
/// `j`, with `j = i` the correct class; the result is the mean cross-entropy.
pub fn mnr_loss(anchors: &[Vec<f64>], positives: &[Vec<f64>], scale: f64) -> Result<f64> {
    if anchors.len() != positives.len() {
        return Err(Error::DimensionMismatch {
            expected: anchors.len(),
            actual: positives.len(),
        });
    }
    mnr_loss_and_grad(anchors, positives, scale).map(|(loss, _)| loss)
}

/// As [`mnr_loss`] with extra explicit negatives appended as columns shared
/// by every row.
pub fn mnr_loss_with_negatives(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    scale: f64,
) -> Result<f64> {
    if anchors.len() != positives.len() {
        return Err(Error::DimensionMismatch {
            expected: anchors.len(),
            actual: positives.len(),
        });
    }
    let columns: Vec<Vec<f64>> = positives.iter().chain(negatives).cloned().collect();
    mnr_loss_and_grad(anchors, &columns, scale).map(|(loss, _)| loss)
}

/// Loss and gradient. `columns[i]` is the positive for `anchors[i]`; any
/// columns past `anchors.len()` are extra negatives.
pub fn mnr_loss_and_grad(anchors: &[Vec<f64>], columns: &[Vec<f64>], scale: f64) -> Result<(f64, MnrGradient)> {
    let n = anchors.len();
    if n < 2 {
        return Err(Error::empty("multiple negatives ranking needs a batch of at least two rows"));
    }
    if columns.len() < n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: columns.len(),
        });
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::config(format!("scale must be positive, got {scale}")));
    }
    let normalize = |v: &Vec<f64>| -> Result<(Vec<f64>, f64)> {
        let len = norm(v);
        if len == 0.0 || !len.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok((v.iter().map(|x| x / len).collect(), len))
    };
    let a: Vec<(Vec<f64>, f64)> = anchors.iter().map(normalize).collect::<Result<_>>()?;
    let c: Vec<(Vec<f64>, f64)> = columns.iter().map(normalize).collect::<Result<_>>()?;
    let dim = a[0].0.len();
    if a.iter().chain(&c).any(|(v, _)| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: a.iter().chain(&c).map(|(v, _)| v.len()).find(|&l| l != dim).unwrap_or(dim),
        });
    }

    let mut loss = 0.0;
    let mut grad_hat_a = vec![vec![0.0; dim]; n];
    let mut grad_hat_c = vec![vec![0.0; dim]; c.len()];
    for i in 0..n {
        let logits: Vec<f64> = c.iter().map(|(cj, _)| scale * dot(&a[i].0, cj)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - logits[i];
        for (j, logit) in logits.iter().enumerate() {
            let p = (logit - log_z).exp();
            let g = (p - if i == j { 1.0 } else { 0.0 }) / n as f64;
            if g == 0.0 {
                continue;
            }
            for k in 0..dim {
                grad_hat_a[i][k] += g * scale * c[j].0[k];
                grad_hat_c[j][k] += g * scale * a[i].0[k];
            }
        }
    }
    // back through v / |v|: (I - v̂ v̂ᵀ) g / |v|
    let unnormalize = |(hat, len): &(Vec<f64>, f64), g: Vec<f64>| -> Vec<f64> {
        let along = dot(hat, &g);
        g.iter().zip(hat).map(|(gk, hk)| (gk - along * hk) / len).collect()
    };
    let gradient = MnrGradient {
        anchors: a.iter().zip(grad_hat_a).map(|(v, g)| unnormalize(v, g)).collect(),
        columns: c.iter().zip(grad_hat_c).map(|(v, g)| unnormalize(v, g)).collect(),
    };
    Ok((loss / n as f64, gradient))
}
