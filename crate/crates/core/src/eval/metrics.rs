use serde::{Deserialize, Serialize};

use crate::embed::fractional_ranks;
use crate::error::{Error, Result};

/// Result of ranking one query report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingOutcome {
    pub query_id: String,
    /// 1-based rank of the query's true bucket among the candidates.
    pub true_bucket_rank: Option<usize>,
    pub top1_score: f64,
    /// The query's bucket holds an earlier report.
    pub has_true_duplicate: bool,
}

fn duplicate_ranks(outcomes: &[RankingOutcome]) -> Result<Vec<Option<usize>>> {
    let ranks: Vec<Option<usize>> = outcomes
        .iter()
        .filter(|o| o.has_true_duplicate)
        .map(|o| o.true_bucket_rank)
        .collect();
    if ranks.is_empty() {
        return Err(Error::empty("no duplicate queries to score"));
    }
    Ok(ranks)
}

/// Mean reciprocal rank over duplicate queries; an absent rank counts 0.
pub fn mrr(outcomes: &[RankingOutcome]) -> Result<f64> {
    let ranks = duplicate_ranks(outcomes)?;
    Ok(mean_reciprocal(ranks.iter().flatten().copied(), ranks.len()))
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let v = s - a;
    (s, (a - (s - v)) + (b - v))
}

/// `Σ 1/r / n` in double-double arithmetic, rounded once at the end, so the
/// result is the nearest double to the exact rational.
fn mean_reciprocal(ranks: impl Iterator<Item = usize>, n: usize) -> f64 {
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for r in ranks {
        let r = r as f64;
        let q = 1.0 / r;
        let q_lo = (-q).mul_add(r, 1.0) / r;
        let (s, e) = two_sum(hi, q);
        hi = s;
        lo += e + q_lo;
    }
    let (sum, err) = two_sum(hi, lo);
    let n = n as f64;
    let q = sum / n;
    q + ((-q).mul_add(n, sum) + err) / n
}

/// Fraction of duplicate queries whose true bucket is within the top `k`.
pub fn recall_at_k(outcomes: &[RankingOutcome], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("recall_at_k needs k >= 1"));
    }
    let ranks = duplicate_ranks(outcomes)?;
    let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mann–Whitney AUC: the chance a positive outscores a negative, ties half.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::empty("ROC-AUC needs both positive and negative examples"));
    }
    let ranks = fractional_ranks(scores);
    let rank_sum: f64 = labels.iter().zip(&ranks).filter(|(l, _)| **l).map(|(_, r)| r).sum();
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcomes(ranks: &[Option<usize>]) -> Vec<RankingOutcome> {
        ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| RankingOutcome {
                query_id: format!("q{i}"),
                true_bucket_rank: r,
                top1_score: 0.0,
                has_true_duplicate: true,
            })
            .collect()
    }

    #[test]
    fn mrr_examples() {
        let o = outcomes(&[Some(1), Some(2), Some(4)]);
        assert!((mrr(&o).unwrap() - 0.58333333).abs() < 1e-8);
        assert_eq!(mrr(&outcomes(&[Some(1); 4])).unwrap(), 1.0);
        assert_eq!(mrr(&outcomes(&[None, Some(1)])).unwrap(), 0.5);
        assert!(mrr(&[]).is_err());
    }

    #[test]
    fn unique_queries_are_ignored() {
        let mut o = outcomes(&[Some(2)]);
        o.push(RankingOutcome {
            query_id: "u".into(),
            true_bucket_rank: None,
            top1_score: 0.3,
            has_true_duplicate: false,
        });
        assert_eq!(mrr(&o).unwrap(), 0.5);
        assert_eq!(recall_at_k(&o, 2).unwrap(), 1.0);
    }

    #[test]
    fn recall_examples() {
        let o = outcomes(&[Some(1), Some(3)]);
        assert_eq!(recall_at_k(&o, 1).unwrap(), 0.5);
        assert_eq!(recall_at_k(&o, 3).unwrap(), 1.0);
        assert!(recall_at_k(&o, 0).is_err());
    }

    #[test]
    fn auc_examples() {
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&labels, &[0.9, 0.8, 0.7, 0.85]).unwrap(), 0.75);
        assert_eq!(roc_auc(&labels, &[0.9, 0.8, 0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(roc_auc(&labels, &[0.5; 4]).unwrap(), 0.5);
        assert!(roc_auc(&[true, true], &[0.1, 0.2]).is_err());
    }
}
