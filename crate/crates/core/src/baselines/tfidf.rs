use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};

/// One indexed document: a report rendered as cleaned frame tokens.
#[derive(Debug, Clone)]
pub struct TfIdfDoc {
    pub doc_id: String,
    pub bucket_id: String,
    /// Larger is more recent; used to break score ties between buckets.
    pub recency: u64,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone)]
struct DocMeta {
    doc_id: String,
    bucket_id: String,
    recency: u64,
    norm: f64,
}

/// Inverted index with `idf = ln(1 + N / (1 + df))` and raw term counts.
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    document_frequency: HashMap<String, usize>,
    postings: HashMap<String, Vec<(usize, f64)>>,
    docs: Vec<DocMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketHit {
    pub bucket_id: String,
    pub score: f64,
    /// Highest-scoring member document.
    pub best_doc: String,
}

fn term_counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut counts = BTreeMap::new();
    for token in tokens {
        *counts.entry(token.as_str()).or_insert(0.0) += 1.0;
    }
    counts
}

impl TfIdfIndex {
    pub fn build(docs: impl IntoIterator<Item = TfIdfDoc>) -> Self {
        let docs: Vec<TfIdfDoc> = docs.into_iter().collect();
        let mut document_frequency: HashMap<String, usize> = HashMap::new();
        for doc in &docs {
            for token in term_counts(&doc.tokens).keys() {
                *document_frequency.entry(token.to_string()).or_insert(0) += 1;
            }
        }
        let n_docs = docs.len();
        let idf = |df: usize| (1.0 + n_docs as f64 / (1.0 + df as f64)).ln();

        let mut postings: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
        let mut metas = Vec::with_capacity(n_docs);
        for (i, doc) in docs.into_iter().enumerate() {
            let mut norm_sq = 0.0;
            for (token, tf) in term_counts(&doc.tokens) {
                let weight = tf * idf(document_frequency[token]);
                norm_sq += weight * weight;
                postings.entry(token.to_string()).or_default().push((i, weight));
            }
            metas.push(DocMeta {
                doc_id: doc.doc_id,
                bucket_id: doc.bucket_id,
                recency: doc.recency,
                norm: norm_sq.sqrt(),
            });
        }
        TfIdfIndex {
            document_frequency,
            postings,
            docs: metas,
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn idf(&self, token: &str) -> f64 {
        let df = self.document_frequency.get(token).copied().unwrap_or(0);
        (1.0 + self.docs.len() as f64 / (1.0 + df as f64)).ln()
    }

    /// Cosine similarity of the query against every document, in index order.
    pub fn scores(&self, query: &[String]) -> Result<Vec<f64>> {
        if self.docs.is_empty() {
            return Err(Error::empty("tf-idf index has no documents"));
        }
        let mut scores = vec![0.0; self.docs.len()];
        let mut query_norm_sq = 0.0;
        for (token, tf) in term_counts(query) {
            let weight = tf * self.idf(token);
            query_norm_sq += weight * weight;
            if let Some(list) = self.postings.get(token) {
                for &(doc, doc_weight) in list {
                    scores[doc] += weight * doc_weight;
                }
            }
        }
        let query_norm = query_norm_sq.sqrt();
        for (score, doc) in scores.iter_mut().zip(&self.docs) {
            *score = if query_norm == 0.0 || doc.norm == 0.0 {
                0.0
            } else {
                *score / (query_norm * doc.norm)
            };
        }
        Ok(scores)
    }

    /// Ranks buckets by their best member's cosine, keeping documents accepted
    /// by `filter`. Ties go to the bucket with the more recent member, then to
    /// the smaller bucket id. Returns at most `k` buckets.
    pub fn rank_buckets(&self, query: &[String], k: usize, filter: impl Fn(&str) -> bool) -> Result<Vec<BucketHit>> {
        let scores = self.scores(query)?;
        let mut best: HashMap<&str, (f64, u64, &str)> = HashMap::new();
        for (doc, &score) in self.docs.iter().zip(&scores) {
            if !filter(&doc.doc_id) {
                continue;
            }
            let entry = best.entry(doc.bucket_id.as_str()).or_insert((f64::NEG_INFINITY, 0, ""));
            if score > entry.0 || (score == entry.0 && doc.recency > entry.1) {
                *entry = (score, doc.recency.max(entry.1), doc.doc_id.as_str());
            } else {
                entry.1 = entry.1.max(doc.recency);
            }
        }
        let mut hits: Vec<(&str, (f64, u64, &str))> = best.into_iter().collect();
        hits.sort_by(|a, b| {
            b.1 .0
                .partial_cmp(&a.1 .0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| b.1 .1.cmp(&a.1 .1))
                .then_with(|| a.0.cmp(b.0))
        });
        Ok(hits
            .into_iter()
            .take(k)
            .map(|(bucket, (score, _, doc))| BucketHit {
                bucket_id: bucket.to_string(),
                score,
                best_doc: doc.to_string(),
            })
            .collect())
    }
}

/// Top-`k` buckets for a query over the whole index.
pub fn tfidf_rank(query: &[String], index: &TfIdfIndex, k: usize) -> Result<Vec<BucketHit>> {
    index.rank_buckets(query, k, |_| true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn doc(id: &str, bucket: &str, recency: u64, tokens: &[&str]) -> TfIdfDoc {
        TfIdfDoc {
            doc_id: id.into(),
            bucket_id: bucket.into(),
            recency,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn toks(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_query_ranks_first_with_unit_score() {
        let index = TfIdfIndex::build(vec![
            doc("r1", "A", 0, &["a b", "c d", "e"]),
            doc("r2", "B", 1, &["x", "y", "e"]),
            doc("r3", "C", 2, &["a b", "z"]),
        ]);
        let hits = tfidf_rank(&toks(&["a b", "c d", "e"]), &index, 10).unwrap();
        assert_eq!(hits[0].bucket_id, "A");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        assert_eq!(hits[0].best_doc, "r1");
    }

    #[test]
    fn disjoint_query_scores_zero_and_ties_break_by_recency() {
        let index = TfIdfIndex::build(vec![doc("r1", "A", 5, &["a"]), doc("r2", "B", 9, &["b"]), doc("r3", "C", 9, &["c"])]);
        let hits = tfidf_rank(&toks(&["zzz"]), &index, 10).unwrap();
        assert!(hits.iter().all(|h| h.score == 0.0));
        let order: Vec<_> = hits.iter().map(|h| h.bucket_id.as_str()).collect();
        assert_eq!(order, ["B", "C", "A"]);
    }

    #[test]
    fn empty_index_is_an_error() {
        let index = TfIdfIndex::build(Vec::new());
        assert!(tfidf_rank(&toks(&["a"]), &index, 3).is_err());
    }

    #[test]
    fn idf_formula() {
        let index = TfIdfIndex::build(vec![doc("r1", "A", 0, &["a"]), doc("r2", "A", 0, &["a", "b"])]);
        assert!((index.idf("a") - (1.0f64 + 2.0 / 3.0).ln()).abs() < 1e-15);
        assert!((index.idf("b") - 2.0f64.ln()).abs() < 1e-15);
        assert!((index.idf("unseen") - 3.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_oracle_on_random_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vocab: Vec<String> = (0..15).map(|i| format!("t{i}")).collect();
        let docs: Vec<Vec<String>> = (0..30)
            .map(|_| (0..rng.gen_range(1..8)).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect())
            .collect();
        let index = TfIdfIndex::build(docs.iter().enumerate().map(|(i, t)| TfIdfDoc {
            doc_id: format!("d{i}"),
            bucket_id: format!("b{}", i % 9),
            recency: i as u64,
            tokens: t.clone(),
        }));

        // dense oracle: |vocab| x |docs| count matrix
        let n = docs.len() as f64;
        let count = |d: &[String], t: &str| d.iter().filter(|x| *x == t).count() as f64;
        let idf: Vec<f64> = vocab
            .iter()
            .map(|t| {
                let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
                (1.0 + n / (1.0 + df)).ln()
            })
            .collect();
        let dense = |d: &[String]| -> Vec<f64> { vocab.iter().zip(&idf).map(|(t, w)| count(d, t) * w).collect() };

        for _ in 0..20 {
            let query: Vec<String> = (0..rng.gen_range(1..6)).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
            let q = dense(&query);
            let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            let got = index.scores(&query).unwrap();
            for (d, score) in docs.iter().zip(got) {
                let v = dense(d);
                let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let expected = q.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / (qn * vn);
                assert!((score - expected).abs() < 1e-12, "{score} vs {expected}");
            }
        }
    }

    #[test]
    fn scores_ignore_insertion_order() {
        let a = vec![doc("r1", "A", 0, &["a", "b"]), doc("r2", "B", 1, &["b", "c", "c"]), doc("r3", "C", 2, &["d"])];
        let mut b = a.clone();
        b.reverse();
        let q = toks(&["b", "c"]);
        let ha = tfidf_rank(&q, &TfIdfIndex::build(a), 10).unwrap();
        let hb = tfidf_rank(&q, &TfIdfIndex::build(b), 10).unwrap();
        assert_eq!(ha, hb);
    }
}
