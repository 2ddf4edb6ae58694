use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CrashReport};
use crate::baselines::{report_frame_tokens, trace_frame_tokens, TfIdfDoc, TfIdfIndex};
use crate::error::{Error, Result};
use crate::preprocess::{PreprocessConfig, TraceKey};
use crate::util::derive_seed;

/// Number of retrieved buckets that negatives are drawn from.
pub const NEGATIVE_POOL_BUCKETS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Positive,
    Negative,
}

impl PairLabel {
    pub fn as_f64(self) -> f64 {
        match self {
            PairLabel::Positive => 1.0,
            PairLabel::Negative => 0.0,
        }
    }
}

/// Two traces labeled by whether their reports share a bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub anchor: TraceKey,
    pub other: TraceKey,
    pub label: PairLabel,
}

/// Report-level ranking example: `positive` shares the anchor's bucket,
/// `negative` does not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled<T> {
    pub items: Vec<T>,
    /// Anchors whose retrieved candidates held no foreign bucket, so a
    /// uniformly random foreign bucket was used instead.
    pub fallbacks: usize,
}

/// Pool-restricted view of the corpus with a TF-IDF index for negatives.
struct Sampler<'a> {
    corpus: &'a Corpus,
    config: &'a PreprocessConfig,
    /// bucket id → pool members in time order
    buckets: BTreeMap<&'a str, Vec<&'a CrashReport>>,
    bucket_ids: Vec<&'a str>,
    index: TfIdfIndex,
}

impl<'a> Sampler<'a> {
    fn new(corpus: &'a Corpus, pool: &BTreeSet<String>, config: &'a PreprocessConfig) -> Result<Self> {
        let mut buckets: BTreeMap<&str, Vec<&CrashReport>> = BTreeMap::new();
        for (bucket_id, bucket) in corpus.buckets() {
            let members: Vec<&CrashReport> = bucket
                .report_ids
                .iter()
                .filter(|id| pool.contains(*id))
                .map(|id| corpus.get(id))
                .collect::<Result<_>>()?;
            if !members.is_empty() {
                buckets.insert(bucket_id.as_str(), members);
            }
        }
        if !buckets.values().any(|m| m.len() >= 2) {
            return Err(Error::empty("no bucket with at least two reports in the sampling pool"));
        }
        if buckets.len() < 2 {
            return Err(Error::empty("negatives need at least two buckets in the sampling pool"));
        }
        let index = TfIdfIndex::build(buckets.values().flatten().map(|report| TfIdfDoc {
            doc_id: report.report_id.clone(),
            bucket_id: report.bucket_id.clone(),
            recency: corpus.position(&report.report_id).unwrap_or(0) as u64,
            tokens: report_frame_tokens(report, config),
        }));
        let bucket_ids = buckets.keys().copied().collect();
        Ok(Sampler {
            corpus,
            config,
            buckets,
            bucket_ids,
            index,
        })
    }

    /// Foreign buckets among the top retrieved ones with a non-zero score.
    fn candidate_buckets(&self, query: &[String], own_bucket: &str) -> Result<Vec<String>> {
        let hits = self.index.rank_buckets(query, NEGATIVE_POOL_BUCKETS + 1, |_| true)?;
        Ok(hits
            .into_iter()
            .filter(|h| h.bucket_id != own_bucket && h.score > 0.0)
            .take(NEGATIVE_POOL_BUCKETS)
            .map(|h| h.bucket_id)
            .collect())
    }

    /// Draws a report from a random candidate bucket, or from a uniformly
    /// random foreign bucket when there are no candidates.
    fn negative_report(
        &self,
        candidates: &[String],
        own_bucket: &str,
        rng: &mut ChaCha8Rng,
        fallbacks: &mut usize,
    ) -> &'a CrashReport {
        let bucket: &str = match candidates.choose(rng) {
            Some(b) => b.as_str(),
            None => {
                *fallbacks += 1;
                let foreign: Vec<&str> = self.bucket_ids.iter().copied().filter(|b| *b != own_bucket).collect();
                foreign.choose(rng).copied().expect("sampler holds at least two buckets")
            }
        };
        let members = &self.buckets[bucket];
        members.choose(rng).copied().expect("pool buckets are non-empty")
    }

    fn multi_member_buckets(&self) -> impl Iterator<Item = (&&'a str, &Vec<&'a CrashReport>)> {
        self.buckets.iter().filter(|(_, m)| m.len() >= 2)
    }
}

fn random_trace(report: &CrashReport, rng: &mut ChaCha8Rng) -> TraceKey {
    TraceKey::new(report.report_id.clone(), rng.gen_range(0..report.traces.len()))
}

/// Contrastive pairs for encoder adaptation, anchored on individual traces.
///
/// Each trace of every report in a bucket with at least two pool members
/// yields `negatives_per_anchor` positive pairs (a trace of another member)
/// interleaved with the same number of negative pairs drawn from the top
/// retrieved foreign buckets.
pub fn generate_encoder_pairs(
    corpus: &Corpus,
    pool: &BTreeSet<String>,
    config: &PreprocessConfig,
    negatives_per_anchor: usize,
    seed: u64,
) -> Result<Sampled<PairSample>> {
    if negatives_per_anchor == 0 {
        return Err(Error::config("negatives_per_anchor must be at least 1"));
    }
    let sampler = Sampler::new(corpus, pool, config)?;
    let mut items = Vec::new();
    let mut fallbacks = 0;
    for (bucket_id, members) in sampler.multi_member_buckets() {
        for report in members {
            let others: Vec<&CrashReport> = members
                .iter()
                .copied()
                .filter(|r| r.report_id != report.report_id)
                .collect();
            for (trace_index, trace) in report.traces.iter().enumerate() {
                let anchor = TraceKey::new(report.report_id.clone(), trace_index);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &anchor.to_string()));
                let query = trace_frame_tokens(trace, sampler.config);
                let candidates = sampler.candidate_buckets(&query, bucket_id)?;

                let mut partners = others.clone();
                partners.shuffle(&mut rng);
                for k in 0..negatives_per_anchor {
                    let positive = partners[k % partners.len()];
                    items.push(PairSample {
                        anchor: anchor.clone(),
                        other: random_trace(positive, &mut rng),
                        label: PairLabel::Positive,
                    });
                    let negative = sampler.negative_report(&candidates, bucket_id, &mut rng, &mut fallbacks);
                    items.push(PairSample {
                        anchor: anchor.clone(),
                        other: random_trace(negative, &mut rng),
                        label: PairLabel::Negative,
                    });
                }
            }
        }
    }
    debug_assert!(items.iter().all(|p| pair_is_consistent(sampler.corpus, p)));
    Ok(Sampled { items, fallbacks })
}

/// Report-level triplets for ranker training: `per_anchor` triplets for every
/// report in a bucket with at least two pool members.
pub fn generate_ranker_triplets(
    corpus: &Corpus,
    pool: &BTreeSet<String>,
    config: &PreprocessConfig,
    per_anchor: usize,
    seed: u64,
) -> Result<Sampled<Triplet>> {
    if per_anchor == 0 {
        return Err(Error::config("per_anchor must be at least 1"));
    }
    let sampler = Sampler::new(corpus, pool, config)?;
    let mut items = Vec::new();
    let mut fallbacks = 0;
    for (bucket_id, members) in sampler.multi_member_buckets() {
        for report in members {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &report.report_id));
            let others: Vec<&CrashReport> = members
                .iter()
                .copied()
                .filter(|r| r.report_id != report.report_id)
                .collect();
            let query = report_frame_tokens(report, sampler.config);
            let candidates = sampler.candidate_buckets(&query, bucket_id)?;
            for _ in 0..per_anchor {
                let positive = others.choose(&mut rng).expect("bucket has another member");
                let negative = sampler.negative_report(&candidates, bucket_id, &mut rng, &mut fallbacks);
                items.push(Triplet {
                    anchor_id: report.report_id.clone(),
                    positive_id: positive.report_id.clone(),
                    negative_id: negative.report_id.clone(),
                });
            }
        }
    }
    Ok(Sampled { items, fallbacks })
}

fn pair_is_consistent(corpus: &Corpus, pair: &PairSample) -> bool {
    let bucket = |key: &TraceKey| corpus.report(&key.report_id).map(|r| r.bucket_id.as_str());
    let same = bucket(&pair.anchor) == bucket(&pair.other);
    same == (pair.label == PairLabel::Positive)
}
