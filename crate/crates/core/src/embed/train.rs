use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::project_with;
use super::loss::mnr_loss_and_grad;
use super::BuiltinEncoder;
use crate::corpus::{Corpus, PairLabel, PairSample};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::preprocess::TraceKey;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrainConfig {
    /// Inverse softmax temperature.
    pub scale: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Keep every batch free of repeated anchor buckets, so in-batch
    /// negatives are true negatives.
    pub no_duplicate_buckets_per_batch: bool,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            scale: 20.0,
            batch_size: 25,
            epochs: 1,
            learning_rate: 2e-5,
            seed: 0,
            no_duplicate_buckets_per_batch: true,
        }
    }
}

impl EncoderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::config("encoder scale must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("encoder batch_size must be at least 2"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("encoder learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub encoder: BuiltinEncoder,
    /// Batch losses in step order.
    pub loss_curve: Vec<f64>,
    /// Rows that never fit a conflict-free batch of two or more.
    pub skipped_rows: usize,
}

/// One training row: anchor, its positive, and optionally an explicit negative.
#[derive(Debug, Clone)]
struct Row {
    anchor: usize,
    positive: usize,
    negative: Option<usize>,
    anchor_bucket: usize,
    negative_bucket: Option<usize>,
}

/// MNR loss of a batch as a function of the projection, given pooled
/// (pre-projection) inputs, and its gradient with respect to the projection.
pub fn projection_loss_and_grad(
    projection: &[f64],
    anchors: &[Vec<f64>],
    columns: &[Vec<f64>],
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let d = anchors.first().map_or(0, Vec::len);
    if projection.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            actual: projection.len(),
        });
    }
    let ea: Vec<Vec<f64>> = anchors.iter().map(|x| project_with(projection, x)).collect();
    let ec: Vec<Vec<f64>> = columns.iter().map(|x| project_with(projection, x)).collect();
    let (loss, grad) = mnr_loss_and_grad(&ea, &ec, scale)?;
    let mut dw = vec![0.0; d * d];
    for (g, x) in grad.anchors.iter().zip(anchors).chain(grad.columns.iter().zip(columns)) {
        for (r, gr) in g.iter().enumerate() {
            let row = &mut dw[r * d..(r + 1) * d];
            for (w, xc) in row.iter_mut().zip(x) {
                *w += gr * xc;
            }
        }
    }
    Ok((loss, dw))
}

/// Fine-tunes the encoder's projection on labelled pairs with the MNR loss.
///
/// Positive pairs become batch rows; each anchor's k-th negative pair is
/// attached to its k-th positive as an extra column. `passages` supplies the
/// text for every referenced trace and `corpus` the bucket labels.
pub fn train_encoder(
    initial: BuiltinEncoder,
    pairs: &[PairSample],
    passages: &BTreeMap<TraceKey, String>,
    corpus: &Corpus,
    config: &EncoderTrainConfig,
) -> Result<TrainedEncoder> {
    config.validate()?;
    if !pairs.iter().any(|p| p.label == PairLabel::Positive) {
        return Err(Error::empty("encoder training needs at least one positive pair"));
    }

    let mut keys: Vec<TraceKey> = Vec::new();
    let mut key_index: HashMap<TraceKey, usize> = HashMap::new();
    let mut index_of = |key: &TraceKey| -> usize {
        *key_index.entry(key.clone()).or_insert_with(|| {
            keys.push(key.clone());
            keys.len() - 1
        })
    };
    let mut bucket_index: HashMap<&str, usize> = HashMap::new();
    let mut bucket_of = |key: &TraceKey| -> Result<usize> {
        let report = corpus.get(&key.report_id)?;
        let next = bucket_index.len();
        Ok(*bucket_index.entry(report.bucket_id.as_str()).or_insert(next))
    };

    // positives and negatives per anchor, anchors in first-seen order
    let mut by_anchor: BTreeMap<&TraceKey, (Vec<&TraceKey>, Vec<&TraceKey>)> = BTreeMap::new();
    let mut anchor_order: Vec<&TraceKey> = Vec::new();
    for pair in pairs {
        let entry = by_anchor.entry(&pair.anchor).or_insert_with(|| {
            anchor_order.push(&pair.anchor);
            (Vec::new(), Vec::new())
        });
        match pair.label {
            PairLabel::Positive => entry.0.push(&pair.other),
            PairLabel::Negative => entry.1.push(&pair.other),
        }
    }
    let mut rows: Vec<Row> = Vec::new();
    for anchor in &anchor_order {
        let (positives, negatives) = &by_anchor[anchor];
        for (k, positive) in positives.iter().enumerate() {
            let negative = negatives.get(k).copied();
            rows.push(Row {
                anchor: index_of(anchor),
                positive: index_of(positive),
                negative: negative.map(&mut index_of),
                anchor_bucket: bucket_of(anchor)?,
                negative_bucket: negative.map(&mut bucket_of).transpose()?,
            });
        }
    }

    let mut encoder = initial;
    let inputs: Vec<Vec<f64>> = keys
        .iter()
        .map(|k| {
            let text = passages.get(k).ok_or_else(|| Error::MissingEmbedding(k.to_string()))?;
            encoder.pooled(text)
        })
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(config.learning_rate, encoder.projection().len());
    let mut loss_curve = Vec::new();
    let mut skipped_rows = 0;
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("encoder-epoch-{epoch}")));
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut rng);
        let (batches, skipped) = plan_batches(&rows, order, config.batch_size, config.no_duplicate_buckets_per_batch);
        skipped_rows += skipped;
        for batch in batches {
            let anchors: Vec<Vec<f64>> = batch.iter().map(|&r| inputs[rows[r].anchor].clone()).collect();
            let mut columns: Vec<Vec<f64>> = batch.iter().map(|&r| inputs[rows[r].positive].clone()).collect();
            columns.extend(batch.iter().filter_map(|&r| rows[r].negative).map(|n| inputs[n].clone()));
            let (loss, grad) = projection_loss_and_grad(encoder.projection(), &anchors, &columns, config.scale)?;
            adam.step(encoder.projection_mut(), &grad);
            loss_curve.push(loss);
        }
        log::debug!(
            "encoder epoch {epoch}: {} steps, last loss {:?}",
            loss_curve.len(),
            loss_curve.last()
        );
    }
    Ok(TrainedEncoder {
        encoder,
        loss_curve,
        skipped_rows,
    })
}

/// Greedy batch assembly in `order`. With `distinct`, a row joins a batch
/// only if its anchor bucket is new to the batch and neither its bucket nor
/// its negative's bucket collides with the batch's anchor or negative
/// buckets; conflicting rows wait for a later batch. Batches of fewer than
/// two rows are dropped and counted.
fn plan_batches(rows: &[Row], order: Vec<usize>, batch_size: usize, distinct: bool) -> (Vec<Vec<usize>>, usize) {
    let mut pending = order;
    let mut batches = Vec::new();
    let mut skipped = 0;
    while !pending.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut anchor_buckets = BTreeSet::new();
        let mut negative_buckets = BTreeSet::new();
        let mut rest = Vec::with_capacity(pending.len());
        for r in pending {
            let row = &rows[r];
            let fits = batch.len() < batch_size
                && (!distinct
                    || (!anchor_buckets.contains(&row.anchor_bucket)
                        && !negative_buckets.contains(&row.anchor_bucket)
                        && row.negative_bucket.is_none_or(|b| !anchor_buckets.contains(&b))));
            if fits {
                anchor_buckets.insert(row.anchor_bucket);
                if let Some(b) = row.negative_bucket {
                    negative_buckets.insert(b);
                }
                batch.push(r);
            } else {
                rest.push(r);
            }
        }
        pending = rest;
        if batch.len() < 2 {
            skipped += batch.len() + pending.len();
            break;
        }
        batches.push(batch);
    }
    (batches, skipped)
}
