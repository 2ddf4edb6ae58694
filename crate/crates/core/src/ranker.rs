//! Duplicate classifier: pairwise features, a two-layer scorer, RankNet
//! training and bucket ranking.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{self, AggregationMode, AggregationParams, ReportPair};
use crate::corpus::{Corpus, CrashReport, Triplet};
use crate::embed::VectorStore;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::preprocess::TraceKey;
use crate::util::{derive_seed, dot, sigmoid, softplus};

const MAGIC: &[u8; 4] = b"DTRK";
const VERSION: u16 = 1;
pub const DEFAULT_DROPOUT: f64 = 0.1;

/// `|f_Q − f_S| ‖ (f_Q + f_S)/2 ‖ f_Q ⊙ f_S`.
pub fn build_features(f_q: &[f64], f_s: &[f64]) -> Result<Vec<f64>> {
    if f_q.len() != f_s.len() {
        return Err(Error::DimensionMismatch {
            expected: f_q.len(),
            actual: f_s.len(),
        });
    }
    let mut out = Vec::with_capacity(3 * f_q.len());
    out.extend(f_q.iter().zip(f_s).map(|(q, s)| (q - s).abs()));
    out.extend(f_q.iter().zip(f_s).map(|(q, s)| (q + s) / 2.0));
    out.extend(f_q.iter().zip(f_s).map(|(q, s)| q * s));
    Ok(out)
}

/// RankNet pairwise loss `log(1 + exp(−(pos − neg)))`.
pub fn ranknet_loss(score_pos: f64, score_neg: f64) -> f64 {
    softplus(-(score_pos - score_neg))
}

/// Whether dropout is active, and if so which noise stream feeds it.
pub enum ScoreMode<'a> {
    Infer,
    Train(&'a mut ChaCha8Rng),
}

/// Two-layer scorer over pairwise features plus the shared aggregation
/// parameters. All trainable values live in one flat vector:
/// `layer1 (hidden x input, row-major) ‖ bias1 ‖ layer2 ‖ bias2 ‖ aggregation`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerModel {
    input: usize,
    hidden: usize,
    pub dropout_p: f64,
    params: Vec<f64>,
    agg: AggregationParams,
    /// Hash of the configuration that produced the model.
    pub config_hash: String,
}

/// Intermediate values of one forward pass.
struct Forward {
    x: Vec<f64>,
    mask: Option<Vec<f64>>,
    z1: Vec<f64>,
    score: f64,
}

impl RankerModel {
    /// Embeddings of length `dim`, aggregated per `agg`, scored with a hidden
    /// layer half the feature width. Weights are uniform in `±1/sqrt(fan_in)`.
    pub fn new(agg: AggregationParams, seed: u64) -> Self {
        let input = 3 * agg.output_dim();
        let hidden = input.div_ceil(2).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = 1.0 / (input as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let mut params: Vec<f64> = (0..hidden * input).map(|_| rng.gen_range(-b1..b1)).collect();
        params.extend(std::iter::repeat_n(0.0, hidden));
        params.extend((0..hidden).map(|_| rng.gen_range(-b2..b2)));
        params.push(0.0);
        RankerModel {
            input,
            hidden,
            dropout_p: DEFAULT_DROPOUT,
            params,
            agg,
            config_hash: String::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn aggregation(&self) -> &AggregationParams {
        &self.agg
    }

    pub fn alpha_raw(&self) -> f64 {
        self.agg.alpha_raw()
    }

    fn layer_len(&self) -> usize {
        self.hidden * self.input + 2 * self.hidden + 1
    }

    pub fn w1(&self) -> &[f64] {
        &self.params[..self.hidden * self.input]
    }

    pub fn b1(&self) -> &[f64] {
        let s = self.hidden * self.input;
        &self.params[s..s + self.hidden]
    }

    pub fn w2(&self) -> &[f64] {
        let s = self.hidden * self.input + self.hidden;
        &self.params[s..s + self.hidden]
    }

    pub fn b2(&self) -> f64 {
        self.params[self.layer_len() - 1]
    }

    /// Every trainable value, aggregation parameters last.
    pub fn parameters(&self) -> Vec<f64> {
        let mut all = self.params.clone();
        all.extend_from_slice(self.agg.weights());
        all
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        let n = self.layer_len();
        if values.len() != n + self.agg.weights().len() {
            return Err(Error::DimensionMismatch {
                expected: n + self.agg.weights().len(),
                actual: values.len(),
            });
        }
        self.params.copy_from_slice(&values[..n]);
        self.agg.set_weights(values[n..].to_vec())
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_len() + self.agg.weights().len()
    }

    fn forward(&self, features: &[f64], mode: ScoreMode<'_>) -> Result<Forward> {
        if features.len() != self.input {
            return Err(Error::DimensionMismatch {
                expected: self.input,
                actual: features.len(),
            });
        }
        let (x, mask) = match mode {
            ScoreMode::Infer => (features.to_vec(), None),
            ScoreMode::Train(rng) => {
                let keep = 1.0 - self.dropout_p;
                let mask: Vec<f64> = (0..self.input)
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                (features.iter().zip(&mask).map(|(f, m)| f * m).collect(), Some(mask))
            }
        };
        let w1 = self.w1();
        let b1 = self.b1();
        let z1: Vec<f64> = (0..self.hidden)
            .map(|h| dot(&w1[h * self.input..(h + 1) * self.input], &x) + b1[h])
            .collect();
        let score = z1.iter().zip(self.w2()).map(|(z, w)| z.max(0.0) * w).sum::<f64>() + self.b2();
        Ok(Forward { x, mask, z1, score })
    }

    /// Adds the gradient of `g_score * score` to `grad` (layer part only) and
    /// returns the gradient with respect to the undropped features.
    fn backward(&self, fwd: &Forward, g_score: f64, grad: &mut [f64]) -> Vec<f64> {
        let (input, hidden) = (self.input, self.hidden);
        let w1 = self.w1();
        let w2 = self.w2();
        let b2_at = self.layer_len() - 1;
        let w2_at = hidden * input + hidden;
        let b1_at = hidden * input;
        grad[b2_at] += g_score;
        let mut g_x = vec![0.0; input];
        for h in 0..hidden {
            let a = fwd.z1[h].max(0.0);
            grad[w2_at + h] += g_score * a;
            if fwd.z1[h] <= 0.0 {
                continue;
            }
            let g_z = g_score * w2[h];
            grad[b1_at + h] += g_z;
            let row = &w1[h * input..(h + 1) * input];
            let g_row = &mut grad[h * input..(h + 1) * input];
            for k in 0..input {
                g_row[k] += g_z * fwd.x[k];
                g_x[k] += g_z * row[k];
            }
        }
        if let Some(mask) = &fwd.mask {
            g_x.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        g_x
    }

    /// Score of a query/candidate report pair from their trace embeddings.
    pub fn score_reports(&self, qe: &[Vec<f64>], se: &[Vec<f64>]) -> Result<f64> {
        let pair = aggregate::represent(qe, se, &self.agg)?;
        dup_score(&build_features(&pair.f_q, &pair.f_s)?, self, ScoreMode::Infer)
    }

    fn pair_forward(&self, qe: &[Vec<f64>], se: &[Vec<f64>], mode: ScoreMode<'_>) -> Result<(ReportPair, Forward)> {
        let pair = aggregate::represent(qe, se, &self.agg)?;
        let fwd = self.forward(&build_features(&pair.f_q, &pair.f_s)?, mode)?;
        Ok((pair, fwd))
    }

    /// Accumulates `g_score` times the gradient of one pair's score, layers
    /// first and aggregation last.
    fn pair_backward(
        &self,
        qe: &[Vec<f64>],
        se: &[Vec<f64>],
        pair: &ReportPair,
        fwd: &Forward,
        g_score: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let g_features = self.backward(fwd, g_score, grad);
        let (g_q, g_s) = feature_backward(pair, &g_features);
        let g_agg = aggregate::backward(qe, se, &self.agg, pair, &g_q, &g_s)?;
        let n = self.layer_len();
        for (g, a) in grad[n..].iter_mut().zip(g_agg) {
            *g += a;
        }
        Ok(())
    }

    /// RankNet loss of one triplet and its gradient over
    /// [`parameters`](Self::parameters). With `rng`, dropout is applied.
    pub fn triplet_loss_and_grad(
        &self,
        anchor: &[Vec<f64>],
        positive: &[Vec<f64>],
        negative: &[Vec<f64>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Vec<f64>)> {
        let (pos_pair, pos_fwd) = self.pair_forward(anchor, positive, mode_of(&mut rng))?;
        let (neg_pair, neg_fwd) = self.pair_forward(anchor, negative, mode_of(&mut rng))?;
        let diff = pos_fwd.score - neg_fwd.score;
        let g = -sigmoid(-diff);
        let mut grad = vec![0.0; self.parameter_count()];
        self.pair_backward(anchor, positive, &pos_pair, &pos_fwd, g, &mut grad)?;
        self.pair_backward(anchor, negative, &neg_pair, &neg_fwd, -g, &mut grad)?;
        Ok((ranknet_loss(pos_fwd.score, neg_fwd.score), grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Magic `DTRK`, `u16` version, `u32` input and hidden widths, the
    /// aggregation mode byte, `u32` embedding dim and head count, `f64`
    /// dropout, `u64` parameter count and the parameters as little-endian
    /// `f64` (aggregation weights, including `alpha_raw`, last), then a
    /// `u32`-length-prefixed configuration hash.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.input as u32).to_le_bytes())?;
        out.write_all(&(self.hidden as u32).to_le_bytes())?;
        out.write_all(&[mode_byte(self.agg.mode)])?;
        out.write_all(&(self.agg.dim as u32).to_le_bytes())?;
        out.write_all(&(self.agg.heads as u32).to_le_bytes())?;
        out.write_all(&self.dropout_p.to_le_bytes())?;
        let params = self.parameters();
        out.write_all(&(params.len() as u64).to_le_bytes())?;
        for p in params {
            out.write_all(&p.to_le_bytes())?;
        }
        out.write_all(&(self.config_hash.len() as u32).to_le_bytes())?;
        out.write_all(self.config_hash.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut read = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            input
                .read_exact(&mut buf)
                .map_err(|_| Error::format("ranker checkpoint", "truncated file"))?;
            Ok(buf)
        };
        let u32_at = |b: Vec<u8>| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
        if read(4)? != MAGIC {
            return Err(Error::format("ranker checkpoint", "bad magic bytes"));
        }
        let v = read(2)?;
        if u16::from_le_bytes([v[0], v[1]]) != VERSION {
            return Err(Error::format("ranker checkpoint", "unsupported version"));
        }
        let input_dim = u32_at(read(4)?);
        let hidden = u32_at(read(4)?);
        let mode = mode_from_byte(read(1)?[0])?;
        let dim = u32_at(read(4)?);
        let heads = u32_at(read(4)?);
        let dropout_p = f64::from_le_bytes(read(8)?.try_into().expect("8 bytes"));
        let count = u64::from_le_bytes(read(8)?.try_into().expect("8 bytes")) as usize;
        let agg = AggregationParams::new(mode, dim, 0);
        if agg.heads != heads {
            return Err(Error::format("ranker checkpoint", "head count mismatch"));
        }
        let mut model = RankerModel::new(agg, 0);
        if model.input != input_dim || model.hidden != hidden || model.parameter_count() != count {
            return Err(Error::format("ranker checkpoint", "dimensions disagree"));
        }
        let raw = read(count * 8)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        model.set_parameters(&values)?;
        model.dropout_p = dropout_p;
        let len = u32_at(read(4)?);
        model.config_hash = String::from_utf8(read(len)?)
            .map_err(|_| Error::format("ranker checkpoint", "config hash is not UTF-8"))?;
        Ok(model)
    }
}

fn mode_byte(mode: AggregationMode) -> u8 {
    match mode {
        AggregationMode::Max => 0,
        AggregationMode::Mean => 1,
        AggregationMode::ParamMaxMean => 2,
        AggregationMode::Attention => 3,
    }
}

fn mode_from_byte(b: u8) -> Result<AggregationMode> {
    Ok(match b {
        0 => AggregationMode::Max,
        1 => AggregationMode::Mean,
        2 => AggregationMode::ParamMaxMean,
        3 => AggregationMode::Attention,
        _ => return Err(Error::format("ranker checkpoint", format!("unknown aggregation mode {b}"))),
    })
}

fn mode_of<'a>(rng: &'a mut Option<&mut ChaCha8Rng>) -> ScoreMode<'a> {
    match rng.as_deref_mut() {
        Some(r) => ScoreMode::Train(r),
        None => ScoreMode::Infer,
    }
}

/// Splits a feature gradient back onto `f_q` and `f_s`.
fn feature_backward(pair: &ReportPair, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = pair.f_q.len();
    let mut g_q = vec![0.0; d];
    let mut g_s = vec![0.0; d];
    for k in 0..d {
        let (q, s) = (pair.f_q[k], pair.f_s[k]);
        let sign = match q.partial_cmp(&s) {
            Some(Ordering::Greater) => 1.0,
            Some(Ordering::Less) => -1.0,
            _ => 0.0,
        };
        g_q[k] = g[k] * sign + g[d + k] / 2.0 + g[2 * d + k] * s;
        g_s[k] = -g[k] * sign + g[d + k] / 2.0 + g[2 * d + k] * q;
    }
    (g_q, g_s)
}

/// Layer2(ReLU(Layer1(Dropout(features)))); dropout only in train mode.
pub fn dup_score(features: &[f64], model: &RankerModel, mode: ScoreMode<'_>) -> Result<f64> {
    Ok(model.forward(features, mode)?.score)
}

/// Trace embeddings of a report, in trace order, widened to `f64`.
pub fn report_embeddings(store: &VectorStore, report: &CrashReport) -> Result<Vec<Vec<f64>>> {
    (0..report.traces.len())
        .map(|i| store.require(&TraceKey::new(report.report_id.as_str(), i)).map(|v| v.to_f64()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without a validation MRR improvement before stopping.
    pub patience: usize,
    /// Cap on validation queries per evaluation (earliest first).
    pub validation_queries: usize,
}

impl Default for RankerTrainConfig {
    fn default() -> Self {
        RankerTrainConfig {
            batch_size: 25,
            learning_rate: 1e-4,
            epochs: 20,
            seed: 0,
            patience: 5,
            validation_queries: 200,
        }
    }
}

impl RankerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("ranker batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("ranker learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation_mrr: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub initial_validation_mrr: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains the scorer and aggregation parameters on triplets with RankNet.
///
/// After every epoch the model is scored by MRR over `validation` queries
/// that have an earlier duplicate, ranking all reports from earlier days.
/// The best-scoring weights are returned; training stops once `patience`
/// epochs pass without improvement. With no usable validation queries the
/// final weights are returned.
pub fn train_ranker(
    model: RankerModel,
    triplets: &[Triplet],
    store: &VectorStore,
    corpus: &Corpus,
    validation: &[String],
    config: &RankerTrainConfig,
) -> Result<(RankerModel, TrainingLog)> {
    config.validate()?;
    let mut embeddings: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for t in triplets {
        for id in [&t.anchor_id, &t.positive_id, &t.negative_id] {
            if !embeddings.contains_key(id.as_str()) {
                embeddings.insert(id.as_str(), report_embeddings(store, corpus.get(id)?)?);
            }
        }
    }
    let mut val_queries: Vec<&CrashReport> = validation
        .iter()
        .map(|id| corpus.get(id))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|r| corpus.has_earlier_duplicate(r))
        .collect();
    val_queries.sort_by(|a, b| (a.timestamp_day, &a.report_id).cmp(&(b.timestamp_day, &b.report_id)));
    val_queries.truncate(config.validation_queries);
    let validate = |m: &RankerModel| -> Result<Option<f64>> {
        if val_queries.is_empty() {
            return Ok(None);
        }
        let mut total = 0.0;
        for query in &val_queries {
            let candidates: Vec<&CrashReport> = corpus.before_day(query.timestamp_day).iter().collect();
            let ranking = rank_candidates(query, &candidates, m, store)?;
            total += ranking.true_bucket_rank.map_or(0.0, |r| 1.0 / r as f64);
        }
        Ok(Some(total / val_queries.len() as f64))
    };

    let mut model = model;
    let initial = validate(&model)?;
    let mut log = TrainingLog {
        initial_validation_mrr: initial,
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    if config.epochs == 0 {
        return Ok((model, log));
    }
    if triplets.is_empty() {
        return Err(Error::empty("ranker training needs at least one triplet"));
    }
    let mut best = (initial, model.parameters());
    let mut stale = 0;
    let mut adam = Adam::new(config.learning_rate, model.parameter_count());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "ranker-dropout"));
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("ranker-epoch-{epoch}"))));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; model.parameter_count()];
            for &t in batch {
                let t = &triplets[t];
                let (loss, g) = model.triplet_loss_and_grad(
                    &embeddings[t.anchor_id.as_str()],
                    &embeddings[t.positive_id.as_str()],
                    &embeddings[t.negative_id.as_str()],
                    Some(&mut dropout_rng),
                )?;
                loss_sum += loss;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            let mut params = model.parameters();
            adam.step(&mut params, &grad);
            model.set_parameters(&params)?;
        }
        let val = validate(&model)?;
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / triplets.len() as f64,
            validation_mrr: val,
            alpha: model.aggregation().alpha(),
        });
        log::debug!("ranker epoch {epoch}: loss {:.5}, validation MRR {val:?}", loss_sum / triplets.len() as f64);
        match (val, best.0) {
            (Some(v), Some(b)) if v <= b => {
                stale += 1;
                if stale >= config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
            (Some(_), _) => {
                best = (val, model.parameters());
                log.best_epoch = epoch;
                stale = 0;
            }
            (None, _) => log.best_epoch = epoch,
        }
    }
    if best.0.is_some() {
        model.set_parameters(&best.1)?;
    }
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBucket {
    pub bucket_id: String,
    pub score: f64,
    /// Member with the highest score.
    pub best_report: String,
    /// Day of the bucket's most recent candidate member.
    pub latest_day: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub buckets: Vec<RankedBucket>,
    /// 1-based position of the query's own bucket, if any candidate is in it.
    pub true_bucket_rank: Option<usize>,
}

impl RankingResult {
    pub fn top_score(&self) -> Option<f64> {
        self.buckets.first().map(|b| b.score)
    }
}

/// Groups per-report scores into buckets (bucket score = best member) and
/// orders them by score, then most recent member, then bucket id.
pub fn rank_by_scores(query: &CrashReport, scored: &[(&CrashReport, f64)]) -> Result<RankingResult> {
    if scored.is_empty() {
        return Err(Error::empty("no candidate reports to rank"));
    }
    let mut buckets: BTreeMap<&str, RankedBucket> = BTreeMap::new();
    for (report, score) in scored {
        if !score.is_finite() {
            return Err(Error::config(format!("non-finite score for `{}`", report.report_id)));
        }
        let entry = buckets.entry(report.bucket_id.as_str()).or_insert_with(|| RankedBucket {
            bucket_id: report.bucket_id.clone(),
            score: f64::NEG_INFINITY,
            best_report: report.report_id.clone(),
            latest_day: report.timestamp_day,
        });
        if *score > entry.score || (*score == entry.score && report.report_id < entry.best_report) {
            entry.score = *score;
            entry.best_report = report.report_id.clone();
        }
        entry.latest_day = entry.latest_day.max(report.timestamp_day);
    }
    let mut ranked: Vec<RankedBucket> = buckets.into_values().collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.latest_day.cmp(&a.latest_day))
            .then(a.bucket_id.cmp(&b.bucket_id))
    });
    let true_bucket_rank = ranked.iter().position(|b| b.bucket_id == query.bucket_id).map(|p| p + 1);
    Ok(RankingResult {
        buckets: ranked,
        true_bucket_rank,
    })
}

/// Scores every candidate against the query with the model and ranks buckets.
pub fn rank_candidates(
    query: &CrashReport,
    candidates: &[&CrashReport],
    model: &RankerModel,
    store: &VectorStore,
) -> Result<RankingResult> {
    let qe = report_embeddings(store, query)?;
    let scored = candidates
        .iter()
        .map(|c| Ok((*c, model.score_reports(&qe, &report_embeddings(store, c)?)?)))
        .collect::<Result<Vec<_>>>()?;
    rank_by_scores(query, &scored)
}

/// Top bucket score: the evidence that the query duplicates something.
pub fn unique_score(
    query: &CrashReport,
    candidates: &[&CrashReport],
    model: &RankerModel,
    store: &VectorStore,
) -> Result<f64> {
    let ranking = rank_candidates(query, candidates, model, store)?;
    Ok(ranking.top_score().expect("ranking of a non-empty candidate set"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingVector;
    use crate::trace::{Language, StackFrame, StackTrace};

    fn agg(mode: AggregationMode, dim: usize) -> AggregationParams {
        AggregationParams::new(mode, dim, 1)
    }

    fn random_vectors(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn feature_examples() {
        assert_eq!(build_features(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![1.0, 1.0, 0.5, 0.5, 0.0, 0.0]);
        let f = [0.5, -2.0];
        assert_eq!(build_features(&f, &f).unwrap(), vec![0.0, 0.0, 0.5, -2.0, 0.25, 4.0]);
        assert_eq!(build_features(&[3.0, 1.0], &[-1.0, 2.0]).unwrap(), build_features(&[-1.0, 2.0], &[3.0, 1.0]).unwrap());
        assert!(build_features(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ranknet_values() {
        assert!((ranknet_loss(0.3, 0.3) - std::f64::consts::LN_2).abs() < 1e-9);
        let tiny = ranknet_loss(50.0, 0.0);
        assert!(tiny > 0.0 && (tiny - 1.9287498479639178e-22).abs() < 1e-30);
        assert!((ranknet_loss(0.0, 50.0) - 50.0).abs() < 1e-6);
    }

    #[test]
    fn zero_weights_score_zero() {
        let mut model = RankerModel::new(agg(AggregationMode::Max, 4), 0);
        model.set_parameters(&vec![0.0; model.parameter_count()]).unwrap();
        let features = vec![0.7; model.input_dim()];
        assert_eq!(dup_score(&features, &model, ScoreMode::Infer).unwrap(), 0.0);
        assert!(dup_score(&features[1..], &model, ScoreMode::Infer).is_err());
    }

    #[test]
    fn truncated_identity_sums_leading_features() {
        // f has length 2d (param_max_mean): input 6d, hidden 3d
        let d = 3;
        let mut model = RankerModel::new(agg(AggregationMode::ParamMaxMean, d), 0);
        let (input, hidden) = (model.input_dim(), model.hidden_dim());
        assert_eq!((input, hidden), (6 * d, 3 * d));
        let mut params = vec![0.0; model.parameter_count()];
        for h in 0..hidden {
            params[h * input + h] = 1.0;
        }
        for h in 0..hidden {
            params[hidden * input + hidden + h] = 1.0;
        }
        model.set_parameters(&params).unwrap();
        let features: Vec<f64> = (0..input).map(|k| k as f64 * 0.25).collect();
        let expected: f64 = features[..hidden].iter().sum();
        assert_eq!(dup_score(&features, &model, ScoreMode::Infer).unwrap(), expected);
    }

    #[test]
    fn inference_is_deterministic_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mode in [AggregationMode::Max, AggregationMode::Mean, AggregationMode::ParamMaxMean, AggregationMode::Attention] {
            let model = RankerModel::new(agg(mode, 5), 3);
            let qe = random_vectors(&mut rng, 2, 5);
            let se = random_vectors(&mut rng, 3, 5);
            let a = model.score_reports(&qe, &se).unwrap();
            assert_eq!(a, model.score_reports(&qe, &se).unwrap());
            assert!((a - model.score_reports(&se, &qe).unwrap()).abs() < 1e-12, "{mode}");
        }
    }

    #[test]
    fn single_trace_max_equals_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let max = RankerModel::new(agg(AggregationMode::Max, 4), 9);
        let mut mean = RankerModel::new(agg(AggregationMode::Mean, 4), 9);
        mean.set_parameters(&max.parameters()).unwrap();
        let (q, s) = (random_vectors(&mut rng, 1, 4), random_vectors(&mut rng, 1, 4));
        assert_eq!(max.score_reports(&q, &s).unwrap(), mean.score_reports(&q, &s).unwrap());
    }

    #[test]
    fn dropout_masks_come_from_the_stream() {
        let model = RankerModel::new(agg(AggregationMode::Max, 4), 0);
        let features = vec![1.0; model.input_dim()];
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let x = dup_score(&features, &model, ScoreMode::Train(&mut a)).unwrap();
        assert_eq!(x, dup_score(&features, &model, ScoreMode::Train(&mut b)).unwrap());
        let y = dup_score(&features, &model, ScoreMode::Train(&mut a)).unwrap();
        assert_ne!(x, y);
    }

    fn check_gradient(mode: AggregationMode, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let mut model = RankerModel::new(agg(mode, d), seed);
        let mut params = model.parameters();
        // keep hidden pre-activations away from the ReLU kink
        let n = model.input_dim() * model.hidden_dim();
        for h in 0..model.hidden_dim() {
            params[n + h] = rng.gen_range(0.5..1.0) * if h % 2 == 0 { 1.0 } else { -1.0 };
        }
        if mode == AggregationMode::ParamMaxMean {
            *params.last_mut().unwrap() = rng.gen_range(-1.5..1.5);
        }
        model.set_parameters(&params).unwrap();
        let (a, p, q) = (random_vectors(&mut rng, 2, d), random_vectors(&mut rng, 3, d), random_vectors(&mut rng, 1, d));
        let (_, grad) = model.triplet_loss_and_grad(&a, &p, &q, None).unwrap();
        let loss_at = |values: &[f64]| {
            let mut m = model.clone();
            m.set_parameters(values).unwrap();
            m.triplet_loss_and_grad(&a, &p, &q, None).unwrap().0
        };
        let h = 1e-6;
        for k in 0..params.len() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus[k] += h;
            minus[k] -= h;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let err = (numeric - grad[k]).abs() / numeric.abs().max(grad[k].abs()).max(1e-7);
            assert!(err < 1e-4 || (numeric - grad[k]).abs() < 1e-9, "{mode} param {k}: {numeric} vs {}", grad[k]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            check_gradient(AggregationMode::ParamMaxMean, seed);
            check_gradient(AggregationMode::Attention, seed);
            check_gradient(AggregationMode::Mean, seed);
        }
    }

    #[test]
    fn one_small_step_reduces_triplet_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for i in 0..20 {
            let model = RankerModel::new(agg(AggregationMode::ParamMaxMean, 4), i);
            let (a, p, q) = (random_vectors(&mut rng, 2, 4), random_vectors(&mut rng, 2, 4), random_vectors(&mut rng, 2, 4));
            let (before, grad) = model.triplet_loss_and_grad(&a, &p, &q, None).unwrap();
            let stepped: Vec<f64> = model.parameters().iter().zip(&grad).map(|(w, g)| w - 1e-4 * g).collect();
            let mut next = model.clone();
            next.set_parameters(&stepped).unwrap();
            let after = next.triplet_loss_and_grad(&a, &p, &q, None).unwrap().0;
            assert!(after < before || grad.iter().all(|g| *g == 0.0), "{before} -> {after}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = RankerModel::new(agg(AggregationMode::ParamMaxMean, 4), 3);
        model.config_hash = "abc123".into();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(RankerModel::read_from(buf.as_slice()).unwrap(), model);
        assert!(RankerModel::read_from(&buf[..buf.len() - 3]).is_err());
        buf[0] = 0;
        assert!(RankerModel::read_from(buf.as_slice()).is_err());
    }

    fn report(id: &str, day: u32, bucket: &str) -> CrashReport {
        CrashReport {
            report_id: id.into(),
            timestamp_day: day,
            bucket_id: bucket.into(),
            traces: vec![StackTrace::new(Language::Java, "", vec![StackFrame::new("a.B", "c")])],
        }
    }

    #[test]
    fn bucket_ranking_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let reports: Vec<CrashReport> = (0..20)
                .map(|i| report(&format!("r{i:02}"), rng.gen_range(0..10), &format!("b{}", rng.gen_range(0..6))))
                .collect();
            // coarse scores so ties happen
            let scored: Vec<(&CrashReport, f64)> = reports.iter().map(|r| (r, rng.gen_range(0..4) as f64)).collect();
            let query = report("q", 10, "b3");
            let ranking = rank_by_scores(&query, &scored).unwrap();

            let mut oracle: Vec<(f64, u32, String)> = Vec::new();
            for bucket in scored.iter().map(|(r, _)| r.bucket_id.clone()).collect::<std::collections::BTreeSet<_>>() {
                let members: Vec<&(&CrashReport, f64)> = scored.iter().filter(|(r, _)| r.bucket_id == bucket).collect();
                let best = members.iter().map(|(_, s)| *s).fold(f64::MIN, f64::max);
                let latest = members.iter().map(|(r, _)| r.timestamp_day).max().unwrap();
                oracle.push((best, latest, bucket));
            }
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
            let got: Vec<(f64, u32, String)> =
                ranking.buckets.iter().map(|b| (b.score, b.latest_day, b.bucket_id.clone())).collect();
            assert_eq!(got, oracle);

            let mut reversed = scored.clone();
            reversed.reverse();
            assert_eq!(rank_by_scores(&query, &reversed).unwrap(), ranking);
        }
    }

    #[test]
    fn ranking_edge_cases() {
        let query = report("q", 5, "b1");
        let only = report("r1", 1, "b1");
        let ranking = rank_by_scores(&query, &[(&only, -3.0)]).unwrap();
        assert_eq!(ranking.true_bucket_rank, Some(1));
        assert!(rank_by_scores(&query, &[]).is_err());
        let other = report("r2", 2, "b2");
        let ranking = rank_by_scores(&query, &[(&only, 0.9), (&other, 0.1)]).unwrap();
        assert_eq!(ranking.true_bucket_rank, Some(1));
        assert_eq!(ranking.top_score(), Some(0.9));
    }

    #[test]
    fn missing_embedding_names_the_key() {
        let store = VectorStore::new(2, "");
        let err = report_embeddings(&store, &report("r7", 0, "b")).unwrap_err();
        assert!(err.to_string().contains("r7#0"));
        let mut store = VectorStore::new(2, "");
        store.insert(TraceKey::new("r7", 0), EmbeddingVector(vec![1.0, 0.0])).unwrap();
        assert_eq!(report_embeddings(&store, &report("r7", 0, "b")).unwrap(), vec![vec![1.0, 0.0]]);
    }

    #[test]
    fn orthogonal_candidates_score_below_duplicates() {
        // A max-style model that rewards agreement: score = Σ f_Q ⊙ f_S.
        let d = 3;
        let mut model = RankerModel::new(agg(AggregationMode::Max, d), 0);
        let (input, hidden) = (model.input_dim(), model.hidden_dim());
        let mut params = vec![0.0; model.parameter_count()];
        for h in 0..d {
            params[h * input + 2 * d + h] = 1.0;
            params[hidden * input + hidden + h] = 1.0;
        }
        model.set_parameters(&params).unwrap();
        let mut store = VectorStore::new(d, "");
        let vectors = [("q", [1.0, 0.0, 0.0]), ("dup", [0.9, 0.1, 0.0]), ("o1", [0.0, 1.0, 0.0]), ("o2", [0.0, 0.0, 1.0])];
        for (id, v) in vectors {
            store.insert(TraceKey::new(id, 0), EmbeddingVector(v.to_vec())).unwrap();
        }
        let query = report("q", 9, "b0");
        let (dup, o1, o2) = (report("dup", 1, "b0"), report("o1", 1, "b1"), report("o2", 1, "b2"));
        let unique = unique_score(&query, &[&o1, &o2], &model, &store).unwrap();
        let duplicate = unique_score(&query, &[&dup, &o1], &model, &store).unwrap();
        assert!(unique < duplicate);
        assert_eq!(unique, unique_score(&query, &[&o1, &o2], &model, &store).unwrap());
        let ranking = rank_candidates(&query, &[&o1, &dup, &o2], &model, &store).unwrap();
        assert_eq!(ranking.true_bucket_rank, Some(1));
        assert_eq!(ranking.top_score().unwrap(), ranking.buckets.iter().map(|b| b.score).fold(f64::MIN, f64::max));
    }
}
