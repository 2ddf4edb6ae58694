use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Method};
use super::metrics::{mrr, recall_at_k, roc_auc, RankingOutcome};
use crate::aggregate::{AggregationMode, AggregationParams};
use crate::baselines::{best_trace_pair, nw_similarity, prefix_match, report_frame_tokens, trace_frame_tokens};
use crate::baselines::{AlignmentScoring, TfIdfDoc, TfIdfIndex};
use crate::corpus::{chronological_split, generate_encoder_pairs, generate_ranker_triplets, hex};
use crate::corpus::{ingest_corpus, Corpus, CrashReport, DayRange, PairSample, SplitSet};
use crate::embed::{embed_passages, pair_stats, train_encoder, BuiltinEncoder, EmbeddingProvider, EmbeddingStats};
use crate::embed::{EncoderConfig, EncoderTrainConfig, VectorStore};
use crate::error::{Error, Result, StageExt};
use crate::preprocess::{preprocess_corpus, Passage, PreprocessConfig, TraceKey};
use crate::ranker::{rank_by_scores, report_embeddings, train_ranker, RankerModel, RankerTrainConfig, TrainingLog};
use crate::util::{compensated_sum, derive_seed};

/// TF-IDF weighting used by the retrieval baseline, for the report provenance.
pub const TFIDF_VARIANT: &str = "raw term counts over cleaned frames, idf = ln(1 + N/(1 + df)), cosine, idf over the whole corpus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub similarity: String,
    pub encoder: Option<String>,
    pub store: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train_days: DayRange,
    pub val_days: DayRange,
    pub test_days: DayRange,
    pub train_reports: usize,
    pub val_reports: usize,
    pub test_reports: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCounts {
    pub test_reports: usize,
    /// Test reports whose bucket holds an earlier report.
    pub duplicate_queries: usize,
    /// Test reports with no earlier report at all, left out of every metric.
    pub without_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSummary {
    pub pairs: usize,
    pub fallbacks: usize,
    pub steps: usize,
    pub skipped_rows: usize,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerSummary {
    pub triplets: usize,
    pub fallbacks: usize,
    pub final_alpha: Option<f64>,
    pub log: TrainingLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub mrr: f64,
    pub rr_at_1: f64,
    pub rr_at_5: f64,
    pub rr_at_10: f64,
    pub roc_auc: Option<f64>,
}

/// Everything measured by one run. Wall-clock timing lives in
/// [`Timing`] so that the report itself depends only on the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub corpus_hash: String,
    pub provenance: Provenance,
    pub split: SplitSummary,
    pub queries: QueryCounts,
    pub metrics: MetricRow,
    pub embedding_before: Option<EmbeddingStats>,
    pub embedding_after: Option<EmbeddingStats>,
    pub encoder_training: Option<EncoderSummary>,
    pub ranker_training: Option<RankerSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format("report", e.to_string()))
    }

    /// SHA-256 of the JSON rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_json()?.as_bytes())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_query_seconds: f64,
    pub queries: usize,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: EvalReport,
    pub outcomes: Vec<RankingOutcome>,
    pub timing: Timing,
}

impl Experiment {
    /// Writes `report.json`, `queries.csv`, `metrics.csv` and `timing.json`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.report.to_json()? + "\n")?;
        write_outcomes_csv(std::fs::File::create(dir.join("queries.csv"))?, &self.outcomes)?;
        write_metrics_table(std::fs::File::create(dir.join("metrics.csv"))?, &[("run".to_string(), &self.report)])?;
        let timing = serde_json::to_string_pretty(&self.timing).map_err(|e| Error::format("timing", e.to_string()))?;
        std::fs::write(dir.join("timing.json"), timing + "\n")?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.into())
}

pub fn write_outcomes_csv<W: Write>(out: W, outcomes: &[RankingOutcome]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer
        .write_record(["query_id", "true_bucket_rank", "top1_score", "has_true_duplicate"])
        .map_err(csv_error)?;
    for o in outcomes {
        writer
            .write_record([
                o.query_id.clone(),
                o.true_bucket_rank.map_or(String::new(), |r| r.to_string()),
                o.top1_score.to_string(),
                o.has_true_duplicate.to_string(),
            ])
            .map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn fmt_metric(x: f64) -> String {
    format!("{x:.4}")
}

/// One row per labelled report, with the settings usually varied between
/// runs (method, trim level, frame count, aggregation).
pub fn write_metrics_table<W: Write>(out: W, rows: &[(String, &EvalReport)]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer
        .write_record(["label", "method", "trim", "top_n", "agg", "mrr", "rr@1", "rr@5", "rr@10", "roc_auc"])
        .map_err(csv_error)?;
    for (label, report) in rows {
        let c = &report.config;
        let m = &report.metrics;
        writer
            .write_record([
                label.clone(),
                c.method.to_string(),
                c.trim.to_string(),
                c.top_n.to_string(),
                c.agg.to_string(),
                fmt_metric(m.mrr),
                fmt_metric(m.rr_at_1),
                fmt_metric(m.rr_at_5),
                fmt_metric(m.rr_at_10),
                m.roc_auc.map_or(String::new(), fmt_metric),
            ])
            .map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Loads the corpus named by the configuration and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    if config.corpus.is_empty() {
        return Err(Error::config("no corpus path configured"));
    }
    let corpus = ingest_corpus(Path::new(&config.corpus), config.language).stage("ingest")?;
    run_experiment_on(&corpus, config)
}

pub fn preprocess_config(config: &ExperimentConfig) -> PreprocessConfig {
    PreprocessConfig {
        top_n: config.top_n,
        trim_level: config.trim,
        include_header: config.include_header,
        ..PreprocessConfig::new(config.language)
    }
}

/// Ranking of one query against the reports that precede it.
enum Scorer {
    Dedupt {
        model: RankerModel,
        embeddings: Vec<Vec<Vec<f64>>>,
    },
    Tfidf {
        index: TfIdfIndex,
        tokens: Vec<Vec<String>>,
    },
    Pairwise {
        method: Method,
        tokens: Vec<Vec<Vec<String>>>,
    },
}

impl Scorer {
    /// Scores for the first `count` corpus reports against report `query`.
    fn scores(&self, query: usize, count: usize) -> Result<Vec<f64>> {
        match self {
            Scorer::Dedupt { model, embeddings } => embeddings[..count]
                .iter()
                .map(|c| model.score_reports(&embeddings[query], c))
                .collect(),
            Scorer::Tfidf { index, tokens } => {
                let mut all = index.scores(&tokens[query])?;
                all.truncate(count);
                Ok(all)
            }
            Scorer::Pairwise { method, tokens } => {
                let scoring = AlignmentScoring::default();
                Ok(tokens[..count]
                    .iter()
                    .map(|c| {
                        let score = match method {
                            Method::Nw => best_trace_pair(&tokens[query], c, |a, b| nw_similarity(a, b, scoring)),
                            _ => best_trace_pair(&tokens[query], c, prefix_match),
                        };
                        score.unwrap_or(0.0)
                    })
                    .collect())
            }
        }
    }
}

struct Embedded {
    store: VectorStore,
    provenance: Provenance,
    before: Option<EmbeddingStats>,
    after: Option<EmbeddingStats>,
    encoder_training: Option<EncoderSummary>,
}

fn store_pair_stats(store: &VectorStore, pairs: &[PairSample]) -> Result<EmbeddingStats> {
    let views = pairs
        .iter()
        .map(|p| Ok((store.require(&p.anchor)?.as_slice(), store.require(&p.other)?.as_slice(), p.label)))
        .collect::<Result<Vec<_>>>()?;
    pair_stats(&views)
}

fn embed_stage(
    corpus: &Corpus,
    config: &ExperimentConfig,
    prep: &PreprocessConfig,
    train_pool: &BTreeSet<String>,
    test_pool: &BTreeSet<String>,
) -> Result<Embedded> {
    let eval_pairs = if config.embedding_eval_negatives > 0 {
        match generate_encoder_pairs(
            corpus,
            test_pool,
            prep,
            config.embedding_eval_negatives,
            derive_seed(config.seed, "embedding-eval"),
        ) {
            Ok(sampled) => sampled.items,
            Err(Error::Empty(why)) => {
                log::warn!("no embedding statistics: {why}");
                Vec::new()
            }
            Err(e) => return Err(e).stage("embedding-eval"),
        }
    } else {
        Vec::new()
    };
    let stats = |store: &VectorStore| -> Result<Option<EmbeddingStats>> {
        if eval_pairs.is_empty() {
            return Ok(None);
        }
        match store_pair_stats(store, &eval_pairs) {
            Ok(stats) => Ok(Some(stats)),
            Err(Error::Empty(why)) => {
                log::warn!("no embedding statistics: {why}");
                Ok(None)
            }
            Err(e) => Err(e).stage("embedding-eval"),
        }
    };

    if !config.store.is_empty() {
        let store = VectorStore::load(Path::new(&config.store)).stage("embed")?;
        for report in corpus.reports() {
            for index in 0..report.traces.len() {
                store.require(&TraceKey::new(report.report_id.as_str(), index)).stage("embed")?;
            }
        }
        return Ok(Embedded {
            provenance: Provenance {
                similarity: "learned ranker over precomputed embeddings".into(),
                encoder: None,
                store: Some(store.provenance().to_string()),
            },
            after: stats(&store)?,
            store,
            before: None,
            encoder_training: None,
        });
    }

    let passages = preprocess_corpus(corpus, prep).stage("preprocess")?;
    let initial = builtin_encoder(config)?;
    let (encoder, before, encoder_training) = if config.encoder_epochs > 0 {
        let before = if eval_pairs.is_empty() {
            None
        } else {
            stats(&embed_passages(&initial, &passages, initial.name()).stage("embed")?)?
        };
        let (encoder, summary) = tune_encoder(initial, corpus, config, train_pool, &passages)?;
        (encoder, before, Some(summary))
    } else {
        (initial, None, None)
    };

    let name = encoder.name() + if encoder_training.is_some() { " tuned" } else { "" };
    let store = embed_passages(&encoder, &passages, name.clone()).stage("embed")?;
    Ok(Embedded {
        provenance: Provenance {
            similarity: "learned ranker over built-in encoder embeddings".into(),
            encoder: Some(name),
            store: None,
        },
        after: stats(&store)?,
        store,
        before,
        encoder_training,
    })
}

/// Untrained built-in encoder with the configured shape.
pub fn builtin_encoder(config: &ExperimentConfig) -> Result<BuiltinEncoder> {
    BuiltinEncoder::new(EncoderConfig {
        dimension: config.dimension,
        hash_buckets: config.hash_buckets,
        seed: derive_seed(config.seed, "encoder-table"),
        ..EncoderConfig::default()
    })
    .stage("embed")
}

/// Fine-tunes `initial` on contrastive pairs sampled from `pool`.
pub fn tune_encoder(
    initial: BuiltinEncoder,
    corpus: &Corpus,
    config: &ExperimentConfig,
    pool: &BTreeSet<String>,
    passages: &[Passage],
) -> Result<(BuiltinEncoder, EncoderSummary)> {
    let prep = preprocess_config(config);
    let pairs = generate_encoder_pairs(
        corpus,
        pool,
        &prep,
        config.negatives_per_anchor,
        derive_seed(config.seed, "encoder-pairs"),
    )
    .stage("sample-pairs")?;
    let texts: BTreeMap<TraceKey, String> = passages.iter().map(|p| (p.source.clone(), p.text.clone())).collect();
    let train_config = EncoderTrainConfig {
        scale: config.scale,
        batch_size: config.encoder_batch_size,
        epochs: config.encoder_epochs,
        learning_rate: config.encoder_learning_rate,
        seed: derive_seed(config.seed, "encoder-train"),
        no_duplicate_buckets_per_batch: true,
    };
    let trained = train_encoder(initial, &pairs.items, &texts, corpus, &train_config).stage("train-encoder")?;
    let summary = EncoderSummary {
        pairs: pairs.items.len(),
        fallbacks: pairs.fallbacks,
        steps: trained.loss_curve.len(),
        skipped_rows: trained.skipped_rows,
        first_loss: trained.loss_curve.first().copied(),
        last_loss: trained.loss_curve.last().copied(),
    };
    Ok((trained.encoder, summary))
}

/// Trains the ranker on triplets from the train split, validating on the
/// validation split.
pub fn fit_ranker(
    corpus: &Corpus,
    store: &VectorStore,
    split: &SplitSet,
    config: &ExperimentConfig,
) -> Result<(RankerModel, RankerSummary)> {
    let prep = preprocess_config(config);
    let triplets = generate_ranker_triplets(
        corpus,
        &split.train,
        &prep,
        config.triplets_per_anchor,
        derive_seed(config.seed, "ranker-triplets"),
    )
    .stage("sample-triplets")?;
    let agg = AggregationParams::new(config.agg, store.dimension(), derive_seed(config.seed, "aggregation"));
    let mut model = RankerModel::new(agg, derive_seed(config.seed, "ranker-init"));
    model.config_hash = config.hash();
    let validation: Vec<String> = split.val.iter().cloned().collect();
    let train_config = RankerTrainConfig {
        batch_size: config.ranker_batch_size,
        learning_rate: config.ranker_learning_rate,
        epochs: config.ranker_epochs,
        seed: derive_seed(config.seed, "ranker-train"),
        patience: config.patience,
        validation_queries: config.validation_queries,
    };
    let (model, log) =
        train_ranker(model, &triplets.items, store, corpus, &validation, &train_config).stage("train-ranker")?;
    let final_alpha = (config.agg == AggregationMode::ParamMaxMean).then(|| model.aggregation().alpha());
    let summary = RankerSummary {
        triplets: triplets.items.len(),
        fallbacks: triplets.fallbacks,
        final_alpha,
        log,
    };
    Ok((model, summary))
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

/// Runs the configured method on an already loaded corpus: split, optional
/// encoder tuning and ranker training on the train window, then ranking of
/// every test report against all reports from earlier days.
pub fn run_experiment_on(corpus: &Corpus, config: &ExperimentConfig) -> Result<Experiment> {
    let prep = preprocess_config(config);
    prep.validate().stage("preprocess")?;
    let split = chronological_split(corpus, config.train_days, config.val_days, config.test_days).stage("split")?;

    let mut report_fields = (None, None, None, None);
    let (scorer, provenance) = match config.method {
        Method::Dedupt => {
            let embedded = embed_stage(corpus, config, &prep, &split.train, &split.test)?;
            let (model, ranker_summary) = fit_ranker(corpus, &embedded.store, &split, config)?;
            report_fields = (
                embedded.before,
                embedded.after,
                embedded.encoder_training,
                Some(ranker_summary),
            );
            let embeddings = corpus
                .reports()
                .iter()
                .map(|r| report_embeddings(&embedded.store, r))
                .collect::<Result<Vec<_>>>()
                .stage("rank")?;
            let mut provenance = embedded.provenance;
            provenance.similarity = format!("{} ({} aggregation)", provenance.similarity, config.agg);
            (Scorer::Dedupt { model, embeddings }, provenance)
        }
        Method::Tfidf => {
            let tokens: Vec<Vec<String>> = corpus.reports().iter().map(|r| report_frame_tokens(r, &prep)).collect();
            let index = TfIdfIndex::build(corpus.reports().iter().zip(&tokens).map(|(r, t)| TfIdfDoc {
                doc_id: r.report_id.clone(),
                bucket_id: r.bucket_id.clone(),
                recency: u64::from(r.timestamp_day),
                tokens: t.clone(),
            }));
            let provenance = Provenance {
                similarity: format!("tf-idf: {TFIDF_VARIANT}"),
                encoder: None,
                store: None,
            };
            (Scorer::Tfidf { index, tokens }, provenance)
        }
        Method::Nw | Method::Prefix => {
            let tokens = corpus
                .reports()
                .iter()
                .map(|r| r.traces.iter().map(|t| trace_frame_tokens(t, &prep)).collect())
                .collect();
            let similarity = if config.method == Method::Nw {
                let s = AlignmentScoring::default();
                format!(
                    "needleman-wunsch over cleaned frames (match {}, mismatch {}, gap {}), best trace pair",
                    s.matched, s.mismatch, s.gap
                )
            } else {
                "longest common frame prefix over cleaned frames, best trace pair".to_string()
            };
            let provenance = Provenance {
                similarity,
                encoder: None,
                store: None,
            };
            (
                Scorer::Pairwise {
                    method: config.method,
                    tokens,
                },
                provenance,
            )
        }
    };

    let mut outcomes = Vec::new();
    let mut seconds = Vec::new();
    let mut without_candidates = 0;
    for (position, query) in corpus.reports().iter().enumerate() {
        if !split.test.contains(&query.report_id) {
            continue;
        }
        let count = corpus.before_day(query.timestamp_day).len();
        let has_true_duplicate = corpus.has_earlier_duplicate(query);
        if count == 0 {
            without_candidates += 1;
            continue;
        }
        let start = Instant::now();
        let scores = scorer.scores(position, count).stage("rank")?;
        let candidates: Vec<(&CrashReport, f64)> = corpus.reports()[..count].iter().zip(scores).collect();
        let ranking = rank_by_scores(query, &candidates).stage("rank")?;
        seconds.push(start.elapsed().as_secs_f64());
        outcomes.push(RankingOutcome {
            query_id: query.report_id.clone(),
            true_bucket_rank: ranking.true_bucket_rank,
            top1_score: ranking.top_score().unwrap_or(f64::NEG_INFINITY),
            has_true_duplicate,
        });
    }

    let labels: Vec<bool> = outcomes.iter().map(|o| o.has_true_duplicate).collect();
    let top_scores: Vec<f64> = outcomes.iter().map(|o| o.top1_score).collect();
    let metrics = MetricRow {
        mrr: mrr(&outcomes).stage("metrics")?,
        rr_at_1: recall_at_k(&outcomes, 1).stage("metrics")?,
        rr_at_5: recall_at_k(&outcomes, 5).stage("metrics")?,
        rr_at_10: recall_at_k(&outcomes, 10).stage("metrics")?,
        roc_auc: roc_auc(&labels, &top_scores).ok(),
    };
    let (embedding_before, embedding_after, encoder_training, ranker_training) = report_fields;
    let report = EvalReport {
        config: config.clone(),
        config_hash: config.hash(),
        corpus_hash: corpus.content_hash(),
        provenance,
        split: SplitSummary {
            train_days: split.train_days,
            val_days: split.val_days,
            test_days: split.test_days,
            train_reports: split.train.len(),
            val_reports: split.val.len(),
            test_reports: split.test.len(),
        },
        queries: QueryCounts {
            test_reports: split.test.len(),
            duplicate_queries: labels.iter().filter(|&&l| l).count(),
            without_candidates,
        },
        metrics,
        embedding_before,
        embedding_after,
        encoder_training,
        ranker_training,
    };
    let timing = Timing {
        median_query_seconds: median(seconds),
        queries: outcomes.len(),
    };
    log::info!(
        "{}: MRR {:.4}, RR@1 {:.4}, RR@10 {:.4} over {} duplicate queries",
        config.method,
        metrics.mrr,
        metrics.rr_at_1,
        metrics.rr_at_10,
        report.queries.duplicate_queries
    );
    Ok(Experiment {
        report,
        outcomes,
        timing,
    })
}

/// Mean and sample standard deviation over a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub runs: Vec<(String, EvalReport)>,
    pub mean: MetricRow,
    pub sd: MetricRow,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(runs: Vec<(String, EvalReport)>) -> Result<Sweep> {
    if runs.is_empty() {
        return Err(Error::empty("no runs to summarize"));
    }
    let column = |f: &dyn Fn(&MetricRow) -> Option<f64>| -> Option<(f64, f64)> {
        let values: Option<Vec<f64>> = runs.iter().map(|(_, r)| f(&r.metrics)).collect();
        values.map(|v| mean_sd(&v))
    };
    let mrr = column(&|m| Some(m.mrr)).expect("always present");
    let rr1 = column(&|m| Some(m.rr_at_1)).expect("always present");
    let rr5 = column(&|m| Some(m.rr_at_5)).expect("always present");
    let rr10 = column(&|m| Some(m.rr_at_10)).expect("always present");
    let auc = column(&|m| m.roc_auc);
    Ok(Sweep {
        mean: MetricRow {
            mrr: mrr.0,
            rr_at_1: rr1.0,
            rr_at_5: rr5.0,
            rr_at_10: rr10.0,
            roc_auc: auc.map(|a| a.0),
        },
        sd: MetricRow {
            mrr: mrr.1,
            rr_at_1: rr1.1,
            rr_at_5: rr5.1,
            rr_at_10: rr10.1,
            roc_auc: auc.map(|a| a.1),
        },
        runs,
    })
}

/// Runs `base` once per `(train, val, test)` day window.
pub fn time_split_sweep(corpus: &Corpus, base: &ExperimentConfig, splits: &[(u32, u32, u32)]) -> Result<Sweep> {
    let mut runs = Vec::with_capacity(splits.len());
    for &(train_days, val_days, test_days) in splits {
        let config = ExperimentConfig {
            train_days,
            val_days,
            test_days,
            ..base.clone()
        };
        let experiment = run_experiment_on(corpus, &config)?;
        runs.push((format!("({train_days}, {test_days}, {val_days})"), experiment.report));
    }
    summarize(runs)
}

impl Sweep {
    /// The per-run rows followed by `mean` and `sd` rows.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer
            .write_record(["split", "mrr", "rr@1", "rr@5", "rr@10", "roc_auc"])
            .map_err(csv_error)?;
        let rows = self
            .runs
            .iter()
            .map(|(label, r)| (label.as_str(), r.metrics))
            .chain([("mean", self.mean), ("sd", self.sd)]);
        for (label, m) in rows {
            writer
                .write_record([
                    label.to_string(),
                    fmt_metric(m.mrr),
                    fmt_metric(m.rr_at_1),
                    fmt_metric(m.rr_at_5),
                    fmt_metric(m.rr_at_10),
                    m.roc_auc.map_or(String::new(), fmt_metric),
                ])
                .map_err(csv_error)?;
        }
        writer.flush()?;
        Ok(())
    }
}
