use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dedupt_core::aggregate::AggregationMode;
use dedupt_core::corpus::{chronological_split, convert_public_dump, ingest_corpus, synth_corpus, Corpus, SynthParams};
use dedupt_core::embed::{embed_passages, BuiltinEncoder, EmbeddingProvider, VectorStore};
use dedupt_core::eval::{
    builtin_encoder, fit_ranker, preprocess_config, run_experiment, summarize, tune_encoder, write_metrics_table,
    ExperimentConfig, Method,
};
use dedupt_core::preprocess::{preprocess_corpus, write_passages, TrimLevel};
use dedupt_core::ranker::{rank_candidates, RankerModel};

#[derive(Parser)]
#[command(name = "dedupt", version, about = "Stack-trace crash report deduplication")]
struct Cli {
    /// Experiment configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    method: Option<Method>,
    #[arg(long, global = true)]
    trim: Option<TrimLevel>,
    #[arg(long, global = true)]
    top_n: Option<usize>,
    #[arg(long, global = true)]
    agg: Option<AggregationMode>,
    /// Vector store file (DTVS).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Any other configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file, or convert a public dump with --dump.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        dump: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        buckets: usize,
        #[arg(long, default_value_t = 4)]
        reports_per_bucket: usize,
        #[arg(long, default_value_t = 0.3)]
        mutation: f64,
        #[arg(long, default_value_t = 1000)]
        day_span: u32,
    },
    /// Chronological train/validation/test split.
    Split {
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render passages as JSON lines.
    Preprocess {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the built-in encoder on the train split.
    TrainEncoder {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed every trace into a vector store (written to --store).
    Embed {
        corpus: PathBuf,
        /// Encoder checkpoint; defaults to the untrained built-in encoder.
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Train the ranker on the train split using the vectors in --store.
    TrainRanker {
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured experiment and write its report and tables.
    Evaluate {
        /// Overrides the configured corpus path.
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "eval-out")]
        out_dir: PathBuf,
        /// Extra `train,val,test` day windows; runs once per window and
        /// writes a mean/SD table.
        #[arg(long = "split")]
        splits: Vec<String>,
    },
    /// Rank earlier buckets for one report.
    Query {
        corpus: PathBuf,
        #[arg(long)]
        ranker: PathBuf,
        #[arg(long)]
        report: String,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

impl Cli {
    fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(method) = self.method {
            config.method = method;
        }
        if let Some(trim) = self.trim {
            config.trim = trim;
        }
        if let Some(top_n) = self.top_n {
            config.top_n = top_n;
        }
        if let Some(agg) = self.agg {
            config.agg = agg;
        }
        if let Some(store) = &self.store {
            config.store = store.display().to_string();
        }
        for kv in &self.overrides {
            let (key, value) = kv.split_once('=').with_context(|| format!("`{kv}` is not key=value"))?;
            config.set(key, value)?;
        }
        Ok(config)
    }

    fn store_path(&self) -> Result<&Path> {
        match &self.store {
            Some(path) => Ok(path),
            None => bail!("this command needs --store"),
        }
    }
}

fn load_corpus(path: &Path, config: &ExperimentConfig) -> Result<Corpus> {
    ingest_corpus(path, config.language).with_context(|| format!("loading corpus {}", path.display()))
}

/// Writes to stdout; a reader that went away (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    emit(&serde_json::to_string_pretty(value)?)
}

fn parse_window(s: &str) -> Result<(u32, u32, u32)> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad split `{s}`"))?;
    match parts[..] {
        [train, val, test] => Ok((train, val, test)),
        _ => bail!("split `{s}` needs three day counts: train,val,test"),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut config = cli.experiment_config()?;
    match &cli.command {
        Command::Ingest { input, dump, out } => {
            let corpus = if *dump {
                convert_public_dump(File::open(input)?, config.language)?
            } else {
                load_corpus(input, &config)?
            };
            if let Some(out) = out {
                corpus.save(out)?;
            }
            print_json(&corpus.stats())?;
        }
        Command::Synth {
            out,
            buckets,
            reports_per_bucket,
            mutation,
            day_span,
        } => {
            let defaults = SynthParams::default();
            let params = SynthParams {
                buckets: *buckets,
                reports_per_bucket: *reports_per_bucket,
                mutation_rate: *mutation,
                day_span: *day_span,
                seed: cli.seed.unwrap_or(defaults.seed),
                ..defaults
            };
            let corpus = synth_corpus(&params)?;
            corpus.save(out)?;
            print_json(&corpus.stats())?;
        }
        Command::Split { corpus, out } => {
            let corpus = load_corpus(corpus, &config)?;
            let split = chronological_split(&corpus, config.train_days, config.val_days, config.test_days)?;
            match out {
                Some(out) => serde_json::to_writer_pretty(BufWriter::new(File::create(out)?), &split)?,
                None => emit(&format!(
                    "train {} val {} test {} out-of-range {}",
                    split.train.len(),
                    split.val.len(),
                    split.test.len(),
                    split.out_of_range(&corpus)
                ))?,
            }
        }
        Command::Preprocess { corpus, out } => {
            let corpus = load_corpus(corpus, &config)?;
            let passages = preprocess_corpus(&corpus, &preprocess_config(&config))?;
            let mut writer = BufWriter::new(File::create(out)?);
            write_passages(&mut writer, &passages)?;
            writer.flush()?;
            eprintln!("{} passages", passages.len());
        }
        Command::TrainEncoder { corpus, out } => {
            let corpus = load_corpus(corpus, &config)?;
            let split = chronological_split(&corpus, config.train_days, config.val_days, config.test_days)?;
            let passages = preprocess_corpus(&corpus, &preprocess_config(&config))?;
            let (encoder, summary) = tune_encoder(builtin_encoder(&config)?, &corpus, &config, &split.train, &passages)?;
            encoder.save(out)?;
            print_json(&summary)?;
        }
        Command::Embed { corpus, encoder } => {
            let out = cli.store_path()?;
            let corpus = load_corpus(corpus, &config)?;
            let encoder = match encoder {
                Some(path) => BuiltinEncoder::load(path)?,
                None => builtin_encoder(&config)?,
            };
            let passages = preprocess_corpus(&corpus, &preprocess_config(&config))?;
            let store = embed_passages(&encoder, &passages, encoder.name())?;
            store.save(out)?;
            eprintln!("{} vectors of dimension {}", store.len(), store.dimension());
        }
        Command::TrainRanker { corpus, out } => {
            let store = VectorStore::load(cli.store_path()?)?;
            let corpus = load_corpus(corpus, &config)?;
            let split = chronological_split(&corpus, config.train_days, config.val_days, config.test_days)?;
            let (model, summary) = fit_ranker(&corpus, &store, &split, &config)?;
            model.save(out)?;
            print_json(&summary)?;
        }
        Command::Evaluate { corpus, out_dir, splits } => {
            if let Some(corpus) = corpus {
                config.corpus = corpus.display().to_string();
            }
            let experiment = run_experiment(&config)?;
            experiment.write_outputs(out_dir)?;
            if !splits.is_empty() {
                let mut runs = vec![(
                    format!("({}, {}, {})", config.train_days, config.test_days, config.val_days),
                    experiment.report.clone(),
                )];
                for window in splits {
                    let (train_days, val_days, test_days) = parse_window(window)?;
                    let windowed = ExperimentConfig {
                        train_days,
                        val_days,
                        test_days,
                        ..config.clone()
                    };
                    runs.push((format!("({train_days}, {test_days}, {val_days})"), run_experiment(&windowed)?.report));
                }
                let sweep = summarize(runs)?;
                sweep.write_table(File::create(out_dir.join("splits.csv"))?)?;
                let rows: Vec<(String, &_)> = sweep.runs.iter().map(|(l, r)| (l.clone(), r)).collect();
                write_metrics_table(File::create(out_dir.join("split_metrics.csv"))?, &rows)?;
            }
            emit(&experiment.report.to_json()?)?;
        }
        Command::Query {
            corpus,
            ranker,
            report,
            top,
        } => {
            let store = VectorStore::load(cli.store_path()?)?;
            let model = RankerModel::load(ranker)?;
            let corpus = load_corpus(corpus, &config)?;
            let query = corpus.get(report)?;
            let candidates: Vec<_> = corpus.before_day(query.timestamp_day).iter().collect();
            if candidates.is_empty() {
                bail!("report `{report}` has no earlier reports to compare against");
            }
            let ranking = rank_candidates(query, &candidates, &model, &store)?;
            let mut table = String::from("rank\tbucket\tscore\tbest_report");
            for (i, bucket) in ranking.buckets.iter().take(*top).enumerate() {
                table += &format!("\n{}\t{}\t{:.6}\t{}", i + 1, bucket.bucket_id, bucket.score, bucket.best_report);
            }
            emit(&table)?;
            match ranking.true_bucket_rank {
                Some(rank) => eprintln!("true bucket {} at rank {rank}", query.bucket_id),
                None => eprintln!("true bucket {} has no earlier member", query.bucket_id),
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
