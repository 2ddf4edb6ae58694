use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::AggregationMode;
use crate::corpus::hex;
use crate::error::{Error, Result};
use crate::preprocess::TrimLevel;
use crate::trace::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dedupt,
    Nw,
    Prefix,
    Tfidf,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dedupt => "dedupt",
            Method::Nw => "nw",
            Method::Prefix => "prefix",
            Method::Tfidf => "tfidf",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dedupt" => Ok(Method::Dedupt),
            "nw" | "needleman" | "needleman-wunsch" => Ok(Method::Nw),
            "prefix" => Ok(Method::Prefix),
            "tfidf" | "tf-idf" => Ok(Method::Tfidf),
            other => Err(Error::config(format!("unknown method `{other}`"))),
        }
    }
}

/// Everything `run_experiment` needs. The text form is one `key = value`
/// per line, keys named exactly as the fields; `#` starts a comment and
/// omitted keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Corpus file (line-delimited reports).
    pub corpus: String,
    pub language: Language,
    pub method: Method,
    pub seed: u64,
    pub train_days: u32,
    pub val_days: u32,
    pub test_days: u32,
    pub top_n: usize,
    pub trim: TrimLevel,
    pub include_header: bool,
    pub agg: AggregationMode,
    /// Precomputed vector store; empty means embed with the built-in encoder.
    pub store: String,
    pub dimension: usize,
    pub hash_buckets: usize,
    pub encoder_epochs: usize,
    pub encoder_learning_rate: f64,
    pub encoder_batch_size: usize,
    pub scale: f64,
    pub negatives_per_anchor: usize,
    pub ranker_epochs: usize,
    pub ranker_learning_rate: f64,
    pub ranker_batch_size: usize,
    pub patience: usize,
    pub triplets_per_anchor: usize,
    pub validation_queries: usize,
    /// Held-out pairs per anchor for the embedding statistics; 0 skips them.
    pub embedding_eval_negatives: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: String::new(),
            language: Language::Java,
            method: Method::Dedupt,
            seed: 0,
            train_days: 4200,
            val_days: 140,
            test_days: 700,
            top_n: 10,
            trim: TrimLevel::L0,
            include_header: true,
            agg: AggregationMode::ParamMaxMean,
            store: String::new(),
            dimension: 128,
            hash_buckets: 1 << 15,
            encoder_epochs: 1,
            encoder_learning_rate: 2e-5,
            encoder_batch_size: 25,
            scale: 20.0,
            negatives_per_anchor: 1,
            ranker_epochs: 20,
            ranker_learning_rate: 1e-4,
            ranker_batch_size: 25,
            patience: 5,
            triplets_per_anchor: 4,
            validation_queries: 200,
            embedding_eval_negatives: 1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("bad value `{value}` for `{key}`: {e}")))
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "corpus" => self.corpus = v.to_string(),
            "language" => self.language = parse_value(key, v)?,
            "method" => self.method = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "train_days" => self.train_days = parse_value(key, v)?,
            "val_days" => self.val_days = parse_value(key, v)?,
            "test_days" => self.test_days = parse_value(key, v)?,
            "top_n" => self.top_n = parse_value(key, v)?,
            "trim" => self.trim = parse_value(key, v)?,
            "include_header" => self.include_header = parse_value(key, v)?,
            "agg" => self.agg = parse_value(key, v)?,
            "store" => self.store = v.to_string(),
            "dimension" => self.dimension = parse_value(key, v)?,
            "hash_buckets" => self.hash_buckets = parse_value(key, v)?,
            "encoder_epochs" => self.encoder_epochs = parse_value(key, v)?,
            "encoder_learning_rate" => self.encoder_learning_rate = parse_value(key, v)?,
            "encoder_batch_size" => self.encoder_batch_size = parse_value(key, v)?,
            "scale" => self.scale = parse_value(key, v)?,
            "negatives_per_anchor" => self.negatives_per_anchor = parse_value(key, v)?,
            "ranker_epochs" => self.ranker_epochs = parse_value(key, v)?,
            "ranker_learning_rate" => self.ranker_learning_rate = parse_value(key, v)?,
            "ranker_batch_size" => self.ranker_batch_size = parse_value(key, v)?,
            "patience" => self.patience = parse_value(key, v)?,
            "triplets_per_anchor" => self.triplets_per_anchor = parse_value(key, v)?,
            "validation_queries" => self.validation_queries = parse_value(key, v)?,
            "embedding_eval_negatives" => self.embedding_eval_negatives = parse_value(key, v)?,
            other => return Err(Error::config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
            config
                .set(key, value)
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; [`parse`](Self::parse) reads it back unchanged.
    pub fn to_text(&self) -> String {
        let fields: Vec<(&str, String)> = vec![
            ("corpus", self.corpus.clone()),
            ("language", self.language.to_string()),
            ("method", self.method.to_string()),
            ("seed", self.seed.to_string()),
            ("train_days", self.train_days.to_string()),
            ("val_days", self.val_days.to_string()),
            ("test_days", self.test_days.to_string()),
            ("top_n", self.top_n.to_string()),
            ("trim", self.trim.to_string()),
            ("include_header", self.include_header.to_string()),
            ("agg", self.agg.to_string()),
            ("store", self.store.clone()),
            ("dimension", self.dimension.to_string()),
            ("hash_buckets", self.hash_buckets.to_string()),
            ("encoder_epochs", self.encoder_epochs.to_string()),
            ("encoder_learning_rate", format!("{:?}", self.encoder_learning_rate)),
            ("encoder_batch_size", self.encoder_batch_size.to_string()),
            ("scale", format!("{:?}", self.scale)),
            ("negatives_per_anchor", self.negatives_per_anchor.to_string()),
            ("ranker_epochs", self.ranker_epochs.to_string()),
            ("ranker_learning_rate", format!("{:?}", self.ranker_learning_rate)),
            ("ranker_batch_size", self.ranker_batch_size.to_string()),
            ("patience", self.patience.to_string()),
            ("triplets_per_anchor", self.triplets_per_anchor.to_string()),
            ("validation_queries", self.validation_queries.to_string()),
            ("embedding_eval_negatives", self.embedding_eval_negatives.to_string()),
        ];
        fields.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let config = ExperimentConfig {
            method: Method::Tfidf,
            trim: TrimLevel::L2,
            agg: AggregationMode::Attention,
            encoder_learning_rate: 1.5e-3,
            corpus: "data/reports.jsonl".into(),
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::parse(&config.to_text()).unwrap(), config);
        assert_eq!(config.hash().len(), 64);
        assert_ne!(config.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn comments_defaults_and_errors() {
        let config = ExperimentConfig::parse("# sweep\nmethod = nw  # baseline\n\ntop_n=20\n").unwrap();
        assert_eq!(config.method, Method::Nw);
        assert_eq!(config.top_n, 20);
        assert_eq!(config.seed, 0);
        assert!(ExperimentConfig::parse("colour = blue").unwrap_err().to_string().contains("colour"));
        assert!(ExperimentConfig::parse("top_n = many").is_err());
        assert!(ExperimentConfig::parse("top_n").is_err());
    }
}
