//! Labeled crash-report corpora: loading, chronological splits, contrastive
//! pair and triplet sampling, and a synthetic generator.

mod ingest;
mod sampling;
mod split;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trace::{Language, StackTrace};

pub use ingest::{convert_public_dump, ingest_corpus, ingest_reader};
pub use sampling::{
    generate_encoder_pairs, generate_ranker_triplets, PairLabel, PairSample, Sampled, Triplet,
};
pub use split::{chronological_split, DayRange, SplitSet};
pub use synth::{synth_corpus, SynthParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashReport {
    pub report_id: String,
    /// Days since the earliest report of the corpus.
    pub timestamp_day: u32,
    pub bucket_id: String,
    pub traces: Vec<StackTrace>,
}

/// Reports that share a duplicate group, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub bucket_id: String,
    pub report_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    language: Language,
    reports: Vec<CrashReport>,
    index: HashMap<String, usize>,
    buckets: BTreeMap<String, Bucket>,
}

/// Headline counts in the shape of the usual dataset statistics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub reports: usize,
    pub buckets: usize,
    /// Reports that are not the first of their bucket.
    pub duplicates: usize,
    /// Percentage of reports carrying more than one stack trace.
    pub multi_trace_pct: f64,
    pub day_span: u32,
}

impl Corpus {
    /// Builds a corpus, ordering reports by (day, id) and grouping buckets.
    pub fn new(language: Language, mut reports: Vec<CrashReport>) -> Result<Self> {
        reports.sort_by(|a, b| {
            a.timestamp_day
                .cmp(&b.timestamp_day)
                .then_with(|| a.report_id.cmp(&b.report_id))
        });
        let mut index = HashMap::with_capacity(reports.len());
        let mut buckets: BTreeMap<String, Bucket> = BTreeMap::new();
        for (i, report) in reports.iter().enumerate() {
            if report.traces.is_empty() {
                return Err(Error::empty(format!("report `{}` has no stack trace", report.report_id)));
            }
            if index.insert(report.report_id.clone(), i).is_some() {
                return Err(Error::DuplicateReport(report.report_id.clone()));
            }
            buckets
                .entry(report.bucket_id.clone())
                .or_insert_with(|| Bucket {
                    bucket_id: report.bucket_id.clone(),
                    report_ids: Vec::new(),
                })
                .report_ids
                .push(report.report_id.clone());
        }
        Ok(Corpus {
            language,
            reports,
            index,
            buckets,
        })
    }

    pub fn language(&self) -> Language {
        self.language
    }

    /// Reports in chronological order.
    pub fn reports(&self) -> &[CrashReport] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn report(&self, id: &str) -> Option<&CrashReport> {
        self.index.get(id).map(|&i| &self.reports[i])
    }

    pub fn get(&self, id: &str) -> Result<&CrashReport> {
        self.report(id).ok_or_else(|| Error::UnknownReport(id.to_string()))
    }

    /// Position of a report in chronological order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn buckets(&self) -> &BTreeMap<String, Bucket> {
        &self.buckets
    }

    pub fn bucket(&self, id: &str) -> Option<&Bucket> {
        self.buckets.get(id)
    }

    /// Reports strictly earlier (by day) than `day`, in chronological order.
    pub fn before_day(&self, day: u32) -> &[CrashReport] {
        let end = self.reports.partition_point(|r| r.timestamp_day < day);
        &self.reports[..end]
    }

    /// Whether the report's bucket holds a report from an earlier day.
    pub fn has_earlier_duplicate(&self, report: &CrashReport) -> bool {
        self.buckets[&report.bucket_id]
            .report_ids
            .first()
            .and_then(|id| self.report(id))
            .is_some_and(|first| first.timestamp_day < report.timestamp_day)
    }

    pub fn day_span(&self) -> u32 {
        self.reports.last().map(|r| r.timestamp_day + 1).unwrap_or(0)
    }

    pub fn stats(&self) -> CorpusStats {
        let multi = self.reports.iter().filter(|r| r.traces.len() > 1).count();
        CorpusStats {
            reports: self.reports.len(),
            buckets: self.buckets.len(),
            duplicates: self.reports.len() - self.buckets.len(),
            multi_trace_pct: if self.reports.is_empty() {
                0.0
            } else {
                100.0 * multi as f64 / self.reports.len() as f64
            },
            day_span: self.day_span(),
        }
    }

    /// SHA-256 over the canonical line-delimited serialization.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        hasher.update(&buf);
        hex(&hasher.finalize())
    }

    /// Writes the corpus in the line-delimited ingest format, traces as text.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for report in &self.reports {
            let record = serde_json::json!({
                "report_id": report.report_id,
                "creation_ts": i64::from(report.timestamp_day) * 86_400,
                "bucket_id": report.bucket_id,
                "traces": report.traces.iter().map(StackTrace::to_text).collect::<Vec<_>>(),
            });
            serde_json::to_writer(&mut out, &record).map_err(|e| Error::format("corpus", e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(file)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn report(id: &str, day: u32, bucket: &str, frames: &[&str]) -> CrashReport {
        CrashReport {
            report_id: id.to_string(),
            timestamp_day: day,
            bucket_id: bucket.to_string(),
            traces: vec![StackTrace::from_frame_names(Language::Java, frames)],
        }
    }

    #[test]
    fn buckets_group_in_time_order() {
        let corpus = Corpus::new(
            Language::Java,
            vec![
                report("c", 5, "B", &["a.b"]),
                report("a", 9, "B", &["a.b"]),
                report("b", 5, "B", &["a.b"]),
            ],
        )
        .unwrap();
        assert_eq!(corpus.buckets().len(), 1);
        assert_eq!(corpus.bucket("B").unwrap().report_ids, ["b", "c", "a"]);
        assert_eq!(corpus.reports()[0].report_id, "b");
        assert_eq!(corpus.stats().duplicates, 2);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = Corpus::new(
            Language::Java,
            vec![report("a", 0, "B", &["x.y"]), report("a", 1, "C", &["x.y"])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateReport(id) if id == "a"));
    }

    #[test]
    fn duplicate_count_matches_bucket_arithmetic() {
        let reports: Vec<_> = (0..10)
            .map(|i| report(&format!("r{i}"), i, &format!("b{}", i % 7), &["a.b"]))
            .collect();
        let stats = Corpus::new(Language::Java, reports).unwrap().stats();
        assert_eq!((stats.reports, stats.buckets, stats.duplicates), (10, 7, 3));
    }
}
