//! Reference similarity methods: frame alignment, prefix matching and TF-IDF
//! retrieval. TF-IDF also supplies hard negatives for pair sampling.

mod align;
mod tfidf;

pub use align::{nw_similarity, prefix_match, AlignmentScoring};
pub use tfidf::{tfidf_rank, BucketHit, TfIdfDoc, TfIdfIndex};

use crate::corpus::CrashReport;
use crate::preprocess::{clean_frame, remove_consecutive_duplicates, PreprocessConfig};
use crate::trace::StackTrace;

/// Cleaned, deduplicated frames of one trace, one token per frame.
pub fn trace_frame_tokens(trace: &StackTrace, config: &PreprocessConfig) -> Vec<String> {
    remove_consecutive_duplicates(trace)
        .frames
        .iter()
        .map(|f| clean_frame(f, config))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Frame tokens of every trace in a report, concatenated.
pub fn report_frame_tokens(report: &CrashReport, config: &PreprocessConfig) -> Vec<String> {
    report
        .traces
        .iter()
        .flat_map(|t| trace_frame_tokens(t, config))
        .collect()
}

/// Report-level similarity for the pairwise baselines: the best score over
/// all trace pairs. Traces with no usable frames are skipped.
pub fn best_trace_pair(
    query: &[Vec<String>],
    candidate: &[Vec<String>],
    similarity: impl Fn(&[String], &[String]) -> crate::Result<f64>,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    for q in query.iter().filter(|t| !t.is_empty()) {
        for c in candidate.iter().filter(|t| !t.is_empty()) {
            if let Ok(score) = similarity(q, c) {
                best = Some(best.map_or(score, |b| b.max(score)));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Language;

    #[test]
    fn frame_tokens_are_whole_cleaned_frames() {
        let trace = StackTrace::from_frame_names(Language::Java, &["a.B.c", "a.B.c", "d.E.f"]);
        let tokens = trace_frame_tokens(&trace, &PreprocessConfig::new(Language::Java));
        assert_eq!(tokens, ["a b c", "d e f"]);
    }

    #[test]
    fn best_pair_over_traces() {
        let q = vec![vec!["x".to_string()], vec!["a".to_string(), "b".to_string()]];
        let c = vec![vec!["a".to_string(), "b".to_string()]];
        let best = best_trace_pair(&q, &c, prefix_match).unwrap();
        assert_eq!(best, 1.0);
        assert_eq!(best_trace_pair(&[], &c, prefix_match), None);
    }
}
