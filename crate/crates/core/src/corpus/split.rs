use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

/// Half-open interval of day indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRange {
    pub start: u32,
    pub end: u32,
}

impl DayRange {
    pub fn contains(&self, day: u32) -> bool {
        self.start <= day && day < self.end
    }

    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train_days: DayRange,
    pub val_days: DayRange,
    pub test_days: DayRange,
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitSet {
    /// Reports that fall after the test window.
    pub fn out_of_range(&self, corpus: &Corpus) -> usize {
        corpus.len() - self.train.len() - self.val.len() - self.test.len()
    }
}

/// Assigns reports to consecutive train → validation → test windows anchored
/// at the corpus's first day. Windows running past the corpus end shrink the
/// test window.
pub fn chronological_split(corpus: &Corpus, train_days: u32, val_days: u32, test_days: u32) -> Result<SplitSet> {
    if train_days == 0 || val_days == 0 || test_days == 0 {
        return Err(Error::config(format!(
            "split windows must be positive, got ({train_days}, {val_days}, {test_days})"
        )));
    }
    let span = corpus.day_span();
    let train = DayRange { start: 0, end: train_days };
    let val = DayRange {
        start: train.end,
        end: train.end + val_days,
    };
    let mut test = DayRange {
        start: val.end,
        end: val.end + test_days,
    };
    if test.end > span {
        log::warn!(
            "split windows cover {} days but the corpus spans {span}; truncating the test window",
            test.end
        );
        test.end = span.max(test.start);
    }

    let mut split = SplitSet {
        train_days: train,
        val_days: val,
        test_days: test,
        train: BTreeSet::new(),
        val: BTreeSet::new(),
        test: BTreeSet::new(),
    };
    for report in corpus.reports() {
        let day = report.timestamp_day;
        let target = if train.contains(day) {
            &mut split.train
        } else if val.contains(day) {
            &mut split.val
        } else if test.contains(day) {
            &mut split.test
        } else {
            continue;
        };
        target.insert(report.report_id.clone());
    }
    Ok(split)
}
