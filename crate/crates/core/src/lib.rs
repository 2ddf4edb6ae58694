//! Stack-trace crash deduplication.
//!
//! Raw crash text is parsed into frames ([`trace`]), normalised into
//! passages ([`preprocess`]), embedded ([`embed`]), pooled per report
//! ([`aggregate`]) and scored pairwise by a small learned ranker
//! ([`ranker`]). [`baselines`] holds the classic similarity methods and
//! [`eval`] the metrics and experiment driver.

pub mod aggregate;
pub mod baselines;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod optim;
pub mod preprocess;
pub mod ranker;
pub mod trace;
pub mod util;

pub use error::{Error, Result};
