//! Policy reasoning trace (PRT) toolkit.
//!
//! The crate covers the whole pipeline: loading policies and case datasets,
//! generating reasoning traces with an expert model, assessing test cases
//! with a learner model under several prompting strategies, and scoring the
//! results (accuracy, clause citation quality, trace utilization,
//! significance tests and inference cost).

pub mod assess;
pub mod clauses;
pub mod corpus;
pub mod gateway;
pub mod jsonl;
pub mod metrics;
pub mod prompts;
pub mod prtgen;
pub mod sampling;
pub mod select;
pub mod sftexport;
pub mod stats;
pub mod tokenize;

pub use clauses::{ClauseId, ClauseRegistry, Scheme};
pub use corpus::{CaseRecord, Dataset, Policy, Split, Verdict};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `data`.
pub fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}

/// Source of timestamps written into stores and manifests.
///
/// A fixed clock makes repeated runs byte-identical.
#[derive(Debug, Clone, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(chrono::DateTime<chrono::Utc>),
}

impl Clock {
    pub fn now(&self) -> chrono::DateTime<chrono::Utc> {
        match self {
            Clock::System => chrono::Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }

    /// `SOURCE_DATE_EPOCH` wins over the system clock when set.
    pub fn from_env() -> Self {
        std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse::<i64>().ok())
            .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
            .map(Clock::Fixed)
            .unwrap_or(Clock::System)
    }
}
