//! Language-model scoring.
//!
//! Everything above this module talks to a [`Scorer`] through surface text.
//! Each backend tokenizes internally, so the search never sees token ids.
//! All log-probabilities are natural-log.

mod cache;
mod ngram;
mod remote;

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Sub};
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use cache::{make_cached, CachedScorer};
pub use ngram::{train_ngram, NGramModel, BOS, EOS, NGRAM_FORMAT, UNK};
pub use remote::{RemoteScorer, RemoteScorerConfig};

/// End-of-text symbol shared by the n-gram backend and the remote protocol.
pub const END_OF_TEXT: &str = "<|endoftext|>";

/// A natural-log probability. Never NaN; `-inf` is the sentinel for an
/// impossible event and is written as `f64::MIN` when serialized.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(0.0);
    pub const NEG_INFINITY: LogProb = LogProb(f64::NEG_INFINITY);

    /// Panics on NaN.
    pub fn new(value: f64) -> Self {
        assert!(!value.is_nan(), "log-probability must not be NaN");
        LogProb(value)
    }

    pub fn from_prob(p: f64) -> Self {
        Self::new(p.ln())
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_neg_infinite(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for LogProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Eq for LogProb {}

impl PartialOrd for LogProb {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LogProb {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl Add for LogProb {
    type Output = LogProb;
    fn add(self, rhs: LogProb) -> LogProb {
        LogProb::new(self.0 + rhs.0)
    }
}

impl Sub for LogProb {
    type Output = f64;
    fn sub(self, rhs: LogProb) -> f64 {
        self.0 - rhs.0
    }
}

impl Sum for LogProb {
    fn sum<I: Iterator<Item = LogProb>>(iter: I) -> LogProb {
        iter.fold(LogProb::ZERO, Add::add)
    }
}

impl Serialize for LogProb {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_neg_infinite() {
            s.serialize_f64(f64::MIN)
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for LogProb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if v.is_nan() {
            return Err(serde::de::Error::custom("log-probability is NaN"));
        }
        Ok(if v == f64::MIN {
            LogProb::NEG_INFINITY
        } else {
            LogProb(v)
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("request to {endpoint} failed after {attempts} attempts: {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("invalid n-gram parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported model format tag {0:?}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A language-model scoring capability.
///
/// Implementations must be deterministic per input and safe to share across
/// threads.
pub trait Scorer: Send + Sync {
    /// `sum_i log P(token_i | BOS, tokens_<i)`; `0.0` for empty text.
    fn sequence_logprob(&self, text: &str) -> Result<LogProb, ScoreError>;

    /// `log P(continuation | context)`, with context and continuation joined
    /// by a single space. Empty continuation scores `0.0`.
    fn continuation_logprob(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<LogProb, ScoreError>;

    /// Top `k` next tokens after `context`, sorted by log-probability
    /// descending and then token text ascending.
    fn next_token_topk(
        &self,
        context: &str,
        k: usize,
    ) -> Result<Vec<(String, LogProb)>, ScoreError>;

    /// Length of `text` in this backend's token units.
    fn token_count(&self, text: &str) -> Result<usize, ScoreError>;

    /// Extends a generation context by one token returned from
    /// [`Scorer::next_token_topk`].
    fn append_token(&self, text: &str, token: &str) -> String {
        join_context(text, token)
    }

    /// Symbol this backend uses to mark the end of a sequence.
    fn end_token(&self) -> &str {
        END_OF_TEXT
    }
}

pub type ScorerHandle = Arc<dyn Scorer>;

/// Context and continuation joined by a single space.
pub fn join_context(context: &str, continuation: &str) -> String {
    let mut s = String::with_capacity(context.len() + continuation.len() + 1);
    s.push_str(context);
    s.push(' ');
    s.push_str(continuation);
    s
}

pub(crate) fn sort_topk(dist: &mut Vec<(String, LogProb)>, k: usize) {
    dist.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    dist.truncate(k);
}
