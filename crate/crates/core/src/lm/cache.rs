use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

use super::{LogProb, ScoreError, Scorer, ScorerHandle};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum CacheKey {
    Sequence(String),
    Continuation(String, String),
    TopK(String, usize),
    TokenCount(String),
}

#[derive(Clone, Debug)]
enum CacheValue {
    LogProb(LogProb),
    TopK(Vec<(String, LogProb)>),
    Count(usize),
}

/// Memoizing wrapper with least-recently-used eviction. Errors are never
/// cached.
pub struct CachedScorer {
    inner: ScorerHandle,
    cache: Mutex<LruCache<CacheKey, CacheValue>>,
}

impl CachedScorer {
    pub fn new(inner: ScorerHandle, capacity: NonZeroUsize) -> Self {
        CachedScorer {
            inner,
            cache: Mutex::new(LruCache::new(capacity)),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_or_insert(
        &self,
        key: CacheKey,
        compute: impl FnOnce() -> Result<CacheValue, ScoreError>,
    ) -> Result<CacheValue, ScoreError> {
        if let Some(v) = self.cache.lock().get(&key) {
            return Ok(v.clone());
        }
        // computed outside the lock; concurrent misses on the same key may
        // both reach the inner scorer, which is deterministic
        let value = compute()?;
        self.cache.lock().put(key, value.clone());
        Ok(value)
    }
}

/// Wraps `scorer` in an LRU cache holding up to `capacity` results.
pub fn make_cached(scorer: ScorerHandle, capacity: usize) -> Result<ScorerHandle, ScoreError> {
    let capacity = NonZeroUsize::new(capacity)
        .ok_or_else(|| ScoreError::InvalidArgument("cache capacity must be >= 1".into()))?;
    Ok(Arc::new(CachedScorer::new(scorer, capacity)))
}

fn logprob(v: CacheValue) -> LogProb {
    match v {
        CacheValue::LogProb(l) => l,
        _ => unreachable!("cache key and value kinds always match"),
    }
}

impl Scorer for CachedScorer {
    fn sequence_logprob(&self, text: &str) -> Result<LogProb, ScoreError> {
        self.get_or_insert(CacheKey::Sequence(text.to_string()), || {
            self.inner.sequence_logprob(text).map(CacheValue::LogProb)
        })
        .map(logprob)
    }

    fn continuation_logprob(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<LogProb, ScoreError> {
        let key = CacheKey::Continuation(context.to_string(), continuation.to_string());
        self.get_or_insert(key, || {
            self.inner
                .continuation_logprob(context, continuation)
                .map(CacheValue::LogProb)
        })
        .map(logprob)
    }

    fn next_token_topk(
        &self,
        context: &str,
        k: usize,
    ) -> Result<Vec<(String, LogProb)>, ScoreError> {
        let key = CacheKey::TopK(context.to_string(), k);
        match self.get_or_insert(key, || {
            self.inner.next_token_topk(context, k).map(CacheValue::TopK)
        })? {
            CacheValue::TopK(v) => Ok(v),
            _ => unreachable!("cache key and value kinds always match"),
        }
    }

    fn token_count(&self, text: &str) -> Result<usize, ScoreError> {
        let key = CacheKey::TokenCount(text.to_string());
        match self.get_or_insert(key, || self.inner.token_count(text).map(CacheValue::Count))? {
            CacheValue::Count(n) => Ok(n),
            _ => unreachable!("cache key and value kinds always match"),
        }
    }

    fn append_token(&self, text: &str, token: &str) -> String {
        self.inner.append_token(text, token)
    }

    fn end_token(&self) -> &str {
        self.inner.end_token()
    }
}
