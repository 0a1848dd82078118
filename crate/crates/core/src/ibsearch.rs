//! Information-bottleneck extractive summarization by iterative deletion.
//!
//! Starting from the full source sentence, the search repeatedly deletes runs
//! of up to `m` consecutive words. A shorter candidate is admitted only when
//! the language model scores it strictly higher than the candidate it came
//! from (pruning), and at each length only the `k` candidates under which the
//! next sentence is most probable are expanded further (relevance). The
//! answer is the most relevant candidate ever admitted.
//!
//! Recon mode swaps the next sentence for the source itself and selects the
//! candidate whose length is closest to a target.

use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lm::{LogProb, ScoreError, Scorer};
use crate::textprep::TokenizedSentence;

pub const DEFAULT_POOL_CAP: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("empty source sentence")]
    EmptySource,
    #[error("target length {target} out of range 1..={len}")]
    TargetOutOfRange { target: usize, len: usize },
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("loss undefined at zero probability")]
    ZeroProbability,
    #[error("invalid loss inputs: {0}")]
    InvalidLossInputs(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchParams {
    /// Candidates expanded at each length.
    pub k: usize,
    /// Longest run of consecutive words removed in one deletion.
    pub m: usize,
    /// Merge candidates with identical kept-index lists.
    pub dedupe: bool,
    /// Upper bound on pool size before low-relevance, already-expanded
    /// candidates are dropped.
    pub pool_cap: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            k: 1,
            m: 3,
            dedupe: true,
            pool_cap: DEFAULT_POOL_CAP,
        }
    }
}

impl SearchParams {
    pub fn new(k: usize, m: usize) -> Self {
        SearchParams {
            k,
            m,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.k < 1 {
            return Err(SearchError::InvalidParams("k must be >= 1".into()));
        }
        if self.m < 1 {
            return Err(SearchError::InvalidParams("m must be >= 1".into()));
        }
        if self.pool_cap < 1 {
            return Err(SearchError::InvalidParams("pool_cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// An extractive hypothesis: the source positions it keeps and its scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub kept: Vec<usize>,
    /// `log p(candidate)`
    pub fluency: LogProb,
    /// `log p(target | candidate)`
    pub relevance: LogProb,
    pub parent_kept: Option<Vec<usize>>,
}

impl Candidate {
    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Relevance descending, then fluency descending, then kept list ascending.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.relevance
        .cmp(&a.relevance)
        .then_with(|| b.fluency.cmp(&a.fluency))
        .then_with(|| a.kept.cmp(&b.kept))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryResult {
    pub summary: TokenizedSentence,
    pub kept: Vec<usize>,
    pub fluency: LogProb,
    pub relevance: LogProb,
    pub pool_size: usize,
    pub candidates_scored: usize,
    /// Candidates evicted by the pool cap.
    pub pool_dropped: usize,
}

/// Everything a search run produced, for callers that inspect the pool.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub pool: Vec<Candidate>,
    /// `(outer-loop length, kept list)` for every expansion, in order.
    pub expansions: Vec<(usize, Vec<usize>)>,
    pub candidates_scored: usize,
    pub pool_dropped: usize,
}

/// Every kept list reachable from `kept` by removing one run of `1..=m`
/// consecutive entries, leaving at least one. Ordered by run length, then
/// start position.
pub fn deletion_children(kept: &[usize], m: usize) -> Vec<Vec<usize>> {
    let len = kept.len();
    let mut out = Vec::new();
    for j in 1..=m.min(len.saturating_sub(1)) {
        for i in 0..=len - j {
            let mut child = Vec::with_capacity(len - j);
            child.extend_from_slice(&kept[..i]);
            child.extend_from_slice(&kept[i + j..]);
            out.push(child);
        }
    }
    out
}

/// Children of `cand` that the language model scores strictly higher than
/// `cand`, as `(kept, fluency)` pairs.
pub fn expand_deletions(
    source: &TokenizedSentence,
    cand: &Candidate,
    m: usize,
    scorer: &dyn Scorer,
) -> Result<Vec<(Vec<usize>, LogProb)>, SearchError> {
    if m < 1 {
        return Err(SearchError::InvalidParams("m must be >= 1".into()));
    }
    let mut out = Vec::new();
    for child in deletion_children(&cand.kept, m) {
        let fluency = scorer.sequence_logprob(&source.render(&child))?;
        if fluency > cand.fluency {
            out.push((child, fluency));
        }
    }
    Ok(out)
}

fn validate_source(source: &TokenizedSentence, params: &SearchParams) -> Result<(), SearchError> {
    if source.is_empty() {
        return Err(SearchError::EmptySource);
    }
    params.validate()
}

/// Runs the candidate-pool search with relevance measured against `target`.
pub fn search_pool(
    source: &TokenizedSentence,
    target: &str,
    params: &SearchParams,
    scorer: &dyn Scorer,
) -> Result<SearchOutcome, SearchError> {
    validate_source(source, params)?;
    let n = source.len();
    let all: Vec<usize> = (0..n).collect();
    let surface = source.render(&all);
    let root = Candidate {
        fluency: scorer.sequence_logprob(&surface)?,
        relevance: scorer.continuation_logprob(&surface, target)?,
        kept: all,
        parent_kept: None,
    };

    let mut buckets: Vec<Vec<Candidate>> = vec![Vec::new(); n + 1];
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    if params.dedupe {
        seen.insert(root.kept.clone());
    }
    buckets[n].push(root);
    let mut pool_size = 1;
    let mut scored = 1;
    let mut dropped = 0;
    let mut expansions = Vec::new();

    for level in (1..=n).rev() {
        buckets[level].sort_by(rank_order);
        let parents: Vec<(Vec<usize>, LogProb)> = buckets[level]
            .iter()
            .take(params.k)
            .map(|c| (c.kept.clone(), c.fluency))
            .collect();

        // distinct child kept lists of this level, scored once each
        let mut batch: Vec<Vec<usize>> = Vec::new();
        let mut batch_index: std::collections::HashMap<Vec<usize>, usize> = Default::default();
        let mut per_parent: Vec<Vec<usize>> = Vec::with_capacity(parents.len());
        for (kept, _) in &parents {
            expansions.push((level, kept.clone()));
            let mut idxs = Vec::new();
            for child in deletion_children(kept, params.m) {
                if params.dedupe && seen.contains(&child) {
                    continue;
                }
                let idx = *batch_index.entry(child.clone()).or_insert_with(|| {
                    batch.push(child);
                    batch.len() - 1
                });
                idxs.push(idx);
            }
            per_parent.push(idxs);
        }
        let fluencies = batch
            .par_iter()
            .map(|kept| scorer.sequence_logprob(&source.render(kept)))
            .collect::<Result<Vec<_>, _>>()?;
        scored += batch.len();

        let mut admitted: Vec<(usize, usize)> = Vec::new(); // (batch idx, parent idx)
        let mut admitted_here: HashSet<usize> = HashSet::new();
        for (p, idxs) in per_parent.iter().enumerate() {
            for &idx in idxs {
                if fluencies[idx] > parents[p].1 && (!params.dedupe || admitted_here.insert(idx)) {
                    admitted.push((idx, p));
                }
            }
        }
        let relevances = admitted
            .par_iter()
            .map(|&(idx, _)| scorer.continuation_logprob(&source.render(&batch[idx]), target))
            .collect::<Result<Vec<_>, _>>()?;

        for (&(idx, p), relevance) in admitted.iter().zip(relevances) {
            let kept = batch[idx].clone();
            if params.dedupe {
                seen.insert(kept.clone());
            }
            let len = kept.len();
            buckets[len].push(Candidate {
                kept,
                fluency: fluencies[idx],
                relevance,
                parent_kept: Some(parents[p].0.clone()),
            });
        }
        pool_size += admitted.len();

        if pool_size > params.pool_cap {
            let removed = enforce_cap(&mut buckets, level, pool_size - params.pool_cap);
            if removed > 0 {
                log::warn!(
                    "candidate pool exceeded {} entries; dropped {removed} expanded candidates",
                    params.pool_cap
                );
            }
            pool_size -= removed;
            dropped += removed;
        }
    }

    let pool: Vec<Candidate> = buckets.into_iter().rev().flatten().collect();
    Ok(SearchOutcome {
        pool,
        expansions,
        candidates_scored: scored,
        pool_dropped: dropped,
    })
}

/// Drops up to `excess` of the least relevant candidates whose length is at
/// least `level` (already past expansion), always keeping the best of them.
fn enforce_cap(buckets: &mut [Vec<Candidate>], level: usize, excess: usize) -> usize {
    let mut done: Vec<(usize, usize)> = Vec::new();
    for (len, bucket) in buckets.iter().enumerate().skip(level) {
        done.extend((0..bucket.len()).map(|i| (len, i)));
    }
    done.sort_by(|&(la, ia), &(lb, ib)| rank_order(&buckets[la][ia], &buckets[lb][ib]));
    let n_drop = excess.min(done.len().saturating_sub(1));
    let mut victims: Vec<(usize, usize)> = done.split_off(done.len() - n_drop);
    victims.sort_unstable_by(|a, b| b.cmp(a));
    for (len, i) in &victims {
        buckets[*len].remove(*i);
    }
    n_drop
}

fn to_result(
    source: &TokenizedSentence,
    best: &Candidate,
    outcome: &SearchOutcome,
) -> SummaryResult {
    let tokens: Vec<String> = best
        .kept
        .iter()
        .map(|&i| source.tokens[i].clone())
        .collect();
    SummaryResult {
        summary: TokenizedSentence::from_tokens(tokens),
        kept: best.kept.clone(),
        fluency: best.fluency,
        relevance: best.relevance,
        pool_size: outcome.pool.len(),
        candidates_scored: outcome.candidates_scored,
        pool_dropped: outcome.pool_dropped,
    }
}

/// Extractive summary of `source` guided by the sentence that follows it.
pub fn summarize_ex(
    source: &TokenizedSentence,
    next: &TokenizedSentence,
    params: &SearchParams,
    scorer: &dyn Scorer,
) -> Result<SummaryResult, SearchError> {
    let outcome = search_pool(source, &next.raw, params, scorer)?;
    let best = outcome
        .pool
        .iter()
        .min_by(|a, b| rank_order(a, b))
        .expect("pool always holds the root");
    Ok(to_result(source, best, &outcome))
}

/// Reconstruction-guided baseline: relevance is `log p(source | candidate)`
/// and the answer is the most relevant candidate among those whose length is
/// closest to `target_len`.
pub fn summarize_recon(
    source: &TokenizedSentence,
    params: &SearchParams,
    scorer: &dyn Scorer,
    target_len: usize,
) -> Result<SummaryResult, SearchError> {
    validate_source(source, params)?;
    if target_len < 1 || target_len > source.len() {
        return Err(SearchError::TargetOutOfRange {
            target: target_len,
            len: source.len(),
        });
    }
    let target = source.render(&(0..source.len()).collect::<Vec<_>>());
    let outcome = search_pool(source, &target, params, scorer)?;
    let best = outcome
        .pool
        .iter()
        .min_by(|a, b| {
            a.len()
                .abs_diff(target_len)
                .cmp(&b.len().abs_diff(target_len))
                .then_with(|| rank_order(a, b))
        })
        .expect("pool always holds the root");
    Ok(to_result(source, best, &outcome))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbLossInputs {
    /// `p(summary)`
    pub p_summary: f64,
    /// `p(next | summary)`
    pub p_next_given_summary: f64,
    pub beta1: f64,
}

/// Single-instance bottleneck loss in nats:
/// `-ln p(s) - beta1 * p(y|s) * p(s) * ln p(y|s)`.
pub fn ib_loss(inputs: &IbLossInputs) -> Result<f64, SearchError> {
    let IbLossInputs {
        p_summary,
        p_next_given_summary,
        beta1,
    } = *inputs;
    for p in [p_summary, p_next_given_summary] {
        if p == 0.0 {
            return Err(SearchError::ZeroProbability);
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(SearchError::InvalidLossInputs(format!(
                "probability {p} outside (0, 1]"
            )));
        }
    }
    if !(beta1 > 0.0 && beta1.is_finite()) {
        return Err(SearchError::InvalidLossInputs(format!(
            "beta1 must be > 0, got {beta1}"
        )));
    }
    let loss =
        -p_summary.ln() - beta1 * p_next_given_summary * p_summary * p_next_given_summary.ln();
    // + 0.0 turns -0.0 into 0.0
    Ok(loss + 0.0)
}
