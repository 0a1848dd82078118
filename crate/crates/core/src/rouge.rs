//! ROUGE-1/2/L with multiple references.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::selfsup::order_free_mean;
use crate::textprep::{detokenize, tokens_of};

pub const DUC_BYTE_CAP: usize = 75;

#[derive(Debug, thiserror::Error)]
pub enum RougeError {
    #[error("at least one reference is required")]
    NoReferences,
    #[error("n must be >= 1")]
    InvalidN,
    #[error("{outputs} outputs but {references} reference sets")]
    LengthMismatch { outputs: usize, references: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("byte cap must be > 0")]
    InvalidByteCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }

    fn from_counts(hits: usize, cand_total: usize, ref_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self::from_pr(ratio(hits, cand_total), ratio(hits, ref_total))
    }

    fn scaled(self, by: f64) -> Self {
        RougeScore {
            precision: self.precision * by,
            recall: self.recall * by,
            f1: self.f1 * by,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// The reference giving the best F1.
    #[default]
    Max,
    /// Hits pooled over all references.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Truncate the candidate surface to this many bytes before counting.
    pub byte_cap: Option<usize>,
    pub multi_ref_aggregation: Aggregation,
    pub case_fold: bool,
    /// Drop tokens made only of punctuation when scoring raw text.
    pub strip_punctuation: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            byte_cap: None,
            multi_ref_aggregation: Aggregation::Max,
            case_fold: true,
            strip_punctuation: true,
        }
    }
}

impl EvalConfig {
    /// DUC convention: candidates capped at 75 bytes.
    pub fn duc() -> Self {
        EvalConfig {
            byte_cap: Some(DUC_BYTE_CAP),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RougeError> {
        if self.byte_cap == Some(0) {
            return Err(RougeError::InvalidByteCap);
        }
        Ok(())
    }
}

/// Longest prefix of `text` that fits in `cap` bytes without splitting a
/// character.
pub fn truncate_bytes(text: &str, cap: usize) -> &str {
    if text.len() <= cap {
        return text;
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[..end]
}

fn prepare<S: AsRef<str>>(tokens: &[S], cfg: &EvalConfig, cap: Option<usize>) -> Vec<String> {
    let toks: Vec<String> = match cap {
        Some(cap) => tokens_of(truncate_bytes(&detokenize(tokens), cap)),
        None => tokens.iter().map(|t| t.as_ref().to_string()).collect(),
    };
    if cfg.case_fold {
        toks.into_iter().map(|t| t.to_lowercase()).collect()
    } else {
        toks
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Longest common subsequence length.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// (hits, candidate total, reference total) per reference, then combined.
fn aggregate(per_ref: &[(usize, usize, usize)], how: Aggregation) -> RougeScore {
    match how {
        Aggregation::Max => per_ref
            .iter()
            .map(|&(h, c, r)| RougeScore::from_counts(h, c, r))
            .fold(None::<RougeScore>, |best, s| match best {
                Some(b) if b.f1 >= s.f1 => Some(b),
                _ => Some(s),
            })
            .unwrap_or_default(),
        Aggregation::Average => {
            let (h, c, r) = per_ref.iter().fold((0, 0, 0), |acc, &(h, c, r)| {
                (acc.0 + h, acc.1 + c, acc.2 + r)
            });
            RougeScore::from_counts(h, c, r)
        }
    }
}

pub fn rouge_n<S: AsRef<str>, R: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<R>],
    n: usize,
    cfg: &EvalConfig,
) -> Result<RougeScore, RougeError> {
    if n < 1 {
        return Err(RougeError::InvalidN);
    }
    if references.is_empty() {
        return Err(RougeError::NoReferences);
    }
    cfg.validate()?;
    let cand = prepare(candidate, cfg, cfg.byte_cap);
    let cand_counts = ngram_counts(&cand, n);
    let cand_total = cand.len().saturating_sub(n - 1);
    let per_ref: Vec<(usize, usize, usize)> = references
        .iter()
        .map(|r| {
            let reference = prepare(r, cfg, None);
            let ref_counts = ngram_counts(&reference, n);
            let hits = ref_counts
                .iter()
                .map(|(g, &rc)| rc.min(cand_counts.get(g).copied().unwrap_or(0)))
                .sum();
            (hits, cand_total, reference.len().saturating_sub(n - 1))
        })
        .collect();
    Ok(aggregate(&per_ref, cfg.multi_ref_aggregation))
}

pub fn rouge_l<S: AsRef<str>, R: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<R>],
    cfg: &EvalConfig,
) -> Result<RougeScore, RougeError> {
    if references.is_empty() {
        return Err(RougeError::NoReferences);
    }
    cfg.validate()?;
    let cand = prepare(candidate, cfg, cfg.byte_cap);
    let per_ref: Vec<(usize, usize, usize)> = references
        .iter()
        .map(|r| {
            let reference = prepare(r, cfg, None);
            (lcs_len(&cand, &reference), cand.len(), reference.len())
        })
        .collect();
    Ok(aggregate(&per_ref, cfg.multi_ref_aggregation))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeScore,
}

/// Corpus means on a 0-100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEvaluation {
    pub per_example: Vec<ExampleScores>,
    pub report: RougeReport,
}

fn text_tokens(text: &str, cfg: &EvalConfig) -> Vec<String> {
    let toks = tokens_of(text);
    if cfg.strip_punctuation {
        toks.into_iter()
            .filter(|t| t.chars().any(char::is_alphanumeric))
            .collect()
    } else {
        toks
    }
}

pub fn score_example(
    candidate: &str,
    references: &[String],
    cfg: &EvalConfig,
) -> Result<ExampleScores, RougeError> {
    let capped = match cfg.byte_cap {
        Some(cap) => truncate_bytes(candidate, cap),
        None => candidate,
    };
    let cand = text_tokens(capped, cfg);
    let refs: Vec<Vec<String>> = references.iter().map(|r| text_tokens(r, cfg)).collect();
    // the cap was applied to the raw text above
    let token_cfg = EvalConfig {
        byte_cap: None,
        ..*cfg
    };
    Ok(ExampleScores {
        rouge1: rouge_n(&cand, &refs, 1, &token_cfg)?,
        rouge2: rouge_n(&cand, &refs, 2, &token_cfg)?,
        rouge_l: rouge_l(&cand, &refs, &token_cfg)?,
    })
}

fn mean_score(scores: impl Iterator<Item = RougeScore>) -> RougeScore {
    let (mut p, mut r, mut f) = (Vec::new(), Vec::new(), Vec::new());
    for s in scores {
        p.push(s.precision);
        r.push(s.recall);
        f.push(s.f1);
    }
    RougeScore {
        precision: order_free_mean(&mut p),
        recall: order_free_mean(&mut r),
        f1: order_free_mean(&mut f),
    }
}

/// Per-example scores and their arithmetic means (x100).
pub fn evaluate_corpus(
    outputs: &[String],
    reference_sets: &[Vec<String>],
    cfg: &EvalConfig,
) -> Result<CorpusEvaluation, RougeError> {
    if outputs.len() != reference_sets.len() {
        return Err(RougeError::LengthMismatch {
            outputs: outputs.len(),
            references: reference_sets.len(),
        });
    }
    if outputs.is_empty() {
        return Err(RougeError::EmptyCorpus);
    }
    cfg.validate()?;
    let per_example = outputs
        .par_iter()
        .zip(reference_sets.par_iter())
        .map(|(c, refs)| score_example(c, refs, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let report = RougeReport {
        rouge1: mean_score(per_example.iter().map(|e| e.rouge1)).scaled(100.0),
        rouge2: mean_score(per_example.iter().map(|e| e.rouge2)).scaled(100.0),
        rouge_l: mean_score(per_example.iter().map(|e| e.rouge_l)).scaled(100.0),
    };
    Ok(CorpusEvaluation {
        per_example,
        report,
    })
}
