//! Beam-search generation of abstractive summaries.
//!
//! The prompt is the source sentence followed by a delimiter; the scorer is
//! asked for next-token distributions and hypotheses are ranked by raw
//! cumulative log-probability (no length normalization).

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lm::{LogProb, ScoreError, Scorer};
use crate::textprep::{detokenize, TokenizedSentence};

pub const DEFAULT_DELIMITER: &str = " TL;DR: ";

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("empty source sentence")]
    EmptySource,
    #[error("invalid decode parameters: {0}")]
    InvalidParams(String),
    #[error("decoder cannot terminate")]
    CannotTerminate,
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeParams {
    pub beam_size: usize,
    pub min_tokens: usize,
    /// Defaults to the scorer's token count of the source.
    pub max_tokens: Option<usize>,
    pub delimiter: String,
    pub end_token: String,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            beam_size: 5,
            min_tokens: 5,
            max_tokens: None,
            delimiter: DEFAULT_DELIMITER.to_string(),
            end_token: crate::lm::END_OF_TEXT.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub score: LogProb,
    pub finished: bool,
    /// Log-probability of each step, including the end token when one was
    /// generated.
    pub steps: Vec<LogProb>,
    context: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub summary: TokenizedSentence,
    pub score: LogProb,
    pub hypothesis: Hypothesis,
}

/// Score descending, then token sequence ascending, finished before live.
fn beam_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .cmp(&a.score)
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| b.finished.cmp(&a.finished))
}

/// The source rendered as text followed by the delimiter.
pub fn build_prompt(source: &TokenizedSentence, delimiter: &str) -> String {
    format!("{}{}", detokenize(&source.tokens), delimiter)
}

/// Resolves the effective `(min, max)` length window for `source`.
///
/// When `max_tokens` is unset it becomes the source length in scorer tokens,
/// raised to `min_tokens` for sources shorter than the minimum.
pub fn length_window(
    scorer: &dyn Scorer,
    source: &TokenizedSentence,
    params: &DecodeParams,
) -> Result<(usize, usize), DecodeError> {
    if params.min_tokens < 1 {
        return Err(DecodeError::InvalidParams("min_tokens must be >= 1".into()));
    }
    let max = match params.max_tokens {
        Some(max) if max < params.min_tokens => {
            return Err(DecodeError::InvalidParams(format!(
                "max_tokens {max} < min_tokens {}",
                params.min_tokens
            )))
        }
        Some(max) => max,
        None => scorer
            .token_count(&detokenize(&source.tokens))?
            .max(params.min_tokens),
    };
    Ok((params.min_tokens, max))
}

fn render(scorer: &dyn Scorer, tokens: &[String]) -> String {
    tokens
        .iter()
        .fold(String::new(), |acc, t| scorer.append_token(&acc, t))
        .trim()
        .to_string()
}

pub fn beam_decode(
    scorer: &dyn Scorer,
    source: &TokenizedSentence,
    params: &DecodeParams,
) -> Result<Decoded, DecodeError> {
    if source.is_empty() {
        return Err(DecodeError::EmptySource);
    }
    if params.beam_size < 1 {
        return Err(DecodeError::InvalidParams("beam_size must be >= 1".into()));
    }
    let (min_tokens, max_tokens) = length_window(scorer, source, params)?;
    let beam = params.beam_size;
    let end = params.end_token.as_str();

    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: LogProb::ZERO,
        finished: false,
        steps: Vec::new(),
        context: build_prompt(source, &params.delimiter),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    while !live.is_empty() {
        let expansions = live
            .par_iter()
            .map(|h| -> Result<Vec<Hypothesis>, ScoreError> {
                let masked = h.tokens.len() < min_tokens;
                // ask for one extra so a masked end token does not cost a slot
                let want = if masked { beam + 1 } else { beam };
                let top = scorer.next_token_topk(&h.context, want)?;
                Ok(top
                    .into_iter()
                    .filter(|(tok, _)| !(masked && tok == end))
                    .take(beam)
                    .map(|(tok, lp)| {
                        let mut steps = h.steps.clone();
                        steps.push(lp);
                        if tok == end {
                            Hypothesis {
                                tokens: h.tokens.clone(),
                                score: h.score + lp,
                                finished: true,
                                steps,
                                context: h.context.clone(),
                            }
                        } else {
                            let mut tokens = h.tokens.clone();
                            tokens.push(tok.clone());
                            Hypothesis {
                                finished: tokens.len() >= max_tokens,
                                tokens,
                                score: h.score + lp,
                                steps,
                                context: scorer.append_token(&h.context, &tok),
                            }
                        }
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut pool: Vec<Hypothesis> = expansions.into_iter().flatten().collect();
        pool.sort_by(beam_order);
        pool.truncate(beam);
        live.clear();
        for h in pool {
            if h.finished {
                finished.push(h);
            } else {
                live.push(h);
            }
        }
    }

    let best = finished
        .into_iter()
        .min_by(beam_order)
        .ok_or(DecodeError::CannotTerminate)?;
    let raw = render(scorer, &best.tokens);
    Ok(Decoded {
        summary: TokenizedSentence {
            tokens: best.tokens.clone(),
            char_len: raw.chars().count(),
            raw,
        },
        score: best.score,
        hypothesis: best,
    })
}
