//! Self-supervision corpus construction and summary statistics.
//!
//! Each training record is `source + delimiter + summary + end_token` on its
//! own line, ready for an external fine-tuning run.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::DEFAULT_DELIMITER;
use crate::lm::END_OF_TEXT;
use crate::textprep::{tokens_of, TokenizedSentence};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("held-out size {heldout} must be smaller than the number of pairs ({pairs})")]
    HeldoutTooLarge { heldout: usize, pairs: usize },
    #[error("empty source")]
    EmptySource,
    #[error("empty summary")]
    EmptySummary,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinetunePair {
    pub source: String,
    pub summary: String,
    pub delimiter: String,
    pub end_token: String,
}

impl FinetunePair {
    pub fn render(&self) -> String {
        format!(
            "{}{}{}{}",
            self.source, self.delimiter, self.summary, self.end_token
        )
    }
}

/// Splits a rendered record at the first delimiter and strips the end token.
pub fn parse_record(line: &str, delimiter: &str, end_token: &str) -> Option<(String, String)> {
    let body = line.strip_suffix(end_token)?;
    let (source, summary) = body.split_once(delimiter)?;
    Some((source.to_string(), summary.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusParams {
    pub delimiter: String,
    pub end_token: String,
    /// Number of trailing pairs written to the held-out file.
    pub heldout: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            delimiter: DEFAULT_DELIMITER.to_string(),
            end_token: END_OF_TEXT.to_string(),
            heldout: 7_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_pairs: usize,
    pub mean_compression_ratio: f64,
    pub abstractive_token_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusWarning {
    /// Kept, but longer than its source.
    SummaryLonger { index: usize },
    /// Excluded: the source contains the delimiter.
    SourceHasDelimiter { index: usize },
    /// Excluded: a line break would split the record.
    Multiline { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneCorpus {
    pub train: Vec<String>,
    pub heldout: Vec<String>,
    pub stats: DatasetStats,
    pub warnings: Vec<CorpusWarning>,
}

impl FinetuneCorpus {
    pub fn write(&self, train: &Path, heldout: &Path) -> Result<(), DatasetError> {
        write_lines(train, &self.train)?;
        write_lines(heldout, &self.heldout)?;
        Ok(())
    }
}

fn write_lines(path: &Path, lines: &[String]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in lines {
        w.write_all(l.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Character length of `summary` over that of `source`.
pub fn compression_ratio(source: &str, summary: &str) -> Result<f64, DatasetError> {
    let n = source.chars().count();
    if n == 0 {
        return Err(DatasetError::EmptySource);
    }
    Ok(summary.chars().count() as f64 / n as f64)
}

/// Percentage of summary tokens that never occur in the source
/// (case-sensitive).
pub fn abstractive_token_pct(
    source: &TokenizedSentence,
    summary: &TokenizedSentence,
) -> Result<f64, DatasetError> {
    if summary.tokens.is_empty() {
        return Err(DatasetError::EmptySummary);
    }
    let novel = summary
        .tokens
        .iter()
        .filter(|t| !source.tokens.contains(t))
        .count();
    Ok(100.0 * novel as f64 / summary.tokens.len() as f64)
}

/// Mean that does not depend on the order of `values`.
pub(crate) fn order_free_mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Statistics over every pair, whether or not it became a training record.
pub fn dataset_stats(pairs: &[(String, String)]) -> Result<DatasetStats, DatasetError> {
    let mut ratios = Vec::with_capacity(pairs.len());
    let mut novel = Vec::with_capacity(pairs.len());
    for (source, summary) in pairs {
        ratios.push(compression_ratio(source, summary)?);
        let sum_toks = TokenizedSentence::from_tokens(tokens_of(summary));
        if !sum_toks.is_empty() {
            let src_toks = TokenizedSentence::from_tokens(tokens_of(source));
            novel.push(abstractive_token_pct(&src_toks, &sum_toks)?);
        }
    }
    Ok(DatasetStats {
        n_pairs: pairs.len(),
        mean_compression_ratio: order_free_mean(&mut ratios),
        abstractive_token_pct: order_free_mean(&mut novel),
    })
}

/// Renders train and held-out records. The held-out set is the last
/// `params.heldout` pairs in input order.
pub fn build_finetune_corpus(
    pairs: &[(String, String)],
    params: &CorpusParams,
) -> Result<FinetuneCorpus, DatasetError> {
    if params.heldout >= pairs.len() {
        return Err(DatasetError::HeldoutTooLarge {
            heldout: params.heldout,
            pairs: pairs.len(),
        });
    }
    let split = pairs.len() - params.heldout;
    let mut train = Vec::with_capacity(split);
    let mut heldout = Vec::with_capacity(params.heldout);
    let mut warnings = Vec::new();
    for (index, (source, summary)) in pairs.iter().enumerate() {
        if source.contains(&params.delimiter) {
            warnings.push(CorpusWarning::SourceHasDelimiter { index });
            continue;
        }
        if source.contains('\n') || summary.contains('\n') {
            warnings.push(CorpusWarning::Multiline { index });
            continue;
        }
        if summary.chars().count() > source.chars().count() {
            warnings.push(CorpusWarning::SummaryLonger { index });
        }
        let record = FinetunePair {
            source: source.clone(),
            summary: summary.clone(),
            delimiter: params.delimiter.clone(),
            end_token: params.end_token.clone(),
        }
        .render();
        if index < split {
            train.push(record);
        } else {
            heldout.push(record);
        }
    }
    Ok(FinetuneCorpus {
        train,
        heldout,
        stats: dataset_stats(pairs)?,
        warnings,
    })
}
