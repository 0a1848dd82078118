//! Batch commands over JSON Lines files.
//!
//! Every command is deterministic given its configuration and inputs: work is
//! spread over a fixed-size thread pool and results are written back in input
//! order. Exit codes: 0 success, 1 per-record failures, 2 usage or input
//! errors, 3 scorer transport errors.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decoder::{beam_decode, DecodeError, DecodeParams};
use crate::ibsearch::{summarize_ex, summarize_recon, SearchError, SearchParams, SummaryResult};
use crate::lm::{
    make_cached, train_ngram, LogProb, ModelError, NGramModel, RemoteScorer, RemoteScorerConfig,
    ScoreError, ScorerHandle,
};
use crate::rouge::{
    evaluate_corpus, truncate_bytes, EvalConfig, RougeError, RougeReport, DUC_BYTE_CAP,
};
use crate::selfsup::{build_finetune_corpus, CorpusParams, DatasetError, DatasetStats};
use crate::textprep::{extract_pairs, segment_sentences, tokenize, PairRecord, RawDocument};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Rouge(#[from] RougeError),
    #[error("scorer unavailable: {0}")]
    Transport(ScoreError),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Transport(_) => 3,
            _ => 2,
        }
    }
}

impl From<ScoreError> for PipelineError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Transport { .. } => PipelineError::Transport(e),
            ScoreError::InvalidArgument(m) => PipelineError::Config(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScorerConfig {
    Ngram { model: PathBuf },
    Remote(RemoteScorerConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NGramTrainConfig {
    pub order: usize,
    pub add_k: f64,
}

impl Default for NGramTrainConfig {
    fn default() -> Self {
        NGramTrainConfig {
            order: 3,
            add_k: 0.1,
        }
    }
}

/// Everything a run needs besides its input and output paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scorer: Option<ScorerConfig>,
    /// `0` disables the score cache.
    pub cache_capacity: usize,
    pub workers: usize,
    pub search: SearchParams,
    pub decode: DecodeParams,
    pub eval: EvalConfig,
    pub dataset: CorpusParams,
    pub ngram: NGramTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scorer: None,
            cache_capacity: 100_000,
            workers: 1,
            search: SearchParams::default(),
            decode: DecodeParams::default(),
            eval: EvalConfig::default(),
            dataset: CorpusParams::default(),
            ngram: NGramTrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.workers < 1 {
            return Err(PipelineError::Config("workers must be >= 1".into()));
        }
        self.search
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.eval.validate()?;
        Ok(())
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        self.validate()?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Builds the configured scorer, wrapped in an LRU cache unless
    /// `cache_capacity` is zero.
    pub fn build_scorer(&self) -> Result<ScorerHandle, PipelineError> {
        let inner: ScorerHandle = match &self.scorer {
            None => return Err(PipelineError::Config("no scorer configured".into())),
            Some(ScorerConfig::Ngram { model }) => {
                Arc::new(NGramModel::load(model).map_err(|e| match e {
                    ModelError::Io(source) => PipelineError::Io {
                        path: model.clone(),
                        source,
                    },
                    other => PipelineError::Model(other),
                })?)
            }
            Some(ScorerConfig::Remote(cfg)) => Arc::new(RemoteScorer::new(cfg.clone())?),
        };
        if self.cache_capacity == 0 {
            Ok(inner)
        } else {
            Ok(make_cached(inner, self.cache_capacity)?)
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    let io_err = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn read_documents(path: &Path) -> Result<Vec<RawDocument>, PipelineError> {
    let docs: Vec<RawDocument> = read_jsonl(path)?;
    let mut ids = HashSet::new();
    for d in &docs {
        if d.id.is_empty() {
            return Err(PipelineError::Usage(format!(
                "{}: document with empty id",
                path.display()
            )));
        }
        if !ids.insert(d.id.as_str()) {
            return Err(PipelineError::Usage(format!(
                "{}: duplicate document id {:?}",
                path.display(),
                d.id
            )));
        }
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExtractCounts {
    pub documents: usize,
    pub sentences: usize,
    pub pairs: usize,
    /// Final sentences, which have no successor.
    pub excluded: usize,
}

impl std::fmt::Display for ExtractCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "documents={} sentences={} pairs={} excluded={}",
            self.documents, self.sentences, self.pairs, self.excluded
        )
    }
}

pub fn cmd_extract_pairs(input: &Path, output: &Path) -> Result<ExtractCounts, PipelineError> {
    let docs = read_documents(input)?;
    let mut records = Vec::new();
    let mut counts = ExtractCounts {
        documents: docs.len(),
        sentences: 0,
        pairs: 0,
        excluded: 0,
    };
    for doc in &docs {
        let n = segment_sentences(&doc.body).len();
        counts.sentences += n;
        counts.excluded += usize::from(n > 0);
        records.extend(extract_pairs(doc).iter().map(PairRecord::from));
    }
    counts.pairs = records.len();
    write_jsonl(output, &records)?;
    Ok(counts)
}

/// Trains an n-gram model on every sentence of a document corpus.
pub fn cmd_train_ngram(
    input: &Path,
    output: &Path,
    cfg: &NGramTrainConfig,
) -> Result<NGramModel, PipelineError> {
    let docs = read_documents(input)?;
    let corpus: Vec<_> = docs
        .iter()
        .flat_map(|d| segment_sentences(&d.body))
        .map(|s| tokenize(&s))
        .collect();
    let model = train_ngram(&corpus, cfg.order, cfg.add_k)?;
    model.save(output).map_err(|e| match e {
        ModelError::Io(source) => PipelineError::Io {
            path: output.to_path_buf(),
            source,
        },
        other => other.into(),
    })?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub doc_id: String,
    pub position: usize,
    pub source: String,
    pub next: String,
    pub summary: String,
    pub kept: Vec<usize>,
    pub fluency: LogProb,
    pub relevance: LogProb,
    pub pool_size: usize,
    pub candidates_scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
    pub source: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum OutputRecord<T> {
    Ok(T),
    Failed(ErrorRecord),
}

/// How a batch went: record count and how many of them failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOutcome {
    pub records: usize,
    pub failures: usize,
}

impl BatchOutcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failures > 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SummarizeMode {
    Ex,
    /// Target lengths come from an earlier `Ex` results file.
    Recon {
        ex_results: Option<PathBuf>,
    },
}

fn summary_record(pair: &PairRecord, r: SummaryResult) -> SummaryRecord {
    SummaryRecord {
        doc_id: pair.doc_id.clone(),
        position: pair.position,
        source: pair.source.clone(),
        next: pair.next.clone(),
        summary: r.summary.raw,
        kept: r.kept,
        fluency: r.fluency,
        relevance: r.relevance,
        pool_size: r.pool_size,
        candidates_scored: r.candidates_scored,
    }
}

fn recon_targets(pairs: &[PairRecord], ex_results: &Path) -> Result<Vec<usize>, PipelineError> {
    let ex: Vec<SummaryRecord> = read_jsonl(ex_results)?;
    if ex.len() != pairs.len() {
        return Err(PipelineError::Usage(format!(
            "{} has {} records but the pair file has {}",
            ex_results.display(),
            ex.len(),
            pairs.len()
        )));
    }
    pairs
        .iter()
        .zip(&ex)
        .enumerate()
        .map(|(i, (p, e))| {
            if p.doc_id != e.doc_id || p.position != e.position {
                Err(PipelineError::Usage(format!(
                    "record {}: pair ({}, {}) does not match results ({}, {})",
                    i + 1,
                    p.doc_id,
                    p.position,
                    e.doc_id,
                    e.position
                )))
            } else {
                Ok(e.kept.len())
            }
        })
        .collect()
}

/// Runs the extractive search (or its reconstruction baseline) over a pair
/// file.
pub fn cmd_summarize(
    cfg: &RunConfig,
    mode: &SummarizeMode,
    pairs_path: &Path,
    output: &Path,
) -> Result<BatchOutcome, PipelineError> {
    let pool = cfg.thread_pool()?;
    let pairs: Vec<PairRecord> = read_jsonl(pairs_path)?;
    let targets = match mode {
        SummarizeMode::Ex => None,
        SummarizeMode::Recon { ex_results: None } => {
            return Err(PipelineError::Usage(
                "summarize-recon needs the results file of a summarize-ex run".into(),
            ))
        }
        SummarizeMode::Recon {
            ex_results: Some(p),
        } => Some(recon_targets(&pairs, p)?),
    };
    let scorer = cfg.build_scorer()?;
    let results: Vec<Result<SummaryResult, SearchError>> = pool.install(|| {
        pairs
            .par_iter()
            .enumerate()
            .map(|(i, pair)| {
                let source = tokenize(&pair.source);
                match &targets {
                    None => {
                        summarize_ex(&source, &tokenize(&pair.next), &cfg.search, scorer.as_ref())
                    }
                    Some(t) => summarize_recon(&source, &cfg.search, scorer.as_ref(), t[i]),
                }
            })
            .collect()
    });

    let mut records = Vec::with_capacity(pairs.len());
    let mut failures = 0;
    for (pair, result) in pairs.iter().zip(results) {
        match result {
            Ok(r) => records.push(OutputRecord::Ok(summary_record(pair, r))),
            Err(SearchError::Score(e)) => return Err(e.into()),
            Err(e) => {
                failures += 1;
                records.push(OutputRecord::Failed(ErrorRecord {
                    doc_id: Some(pair.doc_id.clone()),
                    position: Some(pair.position),
                    source: pair.source.clone(),
                    error: e.to_string(),
                }));
            }
        }
    }
    write_jsonl(output, &records)?;
    Ok(BatchOutcome {
        records: records.len(),
        failures,
    })
}

#[derive(Debug, Clone, Deserialize)]
struct SourceSummary {
    source: String,
    summary: String,
}

/// Builds train and held-out fine-tuning files from summarization results.
pub fn cmd_build_dataset(
    cfg: &RunConfig,
    results: &Path,
    train: &Path,
    heldout: &Path,
    stats_path: Option<&Path>,
) -> Result<DatasetStats, PipelineError> {
    let rows: Vec<SourceSummary> = read_jsonl(results)?;
    let pairs: Vec<(String, String)> = rows.into_iter().map(|r| (r.source, r.summary)).collect();
    let corpus = build_finetune_corpus(&pairs, &cfg.dataset)?;
    for w in &corpus.warnings {
        log::warn!("{}: {w:?}", results.display());
    }
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |e: DatasetError| match e {
            DatasetError::Io(source) => PipelineError::Io { path, source },
            other => other.into(),
        }
    };
    corpus.write(train, heldout).map_err(io_err(train))?;
    if let Some(p) = stats_path {
        fs::write(
            p,
            serde_json::to_string(&corpus.stats).expect("stats serialize") + "\n",
        )
        .map_err(|source| PipelineError::Io {
            path: p.to_path_buf(),
            source,
        })?;
    }
    Ok(corpus.stats)
}

#[derive(Debug, Clone, Deserialize)]
struct DecodeInput {
    source: String,
    #[serde(default)]
    id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub id: Option<String>,
    pub source: String,
    pub summary: String,
    pub tokens: Vec<String>,
    pub score: LogProb,
}

/// Beam-decodes one summary per input line (`{"source": ..}`).
pub fn cmd_decode(
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
) -> Result<BatchOutcome, PipelineError> {
    let pool = cfg.thread_pool()?;
    let inputs: Vec<DecodeInput> = read_jsonl(input)?;
    let scorer = cfg.build_scorer()?;
    let results: Vec<_> = pool.install(|| {
        inputs
            .par_iter()
            .map(|inp| beam_decode(scorer.as_ref(), &tokenize(&inp.source), &cfg.decode))
            .collect()
    });
    let mut records = Vec::with_capacity(inputs.len());
    let mut failures = 0;
    for (inp, result) in inputs.iter().zip(results) {
        match result {
            Ok(d) => records.push(OutputRecord::Ok(DecodeRecord {
                id: inp.id.clone(),
                source: inp.source.clone(),
                summary: d.summary.raw,
                tokens: d.summary.tokens,
                score: d.score,
            })),
            Err(DecodeError::Score(e)) => return Err(e.into()),
            Err(e) => {
                failures += 1;
                log::warn!("decode failed for {:?}: {e}", inp.source);
                records.push(OutputRecord::Failed(ErrorRecord {
                    doc_id: inp.id.clone(),
                    position: None,
                    source: inp.source.clone(),
                    error: e.to_string(),
                }));
            }
        }
    }
    write_jsonl(output, &records)?;
    Ok(BatchOutcome {
        records: records.len(),
        failures,
    })
}

/// One evaluation row: a candidate and its references.
#[derive(Debug, Clone, Deserialize)]
pub struct RougeInput {
    pub candidate: String,
    pub references: Vec<String>,
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct CandidateOnly {
    #[serde(alias = "summary")]
    candidate: String,
}

#[derive(Debug, Clone, Deserialize)]
struct ReferencesOnly {
    references: Vec<String>,
    #[serde(default)]
    source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Baselines {
    pub prefix: RougeReport,
    pub input: RougeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RougeOutput {
    #[serde(flatten)]
    pub system: RougeReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baselines: Option<Baselines>,
}

pub enum RougeSource<'a> {
    /// `{"candidate", "references", "source"?}` per line.
    Combined(&'a Path),
    /// Candidates (`candidate` or `summary` field) and references in
    /// separate files, aligned by line.
    Split {
        candidates: &'a Path,
        references: &'a Path,
    },
}

pub fn load_rouge_inputs(src: &RougeSource<'_>) -> Result<Vec<RougeInput>, PipelineError> {
    match src {
        RougeSource::Combined(p) => read_jsonl(p),
        RougeSource::Split {
            candidates,
            references,
        } => {
            let c: Vec<CandidateOnly> = read_jsonl(candidates)?;
            let r: Vec<ReferencesOnly> = read_jsonl(references)?;
            if c.len() != r.len() {
                return Err(PipelineError::Usage(format!(
                    "{} candidates but {} reference sets",
                    c.len(),
                    r.len()
                )));
            }
            Ok(c.into_iter()
                .zip(r)
                .map(|(c, r)| RougeInput {
                    candidate: c.candidate,
                    references: r.references,
                    source: r.source,
                })
                .collect())
        }
    }
}

/// ROUGE report, optionally with PREFIX (first 75 source bytes) and INPUT
/// (whole source, uncapped) baselines.
pub fn cmd_rouge(
    cfg: &RunConfig,
    rows: &[RougeInput],
    baselines: bool,
) -> Result<RougeOutput, PipelineError> {
    let pool = cfg.thread_pool()?;
    if rows.iter().any(|r| r.references.is_empty()) {
        return Err(PipelineError::Usage(
            "every row needs at least one reference".into(),
        ));
    }
    let refs: Vec<Vec<String>> = rows.iter().map(|r| r.references.clone()).collect();
    let outputs: Vec<String> = rows.iter().map(|r| r.candidate.clone()).collect();
    pool.install(|| {
        let system = evaluate_corpus(&outputs, &refs, &cfg.eval)?.report;
        let baselines = if baselines {
            let sources = rows
                .iter()
                .map(|r| r.source.clone())
                .collect::<Option<Vec<String>>>()
                .ok_or_else(|| {
                    PipelineError::Usage("baselines need a \"source\" on every row".into())
                })?;
            let prefix: Vec<String> = sources
                .iter()
                .map(|s| truncate_bytes(s, DUC_BYTE_CAP).to_string())
                .collect();
            let uncapped = EvalConfig {
                byte_cap: None,
                ..cfg.eval
            };
            Some(Baselines {
                prefix: evaluate_corpus(&prefix, &refs, &cfg.eval)?.report,
                input: evaluate_corpus(&sources, &refs, &uncapped)?.report,
            })
        } else {
            None
        };
        Ok(RougeOutput { system, baselines })
    })
}
