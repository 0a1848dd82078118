use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sort_topk, LogProb, ModelError, ScoreError, Scorer, END_OF_TEXT};
use crate::textprep::{tokens_of, TokenizedSentence};

pub const BOS: &str = "<s>";
pub const EOS: &str = END_OF_TEXT;
pub const UNK: &str = "<unk>";
pub const NGRAM_FORMAT: &str = "ngram-v1";

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

/// Add-k smoothed n-gram model with back-off to shorter contexts when a
/// context was never observed.
///
/// `P(w | ctx) = (count(ctx w) + k) / (count(ctx) + k |V|)`, where `V` is
/// every token that can be predicted (the vocabulary minus BOS).
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    add_k: f64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    counts: HashMap<Vec<u32>, u64>,
    context_totals: HashMap<Vec<u32>, u64>,
}

#[derive(Serialize, Deserialize)]
struct CountEntry {
    ngram: Vec<String>,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    order: usize,
    add_k: f64,
    vocab: Vec<String>,
    counts: Vec<CountEntry>,
}

pub fn train_ngram(
    corpus: &[TokenizedSentence],
    order: usize,
    add_k: f64,
) -> Result<NGramModel, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut model = NGramModel::empty(order, add_k)?;
    for sentence in corpus {
        let ids: Vec<u32> = sentence.tokens.iter().map(|t| model.intern(t)).collect();
        model.add_sentence(&ids);
    }
    Ok(model)
}

impl NGramModel {
    fn empty(order: usize, add_k: f64) -> Result<Self, ModelError> {
        if order < 1 {
            return Err(ModelError::InvalidParams("order must be >= 1".into()));
        }
        if !(add_k > 0.0 && add_k.is_finite()) {
            return Err(ModelError::InvalidParams("add_k must be > 0".into()));
        }
        let vocab: Vec<String> = [BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(NGramModel {
            order,
            add_k,
            vocab,
            index,
            counts: HashMap::new(),
            context_totals: HashMap::new(),
        })
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.vocab.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    fn add_sentence(&mut self, ids: &[u32]) {
        let padded = self.pad(ids, true);
        for end in self.order - 1..padded.len() {
            for len in 1..=self.order {
                let gram = &padded[end + 1 - len..=end];
                self.add_count(gram.to_vec(), 1);
            }
        }
    }

    fn add_count(&mut self, gram: Vec<u32>, n: u64) {
        *self
            .context_totals
            .entry(gram[..gram.len() - 1].to_vec())
            .or_default() += n;
        *self.counts.entry(gram).or_default() += n;
    }

    fn pad(&self, ids: &[u32], with_eos: bool) -> Vec<u32> {
        let mut padded = vec![BOS_ID; self.order - 1];
        padded.extend_from_slice(ids);
        if with_eos {
            padded.push(EOS_ID);
        }
        padded
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    /// Every token including BOS, EOS and UNK.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Size of the predictable vocabulary (everything but BOS).
    pub fn predictable_size(&self) -> usize {
        self.vocab.len() - 1
    }

    pub fn count(&self, ngram: &[&str]) -> u64 {
        let ids: Option<Vec<u32>> = ngram.iter().map(|t| self.index.get(*t).copied()).collect();
        ids.and_then(|ids| self.counts.get(&ids).copied())
            .unwrap_or(0)
    }

    fn id_of(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Reserved symbols standing alone between spaces keep their identity;
    /// everything else goes through the word tokenizer.
    fn ids_of(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for chunk in text.split_whitespace() {
            match chunk {
                BOS => ids.push(BOS_ID),
                EOS => ids.push(EOS_ID),
                UNK => ids.push(UNK_ID),
                _ => ids.extend(tokens_of(chunk).iter().map(|t| self.id_of(t))),
            }
        }
        ids
    }

    /// The longest suffix of `context` that was observed, possibly empty.
    fn effective_context<'a>(&self, mut context: &'a [u32]) -> (&'a [u32], u64) {
        loop {
            let total = self.context_totals.get(context).copied().unwrap_or(0);
            if total > 0 || context.is_empty() {
                return (context, total);
            }
            context = &context[1..];
        }
    }

    fn prob_in(&self, context: &[u32], total: u64, word: u32, key: &mut Vec<u32>) -> f64 {
        key.clear();
        key.extend_from_slice(context);
        key.push(word);
        let c = self.counts.get(key.as_slice()).copied().unwrap_or(0);
        (c as f64 + self.add_k) / (total as f64 + self.add_k * self.predictable_size() as f64)
    }

    /// `P(word | context)` where `context` holds exactly `order - 1` ids.
    fn prob(&self, context: &[u32], word: u32) -> f64 {
        let (ctx, total) = self.effective_context(context);
        self.prob_in(ctx, total, word, &mut Vec::with_capacity(self.order))
    }

    /// Per-token log-probabilities of `ids[from..]` given everything before.
    fn logprob_from(&self, ids: &[u32], from: usize) -> LogProb {
        let padded = self.pad(ids, false);
        let h = self.order - 1;
        (from..ids.len())
            .map(|i| LogProb::from_prob(self.prob(&padded[i..i + h], padded[i + h])))
            .sum()
    }

    fn history_context(&self, ids: &[u32]) -> Vec<u32> {
        let padded = self.pad(ids, false);
        padded[padded.len() - (self.order - 1)..].to_vec()
    }

    /// Full next-token distribution after `context` text, in id order.
    pub fn next_distribution(&self, context: &str) -> Vec<(String, LogProb)> {
        let ctx = self.history_context(&self.ids_of(context));
        let (ctx, total) = self.effective_context(&ctx);
        let mut key = Vec::with_capacity(self.order);
        (1..self.vocab.len() as u32)
            .map(|w| {
                (
                    self.vocab[w as usize].clone(),
                    LogProb::from_prob(self.prob_in(ctx, total, w, &mut key)),
                )
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.to_file())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        Self::from_file(serde_json::from_str(s)?)
    }

    fn to_file(&self) -> ModelFile {
        let sorted: BTreeMap<&Vec<u32>, u64> = self.counts.iter().map(|(k, &v)| (k, v)).collect();
        ModelFile {
            format: NGRAM_FORMAT.to_string(),
            order: self.order,
            add_k: self.add_k,
            vocab: self.vocab.clone(),
            counts: sorted
                .into_iter()
                .map(|(ids, count)| CountEntry {
                    ngram: ids
                        .iter()
                        .map(|&i| self.vocab[i as usize].clone())
                        .collect(),
                    count,
                })
                .collect(),
        }
    }

    fn from_file(file: ModelFile) -> Result<Self, ModelError> {
        if file.format != NGRAM_FORMAT {
            return Err(ModelError::Format(file.format));
        }
        let mut model = NGramModel::empty(file.order, file.add_k)?;
        if file.vocab.get(..3) != Some(&model.vocab[..]) {
            return Err(ModelError::InvalidParams(
                "vocab must start with BOS, EOS, UNK".into(),
            ));
        }
        for t in &file.vocab[3..] {
            model.intern(t);
        }
        for entry in file.counts {
            if entry.ngram.is_empty() || entry.ngram.len() > model.order {
                return Err(ModelError::InvalidParams(format!(
                    "n-gram of length {} in an order-{} model",
                    entry.ngram.len(),
                    model.order
                )));
            }
            let ids = entry
                .ngram
                .iter()
                .map(|t| {
                    model.index.get(t).copied().ok_or_else(|| {
                        ModelError::InvalidParams(format!("token {t:?} not in vocab"))
                    })
                })
                .collect::<Result<Vec<u32>, _>>()?;
            model.add_count(ids, entry.count);
        }
        Ok(model)
    }
}

impl Scorer for NGramModel {
    fn sequence_logprob(&self, text: &str) -> Result<LogProb, ScoreError> {
        Ok(self.logprob_from(&self.ids_of(text), 0))
    }

    fn continuation_logprob(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<LogProb, ScoreError> {
        if continuation.trim().is_empty() {
            return Ok(LogProb::ZERO);
        }
        let ctx = self.ids_of(context);
        let all = self.ids_of(&super::join_context(context, continuation));
        if all.starts_with(&ctx) {
            Ok(self.logprob_from(&all, ctx.len()))
        } else {
            let diff = self.logprob_from(&all, 0) - self.logprob_from(&ctx, 0);
            Ok(LogProb::new(diff))
        }
    }

    fn next_token_topk(
        &self,
        context: &str,
        k: usize,
    ) -> Result<Vec<(String, LogProb)>, ScoreError> {
        if k == 0 {
            return Err(ScoreError::InvalidArgument("k must be >= 1".into()));
        }
        let mut dist = self.next_distribution(context);
        sort_topk(&mut dist, k);
        Ok(dist)
    }

    fn token_count(&self, text: &str) -> Result<usize, ScoreError> {
        Ok(self.ids_of(text).len())
    }
}
