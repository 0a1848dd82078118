//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use ibsum::lm::{train_ngram, NGramModel, Scorer};
use ibsum::textprep::{detokenize, tokenize, TokenizedSentence};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const VOCAB6: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// Add-1 bigram over the six-letter vocabulary.
pub fn fixture_lm() -> NGramModel {
    let corpus: Vec<TokenizedSentence> = [
        "a b c d",
        "a b e f",
        "c d e f a b",
        "b c",
        "d e f",
        "f a",
        "e e a",
        "a c e",
        "b d f b",
    ]
    .iter()
    .map(|s| tokenize(s))
    .collect();
    train_ngram(&corpus, 2, 1.0).unwrap()
}

/// A small English-like corpus for fluency comparisons and decoding.
pub const ENGLISH: &[&str] = &[
    "the cat sat on the mat .",
    "the dog sat on the rug .",
    "a cat ran to the house .",
    "the cat ate the fish .",
    "a dog ate the bone .",
    "the man saw the cat .",
    "the woman saw a dog .",
    "the cat sat .",
    "the dog ran .",
    "a man ran to the park .",
];

pub fn english_lm(order: usize, add_k: f64) -> NGramModel {
    let corpus: Vec<TokenizedSentence> = ENGLISH.iter().map(|s| tokenize(s)).collect();
    train_ngram(&corpus, order, add_k).unwrap()
}

pub fn sentence(tokens: &[&str]) -> TokenizedSentence {
    tokenize(&tokens.join(" "))
}

pub fn random_tokens<'a>(rng: &mut ChaCha8Rng, vocab: &[&'a str], len: usize) -> Vec<&'a str> {
    (0..len)
        .map(|_| vocab[rng.gen_range(0..vocab.len())])
        .collect()
}

/// Every kept list reachable from the full source through deletions of up to
/// `m` consecutive kept words that strictly raise the sequence score.
/// Returns `(kept, fluency)` in discovery order.
pub fn oracle_reachable(
    source: &TokenizedSentence,
    m: usize,
    lm: &dyn Scorer,
) -> Vec<(Vec<usize>, f64)> {
    let render = |kept: &[usize]| {
        let toks: Vec<&str> = kept.iter().map(|&i| source.tokens[i].as_str()).collect();
        detokenize(&toks)
    };
    let root: Vec<usize> = (0..source.tokens.len()).collect();
    let root_fl = lm.sequence_logprob(&render(&root)).unwrap().value();
    let mut seen = BTreeSet::new();
    seen.insert(root.clone());
    let mut out = vec![(root.clone(), root_fl)];
    let mut queue = VecDeque::from([(root, root_fl)]);
    while let Some((kept, fl)) = queue.pop_front() {
        let n = kept.len();
        for start in 0..n {
            for end in start + 1..=n {
                let run = end - start;
                if run > m || run == n {
                    continue;
                }
                let child: Vec<usize> = kept[..start].iter().chain(&kept[end..]).copied().collect();
                let child_fl = lm.sequence_logprob(&render(&child)).unwrap().value();
                if child_fl > fl && seen.insert(child.clone()) {
                    out.push((child.clone(), child_fl));
                    queue.push_back((child, child_fl));
                }
            }
        }
    }
    out
}

/// `(kept, fluency, relevance)` for the reachable set, scored against `target`.
pub fn oracle_scored(
    source: &TokenizedSentence,
    target: &str,
    m: usize,
    lm: &dyn Scorer,
) -> Vec<(Vec<usize>, f64, f64)> {
    oracle_reachable(source, m, lm)
        .into_iter()
        .map(|(kept, fl)| {
            let toks: Vec<&str> = kept.iter().map(|&i| source.tokens[i].as_str()).collect();
            let rel = lm
                .continuation_logprob(&detokenize(&toks), target)
                .unwrap()
                .value();
            (kept, fl, rel)
        })
        .collect()
}

fn better(a: &(Vec<usize>, f64, f64), b: &(Vec<usize>, f64, f64)) -> bool {
    a.2 > b.2 || (a.2 == b.2 && (a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)))
}

pub fn oracle_ex(
    source: &TokenizedSentence,
    next: &TokenizedSentence,
    m: usize,
    lm: &dyn Scorer,
) -> Vec<usize> {
    let all = oracle_scored(source, &next.raw, m, lm);
    let mut best = &all[0];
    for c in &all[1..] {
        if better(c, best) {
            best = c;
        }
    }
    best.0.clone()
}

pub fn oracle_recon(
    source: &TokenizedSentence,
    target_len: usize,
    m: usize,
    lm: &dyn Scorer,
) -> Vec<usize> {
    let all = oracle_scored(source, &detokenize(&source.tokens), m, lm);
    let dist = |c: &(Vec<usize>, f64, f64)| c.0.len().abs_diff(target_len);
    let closest = all.iter().map(dist).min().unwrap();
    let mut best: Option<&(Vec<usize>, f64, f64)> = None;
    for c in all.iter().filter(|c| dist(c) == closest) {
        if best.is_none_or(|b| better(c, b)) {
            best = Some(c);
        }
    }
    best.unwrap().0.clone()
}

pub fn is_subsequence(needle: &[String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Greedy decoding: the best allowed token at every step.
pub fn oracle_greedy(lm: &dyn Scorer, prompt: &str, min: usize, max: usize) -> (Vec<String>, f64) {
    let end = lm.end_token().to_string();
    let mut ctx = prompt.to_string();
    let mut toks = Vec::new();
    let mut score = 0.0;
    loop {
        let dist = lm.next_token_topk(&ctx, usize::MAX).unwrap();
        let (tok, lp) = dist
            .into_iter()
            .find(|(t, _)| toks.len() >= min || *t != end)
            .unwrap();
        score += lp.value();
        if tok == end {
            return (toks, score);
        }
        ctx = lm.append_token(&ctx, &tok);
        toks.push(tok);
        if toks.len() >= max {
            return (toks, score);
        }
    }
}

/// Best sequence over every length in `[min, max]`; sequences shorter than
/// `max` pay for the end token. Ties go to the lexicographically smaller
/// token list.
pub fn oracle_exhaustive(
    lm: &dyn Scorer,
    prompt: &str,
    min: usize,
    max: usize,
) -> (Vec<String>, f64) {
    let end = lm.end_token().to_string();
    let mut best: Option<(Vec<String>, f64)> = None;
    let mut stack = vec![(prompt.to_string(), Vec::<String>::new(), 0.0)];
    while let Some((ctx, toks, score)) = stack.pop() {
        let dist = lm.next_token_topk(&ctx, usize::MAX).unwrap();
        let mut consider = |cand: Vec<String>, s: f64| {
            let replace = match &best {
                None => true,
                Some((bt, bs)) => s > *bs || (s == *bs && cand < *bt),
            };
            if replace {
                best = Some((cand, s));
            }
        };
        for (tok, lp) in dist {
            let s = score + lp.value();
            if tok == end {
                if toks.len() >= min {
                    consider(toks.clone(), s);
                }
                continue;
            }
            let mut next = toks.clone();
            next.push(tok.clone());
            if next.len() >= max {
                consider(next, s);
            } else {
                stack.push((lm.append_token(&ctx, &tok), next, s));
            }
        }
    }
    best.unwrap()
}

/// Minimal HTTP/1.1 server answering the scoring protocol from an n-gram
/// model. The first `fail_first` requests get a 500.
pub fn serve(model: NGramModel, fail_first: usize) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let seen = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let n = seen.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = if n < fail_first {
                ("500 Internal Server Error", "{}".to_string())
            } else {
                (
                    "200 OK",
                    answer(&model, request_line.split(' ').nth(1).unwrap(), &body),
                )
            };
            let resp = format!(
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    (format!("http://{addr}"), hits)
}

fn answer(model: &NGramModel, path: &str, body: &[u8]) -> String {
    let req: Value = serde_json::from_slice(body).unwrap();
    let context = req["context"].as_str().unwrap();
    match path {
        "/v1/score" => {
            let cont = req["continuation"].as_str().unwrap();
            let lp = model.continuation_logprob(context, cont).unwrap().value();
            json!({"logprob": lp, "n_tokens": model.token_count(cont).unwrap()}).to_string()
        }
        "/v1/next" => {
            let k = req["k"].as_u64().unwrap() as usize;
            let top = model.next_token_topk(context, k).unwrap();
            let end = model.end_token().to_string();
            let tokens: Vec<String> = top
                .iter()
                .map(|(t, _)| {
                    if *t == end {
                        t.clone()
                    } else {
                        format!(" {t}")
                    }
                })
                .collect();
            let lps: Vec<f64> = top.iter().map(|(_, l)| l.value()).collect();
            json!({"tokens": tokens, "logprobs": lps}).to_string()
        }
        _ => "{}".to_string(),
    }
}
