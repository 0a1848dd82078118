mod common;

use common::*;
use ibsum::ibsearch::{expand_deletions, summarize_ex, summarize_recon, Candidate, SearchParams};
use ibsum::lm::{LogProb, ScoreError, Scorer};
use ibsum::textprep::tokenize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn four_token_toy_matches_oracle() {
    let lm = fixture_lm();
    let src = sentence(&["a", "b", "c", "d"]);
    let next = sentence(&["e", "f"]);
    let r = summarize_ex(&src, &next, &SearchParams::new(8, 4), &lm).unwrap();
    assert_eq!(r.kept, oracle_ex(&src, &next, 4, &lm));
}

#[test]
fn recon_toy_matches_oracle() {
    let lm = fixture_lm();
    let src = sentence(&["a", "b", "c", "d"]);
    let r = summarize_recon(&src, &SearchParams::new(8, 4), &lm, 2).unwrap();
    assert_eq!(r.kept, oracle_recon(&src, 2, 4, &lm));
    let full = summarize_recon(&src, &SearchParams::default(), &lm, 4).unwrap();
    assert_eq!(full.kept, vec![0, 1, 2, 3]);
}

#[test]
fn random_sources_match_oracle() {
    let lm = fixture_lm();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let len = rng.gen_range(1..=7);
        let src = sentence(&random_tokens(&mut rng, &VOCAB6, len));
        let nlen = rng.gen_range(1..=5);
        let next = sentence(&random_tokens(&mut rng, &VOCAB6, nlen));
        let r = summarize_ex(&src, &next, &SearchParams::new(64, 8), &lm).unwrap();
        assert_eq!(
            r.kept,
            oracle_ex(&src, &next, 8, &lm),
            "source {:?}",
            src.tokens
        );
        let target = rng.gen_range(1..=len);
        let r = summarize_recon(&src, &SearchParams::new(64, 8), &lm, target).unwrap();
        assert_eq!(
            r.kept,
            oracle_recon(&src, target, 8, &lm),
            "source {:?}",
            src.tokens
        );
    }
}

#[test]
fn expand_counts_and_filter() {
    let lm = fixture_lm();
    let src = sentence(&["a", "b", "c"]);
    let root = Candidate {
        kept: vec![0, 1, 2],
        fluency: lm.sequence_logprob("a b c").unwrap(),
        relevance: LogProb::ZERO,
        parent_kept: None,
    };
    let children = expand_deletions(&src, &root, 3, &lm).unwrap();
    assert!(children.len() <= 5);
    for (kept, fl) in &children {
        assert!(*fl > root.fluency);
        assert!(!kept.is_empty());
    }
    let single = Candidate {
        kept: vec![1],
        ..root.clone()
    };
    assert!(expand_deletions(&src, &single, 3, &lm).unwrap().is_empty());
}

/// Scores text by word count: shorter is always less fluent.
struct LongerIsBetter;

impl Scorer for LongerIsBetter {
    fn sequence_logprob(&self, text: &str) -> Result<LogProb, ScoreError> {
        Ok(LogProb::new(
            -100.0 + text.split_whitespace().count() as f64,
        ))
    }
    fn continuation_logprob(&self, _: &str, continuation: &str) -> Result<LogProb, ScoreError> {
        self.sequence_logprob(continuation)
    }
    fn next_token_topk(&self, _: &str, _: usize) -> Result<Vec<(String, LogProb)>, ScoreError> {
        Ok(vec![])
    }
    fn token_count(&self, text: &str) -> Result<usize, ScoreError> {
        Ok(text.split_whitespace().count())
    }
    fn end_token(&self) -> &str {
        "<|endoftext|>"
    }
}

#[test]
fn no_deletion_improves_fluency() {
    let src = tokenize("w x y z");
    let root = Candidate {
        kept: vec![0, 1, 2, 3],
        fluency: LongerIsBetter.sequence_logprob("w x y z").unwrap(),
        relevance: LogProb::ZERO,
        parent_kept: None,
    };
    assert!(expand_deletions(&src, &root, 3, &LongerIsBetter)
        .unwrap()
        .is_empty());
    let r = summarize_ex(
        &src,
        &tokenize("w x"),
        &SearchParams::default(),
        &LongerIsBetter,
    )
    .unwrap();
    assert_eq!(r.kept, vec![0, 1, 2, 3]);
    assert_eq!(r.pool_size, 1);
}

#[test]
fn english_fluency_ordering() {
    let lm = english_lm(2, 0.1);
    let good = lm.sequence_logprob("the cat sat").unwrap();
    let bad = lm.sequence_logprob("the cat cat").unwrap();
    assert!(good > bad);
}

#[test]
fn worker_count_does_not_change_result() {
    let lm = english_lm(3, 0.1);
    let src = tokenize("the big cat sat on the old mat near the house .");
    let next = tokenize("the cat ate the fish .");
    let params = SearchParams::new(3, 3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| summarize_ex(&src, &next, &params, &lm).unwrap())
    };
    let one = run(1);
    for t in [2, 4, 8] {
        assert_eq!(run(t), one);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ex_matches_oracle(src in prop::collection::vec(0..6usize, 1..=6),
                             next in prop::collection::vec(0..6usize, 1..=4),
                             k in 1..=6usize, m in 1..=3usize) {
            let lm = fixture_lm();
            let words = |ix: &[usize]| sentence(&ix.iter().map(|&i| VOCAB6[i]).collect::<Vec<_>>());
            let (src, next) = (words(&src), words(&next));
            let r = summarize_ex(&src, &next, &SearchParams::new(k, m), &lm).unwrap();
            prop_assert!(r.kept.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(is_subsequence(&r.summary.tokens, &src.tokens));
            // no length holds more than C(4, 2) = 6 candidates, so k = 6 keeps them all
            if k == 6 && src.len() <= 4 {
                prop_assert_eq!(r.kept, oracle_ex(&src, &next, m, &lm));
            }
        }
    }
}
