mod common;

use std::sync::atomic::Ordering;

use common::serve;
use ibsum::lm::{RemoteScorer, RemoteScorerConfig, ScoreError, Scorer};

fn config(url: String, retries: u32) -> RemoteScorerConfig {
    RemoteScorerConfig {
        timeout_ms: 2_000,
        max_retries: retries,
        ..RemoteScorerConfig::new(url)
    }
}

#[test]
fn remote_matches_local_model() {
    let model = common::english_lm(2, 0.1);
    let (url, _) = serve(model.clone(), 0);
    let remote = RemoteScorer::new(config(url, 0)).unwrap();
    for text in ["the cat sat .", "a dog ran to the park ."] {
        let r = remote.sequence_logprob(text).unwrap().value();
        let l = model.sequence_logprob(text).unwrap().value();
        assert!((r - l).abs() < 1e-12);
        assert_eq!(
            remote.token_count(text).unwrap(),
            model.token_count(text).unwrap()
        );
    }
    let r = remote
        .continuation_logprob("the cat", "sat .")
        .unwrap()
        .value();
    let l = model
        .continuation_logprob("the cat", "sat .")
        .unwrap()
        .value();
    assert!((r - l).abs() < 1e-12);
    assert_eq!(remote.continuation_logprob("the", "").unwrap().value(), 0.0);
    let top = remote.next_token_topk("the", 3).unwrap();
    assert_eq!(top.len(), 3);
    assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
    assert_eq!(remote.append_token("the", " cat"), "the cat");
}

#[test]
fn transient_failures_are_retried() {
    let (url, hits) = serve(common::english_lm(2, 0.1), 2);
    let remote = RemoteScorer::new(config(url, 3)).unwrap();
    assert!(remote.sequence_logprob("the cat").is_ok());
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn exhausted_retries_report_transport_error() {
    let (url, hits) = serve(common::english_lm(2, 0.1), usize::MAX);
    let remote = RemoteScorer::new(config(url, 1)).unwrap();
    match remote.sequence_logprob("the cat") {
        Err(ScoreError::Transport {
            endpoint,
            attempts,
            message,
        }) => {
            assert!(endpoint.ends_with("/v1/score"));
            assert_eq!(attempts, 2);
            assert!(message.contains("500"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn remote_drives_beam_decoder() {
    use ibsum::decoder::{beam_decode, DecodeParams};
    let corpus: Vec<_> = (0..20)
        .map(|_| ibsum::textprep::tokenize("x TL;DR: a b c"))
        .collect();
    let model = ibsum::lm::train_ngram(&corpus, 2, 0.01).unwrap();
    let (url, _) = serve(model, 0);
    let remote = RemoteScorer::new(config(url, 0)).unwrap();
    let params = DecodeParams {
        min_tokens: 1,
        max_tokens: Some(6),
        ..Default::default()
    };
    let out = beam_decode(&remote, &ibsum::textprep::tokenize("x"), &params).unwrap();
    assert_eq!(out.summary.raw, "a b c");
}
