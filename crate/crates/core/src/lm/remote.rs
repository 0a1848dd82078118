//! HTTP client for a remote scoring server.
//!
//! Wire protocol (JSON over HTTP, natural-log probabilities):
//!
//! ```text
//! POST {base_url}/v1/score  {"context": .., "continuation": ..} -> {"logprob": .., "n_tokens": ..}
//! POST {base_url}/v1/next   {"context": .., "k": ..}            -> {"tokens": [..], "logprobs": [..]}
//! ```
//!
//! Non-200 responses and malformed bodies are retried up to `max_retries`
//! times with exponential backoff starting at 100 ms.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{sort_topk, LogProb, ScoreError, Scorer, END_OF_TEXT};

const BACKOFF_START: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteScorerConfig {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_batch")]
    pub request_batch_size: usize,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    3
}

fn default_batch() -> usize {
    1
}

impl RemoteScorerConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteScorerConfig {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            request_batch_size: default_batch(),
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.timeout_ms == 0 {
            return Err(ScoreError::InvalidArgument("timeout_ms must be > 0".into()));
        }
        if self.request_batch_size == 0 {
            return Err(ScoreError::InvalidArgument(
                "request_batch_size must be >= 1".into(),
            ));
        }
        if self.base_url.is_empty() {
            return Err(ScoreError::InvalidArgument("base_url is empty".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    context: &'a str,
    continuation: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    logprob: f64,
    n_tokens: usize,
}

#[derive(Serialize)]
struct NextRequest<'a> {
    context: &'a str,
    k: usize,
}

#[derive(Deserialize)]
struct NextResponse {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

pub struct RemoteScorer {
    config: RemoteScorerConfig,
    client: reqwest::blocking::Client,
}

impl RemoteScorer {
    pub fn new(config: RemoteScorerConfig) -> Result<Self, ScoreError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| ScoreError::InvalidArgument(format!("cannot build HTTP client: {e}")))?;
        Ok(RemoteScorer { config, client })
    }

    pub fn config(&self) -> &RemoteScorerConfig {
        &self.config
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
        check: impl Fn(&R) -> Result<(), String>,
    ) -> Result<R, ScoreError> {
        let endpoint = self.endpoint(path);
        let attempts = self.config.max_retries + 1;
        let mut delay = BACKOFF_START;
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            match self
                .try_post(&endpoint, body)
                .and_then(|r| check(&r).map(|_| r))
            {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::debug!("{endpoint}: attempt {attempt}/{attempts} failed: {e}");
                    last_error = e;
                }
            }
            if attempt < attempts {
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(ScoreError::Transport {
            endpoint,
            attempts,
            message: last_error,
        })
    }

    fn try_post<B: Serialize, R: DeserializeOwned>(
        &self,
        endpoint: &str,
        body: &B,
    ) -> Result<R, String> {
        let resp = self
            .client
            .post(endpoint)
            .json(body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            return Err(format!("HTTP status {status}"));
        }
        let bytes = resp.bytes().map_err(|e| e.to_string())?;
        serde_json::from_slice(&bytes).map_err(|e| format!("malformed body: {e}"))
    }

    fn score(&self, context: &str, continuation: &str) -> Result<ScoreResponse, ScoreError> {
        self.post(
            "/v1/score",
            &ScoreRequest {
                context,
                continuation,
            },
            |r: &ScoreResponse| {
                if r.logprob.is_nan() || r.logprob > 1e-9 {
                    Err(format!("invalid logprob {}", r.logprob))
                } else {
                    Ok(())
                }
            },
        )
    }
}

impl Scorer for RemoteScorer {
    fn sequence_logprob(&self, text: &str) -> Result<LogProb, ScoreError> {
        self.continuation_logprob("", text)
    }

    fn continuation_logprob(
        &self,
        context: &str,
        continuation: &str,
    ) -> Result<LogProb, ScoreError> {
        if continuation.is_empty() {
            return Ok(LogProb::ZERO);
        }
        Ok(LogProb::new(self.score(context, continuation)?.logprob))
    }

    fn next_token_topk(
        &self,
        context: &str,
        k: usize,
    ) -> Result<Vec<(String, LogProb)>, ScoreError> {
        if k == 0 {
            return Err(ScoreError::InvalidArgument("k must be >= 1".into()));
        }
        let resp: NextResponse = self.post(
            "/v1/next",
            &NextRequest { context, k },
            |r: &NextResponse| {
                if r.tokens.len() != r.logprobs.len() {
                    Err("tokens and logprobs differ in length".to_string())
                } else if r.logprobs.iter().any(|l| l.is_nan()) {
                    Err("NaN logprob".to_string())
                } else {
                    Ok(())
                }
            },
        )?;
        let mut dist: Vec<(String, LogProb)> = resp
            .tokens
            .into_iter()
            .zip(resp.logprobs.into_iter().map(LogProb::new))
            .collect();
        sort_topk(&mut dist, k);
        Ok(dist)
    }

    fn token_count(&self, text: &str) -> Result<usize, ScoreError> {
        if text.is_empty() {
            return Ok(0);
        }
        Ok(self.score("", text)?.n_tokens)
    }

    /// Server tokens carry their own leading whitespace.
    fn append_token(&self, text: &str, token: &str) -> String {
        format!("{text}{token}")
    }

    fn end_token(&self) -> &str {
        END_OF_TEXT
    }
}
