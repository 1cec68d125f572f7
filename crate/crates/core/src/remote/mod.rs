//! Scoring against an externally hosted model over HTTP.
//!
//! Wire protocol: `POST {base_url}/v1/score` with
//!
//! ```json
//! {"mode": "token-ids", "context": [12, 7], "continuation": [3, 9]}
//! {"mode": "text", "context": "the cat", "continuation": " sat down"}
//! ```
//!
//! answered by `{"model": "<id>", "logprobs": [-1.25, -0.5]}`, one natural-log
//! conditional per continuation token. In token-ids mode a length mismatch
//! is a hard error. In text mode the server owns tokenization, so the
//! returned count is recorded instead.

mod loopback;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{ScoringBackend, TokenId, Vocabulary};

pub use loopback::{LoopbackRequest, LoopbackServer};

pub const SCORE_PATH: &str = "/v1/score";
pub const ENV_ENDPOINT: &str = "PAMEM_ENDPOINT";
pub const ENV_ENDPOINT_TOKEN: &str = "PAMEM_ENDPOINT_TOKEN";
pub const MAX_RETRIES_LIMIT: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    TokenIds,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Tokens(Vec<TokenId>),
    Text(String),
}

impl Payload {
    fn mode(&self) -> ScoreMode {
        match self {
            Payload::Tokens(_) => ScoreMode::TokenIds,
            Payload::Text(_) => ScoreMode::Text,
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Payload::Tokens(t) => t.is_empty(),
            Payload::Text(s) => s.trim().is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub mode: ScoreMode,
    pub context: Payload,
    pub continuation: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub model: String,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub auth_token: Option<String>,
    pub mode: ScoreMode,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Maximum number of requests in flight when scoring a batch.
    pub batch_size: usize,
    /// Delay before the first retry; doubles on each further attempt.
    pub backoff: Duration,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, mode: ScoreMode) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            auth_token: None,
            mode,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            batch_size: 8,
            backoff: Duration::from_millis(250),
        }
    }

    /// Endpoint from `PAMEM_ENDPOINT`, token from `PAMEM_ENDPOINT_TOKEN`.
    pub fn from_env(mode: ScoreMode) -> Option<Self> {
        let url = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty())?;
        let mut cfg = Self::new(url, mode);
        cfg.auth_token = std::env::var(ENV_ENDPOINT_TOKEN).ok().filter(|s| !s.is_empty());
        Some(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.trim().is_empty() {
            return Err(Error::Config("endpoint base_url is empty".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("endpoint batch_size must be at least 1".into()));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(Error::Config(format!(
                "max_retries {} exceeds the limit of {MAX_RETRIES_LIMIT}",
                self.max_retries
            )));
        }
        Ok(())
    }

    fn score_url(&self) -> String {
        format!("{}{SCORE_PATH}", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteScore {
    pub per_token_logprobs: Vec<f64>,
    pub model_id: String,
    pub token_count: usize,
}

pub struct RemoteClient {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        config.validate()?;
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Ok(RemoteClient { config, agent })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Per-token logprobs of `continuation` given `context`.
    pub fn score_continuation(&self, context: Payload, continuation: Payload) -> Result<RemoteScore> {
        if context.mode() != self.config.mode || continuation.mode() != self.config.mode {
            return Err(Error::invalid(format!("payload does not match endpoint mode {:?}", self.config.mode)));
        }
        if continuation.is_empty() {
            return Err(Error::invalid("continuation must be nonempty"));
        }
        let expected = match &continuation {
            Payload::Tokens(t) => Some(t.len()),
            Payload::Text(_) => None,
        };
        let request = ScoreRequest { mode: self.config.mode, context, continuation };
        let response = self.post_with_retries(&request)?;
        if let Some(expected) = expected {
            if response.logprobs.len() != expected {
                return Err(Error::Integrity { expected, actual: response.logprobs.len() });
            }
        }
        if let Some((index, &value)) = response.logprobs.iter().enumerate().find(|(_, v)| !v.is_finite() || **v > 0.0) {
            return Err(Error::InvalidLogprob { index, value });
        }
        Ok(RemoteScore {
            token_count: response.logprobs.len(),
            per_token_logprobs: response.logprobs,
            model_id: response.model,
        })
    }

    fn post_with_retries(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        let url = self.config.score_url();
        let body = serde_json::to_value(request)?;
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let mut req = self.agent.post(&url);
            if let Some(token) = &self.config.auth_token {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            let transient = match req.send_json(body.clone()) {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp
                        .into_string()
                        .map_err(|e| Error::Transport { attempts: attempt, message: e.to_string() })?;
                    return serde_json::from_str(&text)
                        .map_err(|e| Error::Protocol { status, body: format!("malformed response ({e}): {text}") });
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let body = resp.into_string().unwrap_or_default();
                    if status == 429 || status >= 500 {
                        format!("HTTP {status}: {body}")
                    } else {
                        return Err(Error::Protocol { status, body });
                    }
                }
                Err(ureq::Error::Transport(t)) => t.to_string(),
            };
            if attempt > self.config.max_retries {
                return Err(Error::Transport { attempts: attempt, message: transient });
            }
            let delay = self.config.backoff.saturating_mul(1 << (attempt - 1).min(16));
            log::debug!("retrying {url} after {delay:?}: {transient}");
            thread::sleep(delay);
        }
    }
}

/// A remote model exposed as a [`ScoringBackend`].
///
/// Token-ids endpoints receive ids directly. Text endpoints receive the
/// space-joined surfaces from `vocab`, which is therefore required in that
/// mode.
pub struct RemoteBackend {
    client: RemoteClient,
    vocab: Option<Vocabulary>,
    model_id: OnceLock<String>,
    mismatched_ids: Mutex<Vec<String>>,
}

impl RemoteBackend {
    pub fn new(client: RemoteClient, vocab: Option<Vocabulary>) -> Result<Self> {
        if client.config.mode == ScoreMode::Text && vocab.is_none() {
            return Err(Error::Config("text-mode endpoints need a vocabulary to render tokens".into()));
        }
        Ok(RemoteBackend { client, vocab, model_id: OnceLock::new(), mismatched_ids: Mutex::new(Vec::new()) })
    }

    pub fn client(&self) -> &RemoteClient {
        &self.client
    }

    /// Model ids reported by the endpoint that differed from the first one seen.
    pub fn inconsistent_model_ids(&self) -> Vec<String> {
        self.mismatched_ids.lock().expect("lock poisoned").clone()
    }

    fn payloads(&self, context: &[TokenId], continuation: &[TokenId]) -> (Payload, Payload) {
        match (&self.client.config.mode, &self.vocab) {
            (ScoreMode::Text, Some(vocab)) => {
                let ctx = vocab.decode(context);
                let mut cont = vocab.decode(continuation);
                if !ctx.is_empty() {
                    cont.insert(0, ' ');
                }
                (Payload::Text(ctx), Payload::Text(cont))
            }
            _ => (Payload::Tokens(context.to_vec()), Payload::Tokens(continuation.to_vec())),
        }
    }

    fn record_model(&self, reported: &str) {
        let first = self.model_id.get_or_init(|| reported.to_string());
        if first != reported {
            log::warn!("endpoint reported model {reported:?}, expected {first:?}");
            self.mismatched_ids.lock().expect("lock poisoned").push(reported.to_string());
        }
    }
}

impl ScoringBackend for RemoteBackend {
    fn model_id(&self) -> &str {
        self.model_id.get().map(String::as_str).unwrap_or(&self.client.config.base_url)
    }

    fn continuation_logprobs(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        if let Some(vocab) = &self.vocab {
            vocab.check(context)?;
            vocab.check(continuation)?;
        }
        let (ctx, cont) = self.payloads(context, continuation);
        let score = self.client.score_continuation(ctx, cont)?;
        self.record_model(&score.model_id);
        if score.token_count != continuation.len() {
            log::warn!("endpoint scored {} tokens for a {}-token continuation", score.token_count, continuation.len());
        }
        Ok(score.per_token_logprobs)
    }

    /// Fans requests out over at most `batch_size` worker threads. Results
    /// are matched to requests by index; on failure the error of the lowest
    /// failing index is returned.
    fn continuation_logprobs_batch(&self, requests: &[(&[TokenId], &[TokenId])]) -> Result<Vec<Vec<f64>>> {
        let workers = self.client.config.batch_size.min(requests.len()).max(1);
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Vec<f64>>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= requests.len() {
                        break;
                    }
                    let (ctx, cont) = requests[i];
                    let r = self.continuation_logprobs(ctx, cont);
                    *slots[i].lock().expect("lock poisoned") = Some(r);
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().expect("lock poisoned").expect("every slot filled")).collect()
    }
}
