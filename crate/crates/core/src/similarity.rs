//! Answer similarity scorers.
//!
//! [`LexicalScorer`] is a deterministic token-F1 stand-in that keeps the whole
//! pipeline hermetic. [`RemoteScorer`] talks to an external cross-encoder
//! service over HTTP:
//!
//! ```text
//! POST {endpoint}/score
//! {"pairs": [{"pred": "...", "ref": "..."}, ...]}
//! -> {"scores": [0.93, ...]}
//! ```

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{LazyLock, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable consulted for the remote scorer endpoint.
pub const ENDPOINT_ENV: &str = "AGENT_SIM_ENDPOINT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("similarity score {value} outside [0, 1]")]
    OutOfRange { value: f64 },
    #[error("scorer protocol error: {0}")]
    Protocol(String),
    #[error("scorer transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("scorer configuration error: {0}")]
    Config(String),
}

/// Scores how well a predicted answer matches a reference answer.
pub trait SimilarityScorer: Send + Sync {
    fn score(&self, pred: &str, reference: &str) -> Result<f64, ScoreError>;

    fn score_many(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        pairs.iter().map(|(p, r)| self.score(p, r)).collect()
    }
}

/// Range gate applied at every scorer boundary.
pub fn check_range(value: f64) -> Result<f64, ScoreError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ScoreError::OutOfRange { value })
    }
}

static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}").unwrap());

/// Lowercase, drop Unicode punctuation, split on whitespace.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    PUNCT
        .replace_all(&lowered, "")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Multiset token F1 between two texts.
pub fn lexical_f1(pred: &str, reference: &str) -> f64 {
    let pred_tokens = normalize_tokens(pred);
    let ref_tokens = normalize_tokens(reference);
    match (pred_tokens.is_empty(), ref_tokens.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in &ref_tokens {
        *ref_counts.entry(t.as_str()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pred_tokens {
        if let Some(c) = ref_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / ref_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl SimilarityScorer for LexicalScorer {
    fn score(&self, pred: &str, reference: &str) -> Result<f64, ScoreError> {
        Ok(lexical_f1(pred, reference))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{endpoint}/score`.
    pub endpoint: String,
    pub max_in_flight: usize,
    pub batch_size: usize,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Initial backoff, doubled after every failed attempt.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            max_in_flight: 4,
            batch_size: 32,
            max_retries: 3,
            backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(30),
        }
    }

    /// Build from [`ENDPOINT_ENV`].
    pub fn from_env() -> Result<Self, ScoreError> {
        match std::env::var(ENDPOINT_ENV) {
            Ok(v) if !v.trim().is_empty() => Ok(Self::new(v.trim())),
            _ => Err(ScoreError::Config(format!("{ENDPOINT_ENV} is not set"))),
        }
    }

    fn validate(&self) -> Result<(), ScoreError> {
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(ScoreError::Config(format!(
                "endpoint must be an http(s) URL, got {:?}",
                self.endpoint
            )));
        }
        if self.max_in_flight == 0 || self.batch_size == 0 {
            return Err(ScoreError::Config(
                "max_in_flight and batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/score", self.endpoint.trim_end_matches('/'))
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<WirePair<'a>>,
}

#[derive(Serialize)]
struct WirePair<'a> {
    pred: &'a str,
    #[serde(rename = "ref")]
    reference: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

enum Attempt {
    Retryable(String),
    Fatal(ScoreError),
}

/// Client for a remote cross-encoder scoring service.
pub struct RemoteScorer {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig) -> Result<Self, ScoreError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post_once(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, Attempt> {
        let body = ScoreRequest {
            pairs: pairs
                .iter()
                .map(|(pred, reference)| WirePair { pred, reference })
                .collect(),
        };
        let mut resp = self
            .agent
            .post(&self.config.url())
            .send_json(&body)
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retryable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(ScoreError::Protocol(format!(
                "unexpected HTTP status {status}"
            ))));
        }
        let parsed: ScoreResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(ScoreError::Protocol(format!("bad response body: {e}"))))?;
        if parsed.scores.len() != pairs.len() {
            return Err(Attempt::Fatal(ScoreError::Protocol(format!(
                "expected {} scores, got {}",
                pairs.len(),
                parsed.scores.len()
            ))));
        }
        for &s in &parsed.scores {
            if !(0.0..=1.0).contains(&s) {
                return Err(Attempt::Fatal(ScoreError::Protocol(format!(
                    "score {s} outside [0, 1]"
                ))));
            }
        }
        Ok(parsed.scores)
    }

    fn post_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        let mut delay = self.config.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.post_once(pairs) {
                Ok(scores) => return Ok(scores),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(message)) => {
                    if attempts > self.config.max_retries {
                        return Err(ScoreError::Transport { attempts, message });
                    }
                    thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
            }
        }
    }
}

impl SimilarityScorer for RemoteScorer {
    fn score(&self, pred: &str, reference: &str) -> Result<f64, ScoreError> {
        Ok(self.score_many(&[(pred, reference)])?[0])
    }

    /// Batches are posted by at most `max_in_flight` workers; the first
    /// failure aborts the whole call.
    fn score_many(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let batches: Vec<&[(&str, &str)]> = pairs.chunks(self.config.batch_size).collect();
        let workers = self.config.max_in_flight.min(batches.len());
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let results: Mutex<Vec<Option<Vec<f64>>>> = Mutex::new(vec![None; batches.len()]);
        let first_error: Mutex<Option<ScoreError>> = Mutex::new(None);

        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(batch) = batches.get(i) else { break };
                    match self.post_batch(batch) {
                        Ok(scores) => results.lock().unwrap()[i] = Some(scores),
                        Err(e) => {
                            abort.store(true, Ordering::SeqCst);
                            first_error.lock().unwrap().get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });

        if let Some(e) = first_error.into_inner().unwrap() {
            return Err(e);
        }
        Ok(results
            .into_inner()
            .unwrap()
            .into_iter()
            .flat_map(|b| b.expect("every batch scored"))
            .collect())
    }
}

/// In-memory memo keyed by `(pred, ref)` in front of another scorer.
pub struct MemoScorer<S> {
    inner: S,
    memo: RwLock<HashMap<(String, String), f64>>,
}

impl<S: SimilarityScorer> MemoScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            memo: RwLock::new(HashMap::new()),
        }
    }

    /// Score every pair not yet memoized with a single `score_many` call.
    pub fn prefetch(&self, pairs: &[(&str, &str)]) -> Result<(), ScoreError> {
        let missing: Vec<(&str, &str)> = {
            let memo = self.memo.read().unwrap();
            let mut seen = std::collections::HashSet::new();
            pairs
                .iter()
                .copied()
                .filter(|(p, r)| {
                    !memo.contains_key(&(p.to_string(), r.to_string())) && seen.insert((*p, *r))
                })
                .collect()
        };
        let scores = self.inner.score_many(&missing)?;
        let mut memo = self.memo.write().unwrap();
        for ((p, r), s) in missing.into_iter().zip(scores) {
            memo.insert((p.to_string(), r.to_string()), check_range(s)?);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.memo.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<S: SimilarityScorer> SimilarityScorer for MemoScorer<S> {
    fn score(&self, pred: &str, reference: &str) -> Result<f64, ScoreError> {
        let key = (pred.to_string(), reference.to_string());
        if let Some(&v) = self.memo.read().unwrap().get(&key) {
            return Ok(v);
        }
        let v = check_range(self.inner.score(pred, reference)?)?;
        self.memo.write().unwrap().insert(key, v);
        Ok(v)
    }
}

impl SimilarityScorer for Box<dyn SimilarityScorer> {
    fn score(&self, pred: &str, reference: &str) -> Result<f64, ScoreError> {
        (**self).score(pred, reference)
    }

    fn score_many(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScoreError> {
        (**self).score_many(pairs)
    }
}
