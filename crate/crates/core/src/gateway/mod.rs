//! Chat-completion and text-embedding providers behind one retrying,
//! concurrency-capped [`Gateway`] handle.

mod http;
mod mock;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use http::{HttpChat, HttpEmbedder, HttpProviderConfig};
pub use mock::{FnChat, MockChat, MockEmbedder};

/// Default state-embedding width.
pub const DEFAULT_EMBEDDING_DIM: usize = 768;

/// Which prompt program produced a request. Real providers ignore it; the
/// mock provider keys its canned responses on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    StateTracking,
    AspectPromotion,
    Generation,
    Seeker,
    BaselinePlain,
    BaselineCot,
    BaselineMixInit,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(skip)]
    pub kind: PromptKind,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>, kind: PromptKind) -> Self {
        let (temperature, max_tokens) = match kind {
            PromptKind::StateTracking => (0.0, 160),
            PromptKind::AspectPromotion => (0.7, 256),
            _ => (0.7, 200),
        };
        Self {
            prompt: prompt.into(),
            temperature,
            max_tokens,
            stop_sequences: Vec::new(),
            kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.trim().is_empty() {
            return Err(Error::invalid("prompt is empty"));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::invalid(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("embedding"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Inner product of two embeddings. No normalization is applied.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Stable 64-bit digest used to seed every mock output.
pub fn stable_hash(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    #[serde(with = "duration_ms")]
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }

    /// Delay slept before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Counting semaphore that caps in-flight provider calls.
#[derive(Debug)]
struct Limiter {
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Shareable provider handle. Cloning is cheap; clones share the limiter.
#[derive(Clone)]
pub struct Gateway {
    chat: Arc<dyn ChatProvider>,
    embedder: Arc<dyn EmbeddingProvider>,
    retry: RetryPolicy,
    limiter: Arc<Limiter>,
    dim: usize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("retry", &self.retry)
            .field("concurrency", &self.limiter.cap)
            .field("dim", &self.dim)
            .finish()
    }
}

impl Gateway {
    pub fn new(
        chat: Arc<dyn ChatProvider>,
        embedder: Arc<dyn EmbeddingProvider>,
        dim: usize,
    ) -> Self {
        Self {
            chat,
            embedder,
            retry: RetryPolicy::default(),
            limiter: Arc::new(Limiter::new(8)),
            dim,
        }
    }

    /// Mock chat plus mock embeddings of width `dim`, no retry delay.
    pub fn mock(dim: usize) -> Self {
        Self::new(
            Arc::new(MockChat::default()),
            Arc::new(MockEmbedder::new(dim)),
            dim,
        )
        .with_retry(RetryPolicy::no_delay(3))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, cap: usize) -> Self {
        self.limiter = Arc::new(Limiter::new(cap));
        self
    }

    pub fn with_chat(mut self, chat: Arc<dyn ChatProvider>) -> Self {
        self.chat = chat;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let mut retry = 0;
        loop {
            let outcome = {
                let _permit = self.limiter.acquire();
                call()
            };
            match outcome {
                Err(e) if e.is_transient() && retry < self.retry.max_retries => {
                    let delay = self.retry.delay(retry);
                    tracing::debug!(error = %e, retry, ?delay, "transient provider failure");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    retry += 1;
                }
                Err(Error::ProviderRateLimited { .. }) => {
                    return Err(Error::ProviderRateLimited {
                        attempts: retry + 1,
                    })
                }
                Err(Error::ProviderUnavailable { status, .. }) => {
                    return Err(Error::ProviderUnavailable {
                        status,
                        attempts: retry + 1,
                    })
                }
                other => return other,
            }
        }
    }

    pub fn chat_complete(&self, req: &ChatRequest) -> Result<String> {
        req.validate()?;
        let text = self.with_retries(|| self.chat.complete(req))?;
        if text.trim().is_empty() {
            return Err(Error::MalformedResponse("empty completion".into()));
        }
        Ok(text)
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::invalid("cannot embed empty text"));
        }
        let values = self.with_retries(|| self.embedder.embed(text))?;
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        EmbeddingVector::new(values)
    }
}
