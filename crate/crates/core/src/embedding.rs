//! Unit-normalized query embeddings behind a pluggable provider.
//!
//! [`HashingProvider`] is the offline default: content-token unigrams and
//! bigrams are hashed (FNV-1a) into `dim` non-negative buckets, then
//! L2-normalized. [`RemoteProvider`] speaks the usual embeddings wire format
//! (`{"model", "input"}` -> `{"data": [{"embedding": [...]}]}`).

use std::hash::Hasher;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::http::{post_json_with_retry, RetryPolicy};
use crate::tokenize::{tokenize, Stopwords};

pub const DEFAULT_HASHING_DIM: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("empty text at position {0}")]
    EmptyText(usize),
    #[error("no texts to embed")]
    NoTexts,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector has zero norm or non-finite entries")]
    Degenerate,
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
}

/// A unit-L2-norm vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::Degenerate);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbeddingError::Degenerate);
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::normalized(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Dot product of two unit vectors, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(dot(a.values(), b.values()).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// One vector per text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;
}

fn check_texts(texts: &[String]) -> Result<(), EmbeddingError> {
    if texts.is_empty() {
        return Err(EmbeddingError::NoTexts);
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbeddingError::EmptyText(i));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct HashingProvider {
    dim: usize,
    stopwords: Stopwords,
}

impl HashingProvider {
    pub fn new(dim: usize, stopwords: Stopwords) -> Result<Self, EmbeddingError> {
        if dim < 2 {
            return Err(EmbeddingError::InvalidConfig(format!(
                "dim must be at least 2, got {dim}"
            )));
        }
        Ok(Self { dim, stopwords })
    }

    fn bucket(&self, feature: &str) -> usize {
        let mut h = FnvHasher::default();
        h.write(feature.as_bytes());
        (h.finish() % self.dim as u64) as usize
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let tl = tokenize(text, &self.stopwords);
        // Stopword-only text falls back to all tokens, then to the raw string.
        let tokens = if !tl.content_tokens.is_empty() {
            tl.content_tokens
        } else {
            tl.tokens
        };
        let mut values = vec![0.0; self.dim];
        if tokens.is_empty() {
            values[self.bucket(text.trim())] = 1.0;
        }
        for t in &tokens {
            values[self.bucket(&format!("u:{t}"))] += 1.0;
        }
        for pair in tokens.windows(2) {
            values[self.bucket(&format!("b:{} {}", pair[0], pair[1]))] += 1.0;
        }
        EmbeddingVector::normalized(values)
    }
}

impl Default for HashingProvider {
    fn default() -> Self {
        Self {
            dim: DEFAULT_HASHING_DIM,
            stopwords: Stopwords::english(),
        }
    }
}

impl EmbeddingProvider for HashingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        check_texts(texts)?;
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingProviderConfig {
    Hashing {
        #[serde(default = "default_hashing_dim")]
        dim: usize,
    },
    Remote {
        dim: usize,
        endpoint_url: String,
        model_name: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
}

fn default_hashing_dim() -> usize {
    DEFAULT_HASHING_DIM
}
fn default_timeout_secs() -> f64 {
    30.0
}
fn default_max_in_flight() -> usize {
    4
}
fn default_batch_size() -> usize {
    64
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self::Hashing {
            dim: DEFAULT_HASHING_DIM,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn dim(&self) -> usize {
        match self {
            Self::Hashing { dim } | Self::Remote { dim, .. } => *dim,
        }
    }

    /// Range problems as `(field, message)` pairs.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.dim() < 2 {
            out.push(("dim".into(), format!("must be >= 2, got {}", self.dim())));
        }
        if let Self::Remote {
            endpoint_url,
            model_name,
            timeout_secs,
            max_in_flight,
            batch_size,
            ..
        } = self
        {
            if endpoint_url.trim().is_empty() {
                out.push(("endpoint_url".into(), "required for remote provider".into()));
            }
            if model_name.trim().is_empty() {
                out.push(("model_name".into(), "required for remote provider".into()));
            }
            if !timeout_secs.is_finite() || *timeout_secs <= 0.0 {
                out.push(("timeout_secs".into(), "must be positive".into()));
            }
            if *max_in_flight == 0 {
                out.push(("max_in_flight".into(), "must be >= 1".into()));
            }
            if *batch_size == 0 {
                out.push(("batch_size".into(), "must be >= 1".into()));
            }
        }
        out
    }

    pub fn build(
        &self,
        stopwords: Stopwords,
        api_key: Option<String>,
    ) -> Result<Box<dyn EmbeddingProvider>, EmbeddingError> {
        if let Some((field, msg)) = self.problems().into_iter().next() {
            return Err(EmbeddingError::InvalidConfig(format!("{field}: {msg}")));
        }
        Ok(match self {
            Self::Hashing { dim } => Box::new(HashingProvider::new(*dim, stopwords)?),
            Self::Remote {
                dim,
                endpoint_url,
                model_name,
                timeout_secs,
                max_in_flight,
                batch_size,
            } => Box::new(RemoteProvider {
                endpoint_url: endpoint_url.clone(),
                model_name: model_name.clone(),
                dim: *dim,
                api_key,
                max_in_flight: *max_in_flight,
                batch_size: *batch_size,
                retry: RetryPolicy {
                    timeout: Duration::from_secs_f64(*timeout_secs),
                    ..RetryPolicy::default()
                },
            }),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RemoteProvider {
    pub endpoint_url: String,
    pub model_name: String,
    pub dim: usize,
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub batch_size: usize,
    pub retry: RetryPolicy,
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteProvider {
    fn embed_batch(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let body = EmbeddingsRequest {
            model: &self.model_name,
            input: batch,
        };
        let resp: EmbeddingsResponse =
            post_json_with_retry(&self.endpoint_url, self.api_key.as_deref(), &body, &self.retry)
                .map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?;
        if resp.data.len() != batch.len() {
            return Err(EmbeddingError::InvalidResponse(format!(
                "expected {} embeddings, got {}",
                batch.len(),
                resp.data.len()
            )));
        }
        resp.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        left: self.dim,
                        right: d.embedding.len(),
                    });
                }
                EmbeddingVector::normalized(d.embedding)
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        check_texts(texts)?;
        let batches: Vec<&[String]> = texts.chunks(self.batch_size.max(1)).collect();
        let mut out = Vec::with_capacity(texts.len());
        // Bounded fan-out: at most `max_in_flight` batches outstanding at a time.
        for group in batches.chunks(self.max_in_flight.max(1)) {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|b| s.spawn(move || self.embed_batch(b)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}
