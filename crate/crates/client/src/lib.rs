//! Async client for the review service.

use agentsim_core::validation::api::{ApiError, DecisionRequest, ItemDetail, ItemSummary, REVIEWER_HEADER};
use agentsim_core::validation::{QueueStats, ReviewItem};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;

pub use agentsim_core::validation::api::DEFAULT_PORT;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach review service at {url}: {message}")]
    Transport { url: String, message: String },
    #[error("HTTP {status} {}: {}", .body.error, .body.message)]
    Api { status: u16, body: ApiError },
    #[error("unexpected response from {url}: {message}")]
    Decode { url: String, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            Self::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusFilter {
    Pending,
    Decided,
    All,
}

impl StatusFilter {
    fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Decided => "decided",
            Self::All => "all",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReviewClient {
    base: String,
    http: reqwest::Client,
}

impl ReviewClient {
    /// `base_url` like `http://127.0.0.1:8377`.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn local(port: u16) -> Self {
        Self::new(format!("http://127.0.0.1:{port}"))
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn read<T: DeserializeOwned>(&self, url: &str, resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| ClientError::Transport {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        if status != StatusCode::OK {
            let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| ApiError {
                error: "http".into(),
                message: String::from_utf8_lossy(&bytes).into_owned(),
            });
            return Err(ClientError::Api {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode {
            url: url.to_string(),
            message: e.to_string(),
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base);
        let resp = self.http.get(&url).send().await.map_err(|e| ClientError::Transport {
            url: url.clone(),
            message: e.to_string(),
        })?;
        self.read(&url, resp).await
    }

    pub async fn list_items(&self, status: StatusFilter, limit: Option<usize>) -> Result<Vec<ItemSummary>, ClientError> {
        let mut path = format!("/api/review/items?status={}", status.as_str());
        if let Some(n) = limit {
            path.push_str(&format!("&limit={n}"));
        }
        self.get(&path).await
    }

    pub async fn item(&self, item_id: &str) -> Result<ItemDetail, ClientError> {
        self.get(&format!("/api/review/items/{}", encode(item_id))).await
    }

    pub async fn stats(&self) -> Result<QueueStats, ClientError> {
        self.get("/api/review/stats").await
    }

    pub async fn decide(
        &self,
        item_id: &str,
        reviewer_id: &str,
        request: &DecisionRequest,
    ) -> Result<ReviewItem, ClientError> {
        let url = format!("{}/api/review/items/{}/decision", self.base, encode(item_id));
        let resp = self
            .http
            .post(&url)
            .header(REVIEWER_HEADER, reviewer_id)
            .json(request)
            .send()
            .await
            .map_err(|e| ClientError::Transport {
                url: url.clone(),
                message: e.to_string(),
            })?;
        self.read(&url, resp).await
    }
}

/// Percent-encodes a path segment (item ids contain `:`).
fn encode(segment: &str) -> String {
    let mut out = String::with_capacity(segment.len());
    for b in segment.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
