//! Blocking JSON POST with per-request timeout and exponential backoff.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(250),
            timeout: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`.
    pub fn backoff(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response body: {0}")]
    Decode(String),
}

fn retryable_status(status: u16) -> bool {
    status == 429 || status >= 500
}

/// POSTs `body` as JSON and decodes the JSON reply. Transport failures, 429
/// and 5xx are retried; other statuses fail immediately.
pub fn post_json_with_retry<B, R>(
    url: &str,
    bearer: Option<&str>,
    body: &B,
    policy: &RetryPolicy,
) -> Result<R, HttpError>
where
    B: Serialize + ?Sized,
    R: DeserializeOwned,
{
    let client = reqwest::blocking::Client::builder()
        .timeout(policy.timeout)
        .build()
        .map_err(|e| HttpError::Transport {
            attempts: 0,
            message: e.to_string(),
        })?;
    let attempts = policy.attempts.max(1);
    let mut last = None;
    for attempt in 1..=attempts {
        if attempt > 1 {
            std::thread::sleep(policy.backoff(attempt - 1));
        }
        let mut req = client.post(url).json(body);
        if let Some(key) = bearer {
            req = req.bearer_auth(key);
        }
        match req.send() {
            Ok(resp) => {
                let status = resp.status().as_u16();
                let text = resp.text().unwrap_or_default();
                if (200..300).contains(&status) {
                    return serde_json::from_str(&text).map_err(|e| HttpError::Decode(e.to_string()));
                }
                let err = HttpError::Status { status, body: text };
                if !retryable_status(status) {
                    return Err(err);
                }
                last = Some(err);
            }
            Err(e) => {
                last = Some(HttpError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                })
            }
        }
    }
    Err(match last {
        Some(HttpError::Transport { message, .. }) => HttpError::Transport { attempts, message },
        Some(other) => other,
        None => unreachable!("at least one attempt is made"),
    })
}
