//! Blocking HTTP client for a remote embedding service.
//!
//! Wire protocol: `POST {endpoint}/embed` with `{"texts": [...]}`, answered by
//! `{"dim": n, "vectors": [[...], ...]}` holding one vector per text.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{EncoderSpec, TextEncoder};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

pub const ENDPOINT_ENV: &str = "F4_ENCODER_ENDPOINT";
pub const MAX_TEXT_BYTES: usize = 8192;

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(5),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

enum Attempt {
    Transient(Error),
    Fatal(Error),
}

pub struct RemoteEncoder {
    endpoint: String,
    dim: usize,
    client: Client,
    batch_size: usize,
    max_in_flight: usize,
    retry: RetryPolicy,
    bearer_token: Option<String>,
}

impl RemoteEncoder {
    pub fn new(endpoint: impl Into<String>, dim: usize) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::InvalidEncoderSpec(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            dim,
            client,
            batch_size: 32,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            bearer_token: None,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    /// Upper bound on concurrent batch requests.
    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Sent as `Authorization: Bearer <token>`.
    pub fn with_bearer_token(mut self, token: Option<String>) -> Self {
        self.bearer_token = token;
        self
    }

    fn url(&self) -> String {
        format!("{}/embed", self.endpoint)
    }

    fn send_once(&self, batch: &[&str]) -> std::result::Result<Vec<EmbeddingVector>, Attempt> {
        let mut req = self.client.post(self.url()).json(&EmbedRequest { texts: batch });
        if let Some(token) = &self.bearer_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            Attempt::Transient(Error::ServiceUnreachable {
                attempts: 0,
                message: e.to_string(),
            })
        })?;
        let status = resp.status();
        if status != StatusCode::OK {
            let message = resp.text().unwrap_or_default();
            let err = Error::RemoteError {
                status: status.as_u16(),
                message,
            };
            return Err(if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
                Attempt::Transient(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(Error::MalformedResponse(e.to_string())))?;
        self.check_response(batch.len(), body).map_err(Attempt::Fatal)
    }

    fn check_response(&self, expected: usize, body: EmbedResponse) -> Result<Vec<EmbeddingVector>> {
        if body.vectors.len() != expected {
            return Err(Error::MalformedResponse(format!(
                "{} vectors for {expected} texts",
                body.vectors.len()
            )));
        }
        if body.dim != self.dim {
            return Err(Error::MalformedResponse(format!(
                "service dim {} but encoder expects {}",
                body.dim, self.dim
            )));
        }
        body.vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                if v.len() != self.dim {
                    return Err(Error::MalformedResponse(format!(
                        "vector {i} has {} entries, expected {}",
                        v.len(),
                        self.dim
                    )));
                }
                EmbeddingVector::new(v)
                    .and_then(|v| v.l2_normalize())
                    .map_err(|e| Error::MalformedResponse(format!("vector {i}: {e}")))
            })
            .collect()
    }

    fn send_with_retry(&self, batch: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.max_attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            match self.send_once(batch) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(e)) => {
                    log::warn!("embedding request attempt {attempt}/{attempts} failed: {e}");
                    last = Some(e);
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff = (backoff * 2).min(self.retry.max_backoff);
                    }
                }
            }
        }
        Err(match last {
            Some(Error::ServiceUnreachable { message, .. }) => Error::ServiceUnreachable {
                attempts,
                message,
            },
            Some(e) => e,
            None => unreachable!("at least one attempt"),
        })
    }
}

impl TextEncoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        EncoderSpec::remote(self.endpoint.clone(), self.dim).fingerprint()
    }

    /// Splits `texts` into batches and sends up to `max_in_flight` at once.
    /// Each response is slotted back by its batch index.
    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::EmptyText);
        }
        if let Some(t) = texts.iter().find(|t| t.len() > MAX_TEXT_BYTES) {
            return Err(Error::TextTooLong {
                len: t.len(),
                max: MAX_TEXT_BYTES,
            });
        }
        let batches: Vec<&[&str]> = texts.chunks(self.batch_size).collect();
        if batches.len() == 1 {
            return self.send_with_retry(batches[0]);
        }

        let slots: Vec<Mutex<Option<Result<Vec<EmbeddingVector>>>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..self.max_in_flight.min(batches.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(batch) = batches.get(i) else { break };
                    let result = self.send_with_retry(batch);
                    let failed = result.is_err();
                    *slots[i].lock().unwrap() = Some(result);
                    if failed {
                        // stop handing out work; remaining slots stay empty
                        next.store(batches.len(), Ordering::Relaxed);
                    }
                });
            }
        });

        let mut out = Vec::with_capacity(texts.len());
        for slot in slots {
            match slot.into_inner().unwrap() {
                Some(Ok(vectors)) => out.extend(vectors),
                Some(Err(e)) => return Err(e),
                None => continue,
            }
        }
        if out.len() != texts.len() {
            return Err(Error::MalformedResponse(format!(
                "{} vectors for {} texts",
                out.len(),
                texts.len()
            )));
        }
        Ok(out)
    }
}
