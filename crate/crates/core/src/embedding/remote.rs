//! Client for a remote token-embedding service.
//!
//! Wire protocol: `POST {endpoint}/v1/embed` with body
//! `{"texts": [...], "mode": "tokens"}`. A 2xx response carries
//! `{"embeddings": [[[f64; e]; T]; n]}`; anything else carries
//! `{"error": "..."}`. Texts are split into batches that are sent by a bounded
//! pool of workers, and the results are stitched back together in input order.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendKind, EmbedError, Embedder, EmbeddingMatrix};

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub backoff_factor: f64,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff_base: Duration::from_millis(250),
            backoff_factor: 2.0,
            batch_size: 16,
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    mode: &'static str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
struct ErrorResponse {
    error: String,
}

pub struct RemoteEmbedder {
    config: BackendConfig,
    options: RemoteOptions,
    url: String,
    agent: ureq::Agent,
    retries: AtomicU64,
}

impl RemoteEmbedder {
    pub fn new(config: BackendConfig) -> Result<Self, EmbedError> {
        Self::with_options(config, RemoteOptions::default())
    }

    pub fn with_options(config: BackendConfig, options: RemoteOptions) -> Result<Self, EmbedError> {
        if config.kind != BackendKind::Remote {
            return Err(EmbedError::InvalidConfig(
                "config is not for the remote backend".into(),
            ));
        }
        config.validate()?;
        if options.batch_size == 0 || options.max_in_flight == 0 {
            return Err(EmbedError::InvalidConfig(
                "batch size and in-flight limit must be positive".into(),
            ));
        }
        let endpoint = config.endpoint.as_ref().expect("validated");
        let url = format!("{}/v1/embed", endpoint.as_str().trim_end_matches('/'));
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(options.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            options,
            url,
            agent,
            retries: AtomicU64::new(0),
        })
    }

    /// Total retries performed by this client so far.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let cap = self.options.backoff_base.as_secs_f64()
            * self.options.backoff_factor.powi(attempt as i32);
        if cap <= 0.0 {
            return Duration::ZERO;
        }
        Duration::from_secs_f64(rand::rng().random_range(0.0..=cap))
    }

    fn send_with_retry(&self, texts: &[String]) -> Result<Vec<Vec<Vec<f64>>>, EmbedError> {
        let mut attempt = 0;
        loop {
            match self.send_once(texts) {
                Ok(v) => return Ok(v),
                Err(Failure { error, retryable }) => {
                    if !retryable || attempt >= self.options.max_retries {
                        return Err(match error {
                            EmbedError::Transport { message, .. } => EmbedError::Transport {
                                attempts: attempt + 1,
                                message,
                            },
                            e => e,
                        });
                    }
                    let delay = self.backoff(attempt);
                    attempt += 1;
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    log::warn!(
                        "embedding request failed ({error}); retry {attempt}/{} in {}ms",
                        self.options.max_retries,
                        delay.as_millis()
                    );
                    std::thread::sleep(delay);
                }
            }
        }
    }

    fn send_once(&self, texts: &[String]) -> Result<Vec<Vec<Vec<f64>>>, Failure> {
        let body = serde_json::to_string(&EmbedRequest {
            texts,
            mode: "tokens",
        })
        .expect("request serialization is infallible");
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send(body.as_str())
            .map_err(|e| Failure::transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_string()
            .map_err(|e| Failure::transport(e.to_string()))?;

        if !(200..300).contains(&status) {
            let message = serde_json::from_str::<ErrorResponse>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            return Err(Failure {
                error: EmbedError::Service { status, message },
                retryable: status >= 500 || status == 429,
            });
        }
        let parsed: EmbedResponse = serde_json::from_str(&text).map_err(|e| Failure {
            error: EmbedError::Protocol(e.to_string()),
            retryable: false,
        })?;
        if parsed.embeddings.len() != texts.len() {
            return Err(Failure {
                error: EmbedError::Protocol(format!(
                    "sent {} texts, received {} embeddings",
                    texts.len(),
                    parsed.embeddings.len()
                )),
                retryable: false,
            });
        }
        Ok(parsed.embeddings)
    }

    fn to_matrix(
        &self,
        rows: Vec<Vec<f64>>,
        index: usize,
        width: usize,
    ) -> Result<EmbeddingMatrix, EmbedError> {
        if rows.is_empty() {
            return Err(EmbedError::EmptyMatrix.at_text(index));
        }
        let mut values = Vec::with_capacity(rows.len() * width);
        for row in &rows {
            if row.len() != width {
                return Err(EmbedError::DimensionMismatch {
                    index,
                    expected: width,
                    found: row.len(),
                });
            }
            // Narrow to binary32 so results survive the cache format bit-exactly.
            let start = values.len();
            values.extend(row.iter().map(|v| f64::from(*v as f32)));
            if self.config.normalize_rows {
                let stored = &mut values[start..];
                let norm = stored.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 && norm.is_finite() {
                    for v in stored {
                        *v = f64::from((*v / norm) as f32);
                    }
                }
            }
        }
        EmbeddingMatrix::new(rows.len(), width, values).map_err(|e| e.at_text(index))
    }
}

type BatchResult = Result<Vec<Vec<Vec<f64>>>, EmbedError>;

struct Failure {
    error: EmbedError,
    retryable: bool,
}

impl Failure {
    fn transport(message: String) -> Self {
        Self {
            error: EmbedError::Transport {
                attempts: 1,
                message,
            },
            retryable: true,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingMatrix>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText.at_text(i));
        }
        let batches: Vec<&[String]> = texts.chunks(self.options.batch_size).collect();
        let slots: Vec<Mutex<Option<BatchResult>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.options.max_in_flight.min(batches.len());

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::Relaxed);
                    let Some(batch) = batches.get(b) else { break };
                    let result = self.send_with_retry(batch);
                    let failed = result.is_err();
                    *slots[b].lock().expect("slot lock poisoned") = Some(result);
                    if failed {
                        // Stop handing out further batches; the error wins anyway.
                        next.store(batches.len(), Ordering::Relaxed);
                    }
                });
            }
        });

        let mut out = Vec::with_capacity(texts.len());
        let mut width = None;
        for (b, slot) in slots.into_iter().enumerate() {
            let result = slot
                .into_inner()
                .expect("slot lock poisoned")
                .ok_or_else(|| EmbedError::Protocol("batch was never sent".into()))
                .and_then(|r| r);
            for (j, rows) in result?.into_iter().enumerate() {
                let index = b * self.options.batch_size + j;
                let w = *width.get_or_insert_with(|| rows.first().map_or(0, Vec::len));
                out.push(self.to_matrix(rows, index, w)?);
            }
        }
        Ok(out)
    }
}

/// One-shot convenience: embeds `texts` with default client options.
pub fn embed_remote(
    texts: &[String],
    config: &BackendConfig,
) -> Result<Vec<EmbeddingMatrix>, EmbedError> {
    RemoteEmbedder::new(config.clone())?.embed_batch(texts)
}
