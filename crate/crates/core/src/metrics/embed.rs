use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{tokenize, MetricError};
use crate::exec::{self, Execution};
use crate::http::{ReqwestTransport, RetryPolicy, Secret, Transport};

pub const OFFLINE_DIM: usize = 512;
pub const OFFLINE_PROVIDER_ID: &str = "hashed-tf-512";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            provider_id: self.provider_id.clone(),
        }
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MetricError> {
    if a.provider_id != b.provider_id {
        return Err(MetricError::ProviderMismatch(a.provider_id.clone(), b.provider_id.clone()));
    }
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding provider rejected credentials")]
    AuthError,
    #[error("embedding provider returned a malformed response: {0}")]
    BadResponse(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut v = self.embed_batch(&[text.to_string()])?;
        v.pop().ok_or_else(|| EmbedError::BadResponse("empty vector list".into()))
    }
}

/// Deterministic offline provider: term frequencies of standard tokens
/// hashed (FNV-1a, 64 bit) into 512 buckets.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedTfEmbedder;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl HashedTfEmbedder {
    pub fn bucket(token: &str) -> usize {
        (fnv1a(token.as_bytes()) % OFFLINE_DIM as u64) as usize
    }

    pub fn vector(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; OFFLINE_DIM];
        for t in tokenize(text).tokens() {
            values[Self::bucket(t)] += 1.0;
        }
        EmbeddingVector {
            values,
            provider_id: OFFLINE_PROVIDER_ID.to_string(),
        }
    }
}

impl EmbeddingProvider for HashedTfEmbedder {
    fn id(&self) -> &str {
        OFFLINE_PROVIDER_ID
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEmbedConfig {
    pub endpoint: String,
    /// Name of the environment variable holding a bearer token, if any.
    pub credential_env: Option<String>,
    pub provider_id: String,
    pub timeout_s: u64,
    pub max_concurrency: usize,
    pub batch_size: usize,
}

impl Default for RemoteEmbedConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            credential_env: None,
            provider_id: "remote".to_string(),
            timeout_s: 60,
            max_concurrency: 4,
            batch_size: 32,
        }
    }
}

/// Calls an HTTP endpoint accepting `{"texts": [...]}` and answering
/// `{"vectors": [[...], ...]}`. Failures surface as errors; there is no
/// fallback to the offline provider.
pub struct RemoteEmbedder {
    cfg: RemoteEmbedConfig,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    exec: Execution,
}

#[derive(Deserialize)]
struct VectorsReply {
    vectors: Vec<Vec<f64>>,
}

impl RemoteEmbedder {
    pub fn new(cfg: RemoteEmbedConfig) -> Result<Self, EmbedError> {
        let transport = ReqwestTransport::new().map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        Ok(Self::with_transport(cfg, Arc::new(transport)))
    }

    pub fn with_transport(cfg: RemoteEmbedConfig, transport: Arc<dyn Transport>) -> Self {
        Self {
            cfg,
            transport,
            retry: RetryPolicy::default(),
            exec: Execution::default(),
        }
    }

    pub fn retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn request(&self, texts: &[String], bearer: Option<&Secret>) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = json!({ "texts": texts });
        let timeout = Duration::from_secs(self.cfg.timeout_s);
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts.max(1) {
            match self.transport.post_json(&self.cfg.endpoint, bearer, &body, timeout) {
                Ok(reply) if reply.is_success() => {
                    let parsed: VectorsReply =
                        serde_json::from_str(&reply.body).map_err(|e| EmbedError::BadResponse(e.to_string()))?;
                    if parsed.vectors.len() != texts.len() {
                        return Err(EmbedError::BadResponse(format!(
                            "expected {} vectors, got {}",
                            texts.len(),
                            parsed.vectors.len()
                        )));
                    }
                    return Ok(parsed
                        .vectors
                        .into_iter()
                        .map(|values| EmbeddingVector {
                            values,
                            provider_id: self.cfg.provider_id.clone(),
                        })
                        .collect());
                }
                Ok(reply) if reply.is_auth_failure() => return Err(EmbedError::AuthError),
                Ok(reply) if !reply.is_transient() => {
                    return Err(EmbedError::ProviderUnavailable(format!("HTTP {}", reply.status)))
                }
                Ok(reply) => last = format!("HTTP {}", reply.status),
                Err(e) => last = e.to_string(),
            }
            if attempt < self.retry.max_attempts {
                thread::sleep(self.retry.delay_after(attempt));
            }
        }
        Err(EmbedError::ProviderUnavailable(last))
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.cfg.provider_id
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let bearer = match &self.cfg.credential_env {
            Some(var) => Some(Secret::from_env(var).ok_or(EmbedError::AuthError)?),
            None => None,
        };
        let chunks: Vec<&[String]> = texts.chunks(self.cfg.batch_size.max(1)).collect();
        let results = exec::map_bounded(&chunks, self.cfg.max_concurrency.max(1), self.exec, |chunk| {
            self.request(chunk, bearer.as_ref())
        });
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}
