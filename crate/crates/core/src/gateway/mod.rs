//! Chat-completion client used to generate structured JSON from sentences
//! and to reconstruct sentences from that JSON.
//!
//! Requests go to any endpoint that speaks the common chat-completions shape
//! (`messages` in, `choices[0].message.content` out). Responses are cached on
//! disk by a hash of model, prompt and temperature.

mod cache;
mod harvest;
mod prompt;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::http::{ReqwestTransport, RetryPolicy, Secret, Transport};
use crate::schema::StructuredRep;

pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use harvest::{harvest_checked, harvest_structured, harvest_with, normalize_reconstruction, HarvestError, Harvested};
pub use prompt::{parse_few_shot, FewShotExample, Payload, PromptTemplate, RenderedPrompt, TemplateKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("provider unavailable after {attempts} attempt(s): {last}")]
    ProviderUnavailable { attempts: u32, last: String },
    #[error("provider credential missing or rejected")]
    AuthError,
    #[error("provider rejected the request with HTTP {0}")]
    ProviderRejected(u16),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("corrupt cache entry: {0}")]
    CacheCorrupt(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("payload does not match the {0:?} template slot")]
    SlotMismatch(TemplateKind),
    #[error("template error: {0}")]
    Template(String),
    #[error("duplicate request id {0}")]
    DuplicateId(String),
    #[error("invalid provider config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_s: u64,
    pub max_concurrency: usize,
    /// Name of the environment variable holding the API key.
    pub credential_env: Option<String>,
    pub cache_dir: Option<PathBuf>,
    /// Directory with `generate_json.toml`, `reconstruct.toml` and
    /// `few_shot.jsonl` overrides.
    pub prompt_dir: Option<PathBuf>,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_tokens: Option<u32>,
    pub temperature: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            timeout_s: 60,
            max_concurrency: 4,
            credential_env: None,
            cache_dir: None,
            prompt_dir: None,
            max_attempts: 3,
            base_delay_ms: 1000,
            max_tokens: None,
            temperature: 0.0,
        }
    }
}

impl ProviderConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts.max(1),
            base_delay: Duration::from_millis(self.base_delay_ms),
            ..RetryPolicy::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub id: String,
    pub model: String,
    pub prompt: RenderedPrompt,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub id: String,
    pub text: String,
    pub latency_ms: u64,
    pub usage: Option<TokenUsage>,
    pub cached: bool,
    /// Network attempts made; zero for a cache hit.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionRecord {
    pub id: String,
    pub original_text: String,
    pub structured: StructuredRep,
    pub reconstructed_text: String,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

pub struct Gateway {
    cfg: ProviderConfig,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    exec: Execution,
    corrupt_entries: AtomicUsize,
}

impl Gateway {
    pub fn new(cfg: ProviderConfig) -> Result<Self, GatewayError> {
        let transport = ReqwestTransport::new().map_err(|e| GatewayError::Config(e.to_string()))?;
        Self::with_transport(cfg, Arc::new(transport))
    }

    pub fn with_transport(cfg: ProviderConfig, transport: Arc<dyn Transport>) -> Result<Self, GatewayError> {
        let cache = cfg.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
        Ok(Self {
            retry: cfg.retry_policy(),
            cfg,
            transport,
            cache,
            exec: Execution::default(),
            corrupt_entries: AtomicUsize::new(0),
        })
    }

    pub fn retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    /// Cache entries that failed to load and were bypassed so far.
    pub fn corrupt_entries_seen(&self) -> usize {
        self.corrupt_entries.load(Ordering::Relaxed)
    }

    pub fn request(&self, id: impl Into<String>, template: &PromptTemplate, payload: Payload<'_>) -> Result<LlmRequest, GatewayError> {
        Ok(LlmRequest {
            id: id.into(),
            model: self.cfg.model.clone(),
            prompt: template.render(payload)?,
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
        })
    }

    pub fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let key = cache_key(&req.model, &req.prompt, req.temperature);
        if let Some(cache) = &self.cache {
            match cache.get(&key) {
                Ok(Some(entry)) => {
                    return Ok(LlmResponse {
                        id: req.id.clone(),
                        text: entry.response,
                        latency_ms: 0,
                        usage: entry.usage,
                        cached: true,
                        attempts: 0,
                    })
                }
                Ok(None) => {}
                Err(e) => {
                    self.corrupt_entries.fetch_add(1, Ordering::Relaxed);
                    log::warn!("ignoring cache entry for request {}: {e}", req.id);
                }
            }
        }

        let bearer = match &self.cfg.credential_env {
            Some(var) => Some(Secret::from_env(var).ok_or(GatewayError::AuthError)?),
            None => None,
        };
        if self.cfg.endpoint.is_empty() {
            return Err(GatewayError::Config("provider.endpoint is empty".into()));
        }

        let started = Instant::now();
        let (text, usage, attempts) = self.call_with_retries(req, bearer.as_ref())?;
        let latency_ms = started.elapsed().as_millis() as u64;

        if let Some(cache) = &self.cache {
            cache.put(&CacheEntry {
                key,
                model: req.model.clone(),
                temperature: req.temperature,
                prompt: req.prompt.clone(),
                response: text.clone(),
                usage,
            })?;
        }
        Ok(LlmResponse {
            id: req.id.clone(),
            text,
            latency_ms,
            usage,
            cached: false,
            attempts,
        })
    }

    fn call_with_retries(
        &self,
        req: &LlmRequest,
        bearer: Option<&Secret>,
    ) -> Result<(String, Option<TokenUsage>, u32), GatewayError> {
        let mut body = json!({
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.prompt.system},
                {"role": "user", "content": req.prompt.user},
            ],
            "temperature": req.temperature,
        });
        if let Some(max) = req.max_tokens {
            body["max_tokens"] = Value::from(max);
        }
        let timeout = Duration::from_secs(self.cfg.timeout_s);
        let max_attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            match self.transport.post_json(&self.cfg.endpoint, bearer, &body, timeout) {
                Ok(reply) if reply.is_success() => {
                    let parsed: ChatReply =
                        serde_json::from_str(&reply.body).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
                    let choice = parsed
                        .choices
                        .into_iter()
                        .next()
                        .ok_or_else(|| GatewayError::BadResponse("no choices".into()))?;
                    return Ok((choice.message.content, parsed.usage, attempt));
                }
                Ok(reply) if reply.is_auth_failure() => return Err(GatewayError::AuthError),
                Ok(reply) if !reply.is_transient() => return Err(GatewayError::ProviderRejected(reply.status)),
                Ok(reply) => last = format!("HTTP {}", reply.status),
                Err(e) => last = e.to_string(),
            }
            log::debug!("request {} attempt {attempt} failed: {last}", req.id);
            if attempt < max_attempts {
                thread::sleep(self.retry.delay_after(attempt));
            }
        }
        Err(GatewayError::ProviderUnavailable {
            attempts: max_attempts,
            last,
        })
    }

    /// Completes every request with at most `max_concurrency` in flight.
    /// Results keep the input order; ids must be unique.
    pub fn complete_many(&self, reqs: &[LlmRequest]) -> Result<Vec<Result<LlmResponse, GatewayError>>, GatewayError> {
        let mut seen = HashSet::new();
        if let Some(dup) = reqs.iter().find(|r| !seen.insert(r.id.as_str())) {
            return Err(GatewayError::DuplicateId(dup.id.clone()));
        }
        Ok(exec::map_bounded(reqs, self.cfg.max_concurrency.max(1), self.exec, |r| self.complete(r)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{HttpReply, TransportError};
    use crate::schema::RelationCatalog;
    use std::sync::Mutex;

    struct Mock {
        replies: Mutex<Vec<Result<HttpReply, TransportError>>>,
        calls: AtomicUsize,
        bodies: Mutex<Vec<Value>>,
    }

    impl Mock {
        fn new(replies: Vec<Result<HttpReply, TransportError>>) -> Arc<Self> {
            Arc::new(Self {
                replies: Mutex::new(replies),
                calls: AtomicUsize::new(0),
                bodies: Mutex::new(Vec::new()),
            })
        }
    }

    impl Transport for Mock {
        fn post_json(&self, _url: &str, _b: Option<&Secret>, body: &Value, _t: Duration) -> Result<HttpReply, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.bodies.lock().unwrap().push(body.clone());
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn ok(text: &str) -> Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: 200,
            body: json!({"choices":[{"message":{"role":"assistant","content":text}}],"usage":{"prompt_tokens":5,"completion_tokens":2}})
                .to_string(),
        })
    }

    fn status(code: u16) -> Result<HttpReply, TransportError> {
        Ok(HttpReply {
            status: code,
            body: String::new(),
        })
    }

    fn gateway(mock: Arc<Mock>, cfg: ProviderConfig) -> Gateway {
        Gateway::with_transport(cfg, mock).unwrap().retry_policy(RetryPolicy {
            base_delay: Duration::ZERO,
            ..RetryPolicy::default()
        })
    }

    fn base_cfg() -> ProviderConfig {
        ProviderConfig {
            endpoint: "http://llm.invalid/v1/chat/completions".into(),
            model: "test-model".into(),
            ..ProviderConfig::default()
        }
    }

    fn req(g: &Gateway, id: &str, sentence: &str) -> LlmRequest {
        let t = PromptTemplate::builtin(TemplateKind::GenerateJson, &RelationCatalog::default());
        g.request(id, &t, Payload::Sentence(sentence)).unwrap()
    }

    #[test]
    fn repeated_request_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Mock::new(vec![ok("  {\"a\": 1}\n")]);
        let g = gateway(
            mock.clone(),
            ProviderConfig {
                cache_dir: Some(dir.path().to_path_buf()),
                ..base_cfg()
            },
        );
        let r = req(&g, "s1", "Cells divide.");
        let first = g.complete(&r).unwrap();
        let second = g.complete(&r).unwrap();
        assert_eq!(mock.calls.load(Ordering::SeqCst), 1);
        assert!(!first.cached && second.cached);
        assert_eq!(first.text.as_bytes(), second.text.as_bytes());
        assert_eq!(second.attempts, 0);
        assert_eq!(second.usage, Some(TokenUsage { prompt_tokens: 5, completion_tokens: 2 }));
    }

    #[test]
    fn chat_body_shape() {
        let mock = Mock::new(vec![ok("x")]);
        let g = gateway(
            mock.clone(),
            ProviderConfig {
                max_tokens: Some(256),
                ..base_cfg()
            },
        );
        g.complete(&req(&g, "s1", "Cells divide.")).unwrap();
        let body = &mock.bodies.lock().unwrap()[0];
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 256);
    }

    #[test]
    fn missing_credential_fails_before_network() {
        let mock = Mock::new(vec![]);
        let g = gateway(
            mock.clone(),
            ProviderConfig {
                credential_env: Some("HIERSENT_TEST_SURELY_UNSET_KEY".into()),
                ..base_cfg()
            },
        );
        assert_eq!(g.complete(&req(&g, "s1", "x y")), Err(GatewayError::AuthError));
        assert_eq!(mock.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn transient_failures_are_retried() {
        let mock = Mock::new(vec![status(502), status(503), ok("done")]);
        let g = gateway(mock.clone(), base_cfg());
        let resp = g.complete(&req(&g, "s1", "x y")).unwrap();
        assert_eq!(resp.attempts, 3);
        assert_eq!(resp.text, "done");
    }

    #[test]
    fn exhausted_retries_and_hard_failures() {
        let g = gateway(Mock::new(vec![status(500), Err(TransportError::Timeout), status(503)]), base_cfg());
        assert!(matches!(
            g.complete(&req(&g, "s1", "x")),
            Err(GatewayError::ProviderUnavailable { attempts: 3, .. })
        ));
        let g = gateway(Mock::new(vec![status(401)]), base_cfg());
        assert_eq!(g.complete(&req(&g, "s1", "x")), Err(GatewayError::AuthError));
        let g = gateway(Mock::new(vec![status(400)]), base_cfg());
        assert_eq!(g.complete(&req(&g, "s1", "x")), Err(GatewayError::ProviderRejected(400)));
    }

    #[test]
    fn corrupt_cache_entry_is_bypassed_and_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Mock::new(vec![ok("fresh")]);
        let g = gateway(
            mock.clone(),
            ProviderConfig {
                cache_dir: Some(dir.path().to_path_buf()),
                ..base_cfg()
            },
        );
        let r = req(&g, "s1", "x");
        let key = cache_key(&r.model, &r.prompt, r.temperature);
        std::fs::write(dir.path().join(format!("{key}.json")), "garbage").unwrap();
        assert_eq!(g.complete(&r).unwrap().text, "fresh");
        assert_eq!(g.corrupt_entries_seen(), 1);
        assert!(g.complete(&r).unwrap().cached);
    }

    #[test]
    fn credential_never_reaches_cache_or_errors() {
        let var = "HIERSENT_TEST_SCRUB_KEY";
        let secret = "sk-test-7f3a9c-do-not-leak";
        std::env::set_var(var, secret);
        let dir = tempfile::tempdir().unwrap();
        let mock = Mock::new(vec![ok("answer"), status(500), status(500), status(500)]);
        let g = gateway(
            mock.clone(),
            ProviderConfig {
                credential_env: Some(var.into()),
                cache_dir: Some(dir.path().to_path_buf()),
                ..base_cfg()
            },
        );
        g.complete(&req(&g, "s1", "a")).unwrap();
        let err = g.complete(&req(&g, "s2", "b")).unwrap_err();
        assert!(!format!("{err} {err:?}").contains(secret));
        for entry in std::fs::read_dir(dir.path()).unwrap() {
            let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
            assert!(!text.contains(secret));
        }
        for body in mock.bodies.lock().unwrap().iter() {
            assert!(!body.to_string().contains(secret));
        }
        assert!(!format!("{:?}", g.config()).contains(secret));
    }

    #[test]
    fn complete_many_keeps_order_and_rejects_duplicate_ids() {
        let mock = Mock::new(vec![ok("same"), ok("same"), ok("same")]);
        let g = gateway(mock, base_cfg()).execution(Execution::Sequential);
        let reqs: Vec<_> = ["a", "b", "c"].iter().map(|id| req(&g, id, id)).collect();
        let out = g.complete_many(&reqs).unwrap();
        let ids: Vec<_> = out.iter().map(|r| r.as_ref().unwrap().id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let dup = vec![reqs[0].clone(), reqs[0].clone()];
        assert_eq!(g.complete_many(&dup).unwrap_err(), GatewayError::DuplicateId("a".into()));
    }
}
