//! Uniform access to the vision, text and embedding models.
//!
//! Providers only move bytes; [`Gateway`] owns structured-output
//! enforcement (validate, then re-prompt with a correction), transport
//! retries with exponential backoff, the per-instance token bucket and the
//! embedding cache.

mod http;
mod ratelimit;
mod shape;
mod stub;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use http::{HttpProvider, HttpProviderConfig, ModelIds};
pub use ratelimit::TokenBucket;
pub use shape::{parse_model_json, Field, Shape};
pub use stub::{
    trigram_embedding, ForcedFailure, Fixture, FixtureResponse, StubProvider, STUB_DIMENSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Vlm,
    Llm,
    Embedder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Part {
    Text(String),
    MediaRef(String),
}

/// A rejected attempt fed back to the model on the next try.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub previous_output: String,
    pub violation: String,
}

impl Correction {
    pub fn instruction(&self) -> String {
        format!(
            "Your previous answer was rejected: {}. Reply again with only a JSON value that \
             matches the requested structure.",
            self.violation
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub role: Role,
    pub parts: Vec<Part>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_schema: Option<Shape>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Corrective turns appended by the retry loop. Not part of the
    /// request hash.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corrections: Vec<Correction>,
}

impl PromptRequest {
    pub fn new(role: Role, parts: Vec<Part>) -> Self {
        Self {
            role,
            parts,
            response_schema: None,
            temperature: 0.0,
            max_output_tokens: 2048,
            corrections: Vec::new(),
        }
    }

    pub fn with_schema(mut self, shape: Shape) -> Self {
        self.response_schema = Some(shape);
        self
    }

    /// Concatenation of all text parts, in order.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::MediaRef(_) => None,
            })
            .collect::<Vec<_>>()
            .join("")
    }

    /// Stable 64-bit key over the concatenated parts, as 16 hex digits.
    pub fn hash(&self) -> String {
        request_hash(&self.parts)
    }

    fn check(&self) -> Result<(), GatewayError> {
        if self.role == Role::Embedder {
            return Err(GatewayError::InvalidRequest(
                "embedder role cannot be used for completions".into(),
            ));
        }
        if self.role == Role::Llm && self.parts.iter().any(|p| matches!(p, Part::MediaRef(_))) {
            return Err(GatewayError::InvalidRequest(
                "media parts are only allowed on vlm requests".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if let Some(shape) = &self.response_schema {
            shape
                .well_formed()
                .map_err(|e| GatewayError::InvalidRequest(format!("response schema: {e}")))?;
        }
        Ok(())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Parts are encoded as a tag byte (`t` or `m`), the UTF-8 payload and a
/// NUL terminator, concatenated, then hashed with FNV-1a.
pub fn request_hash(parts: &[Part]) -> String {
    let mut buf = Vec::new();
    for part in parts {
        let (tag, body) = match part {
            Part::Text(t) => (b't', t),
            Part::MediaRef(m) => (b'm', m),
        };
        buf.push(tag);
        buf.extend_from_slice(body.as_bytes());
        buf.push(0);
    }
    format!("{:016x}", fnv1a64(&buf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<Value>,
    pub model_id: String,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
            backoff_factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts < 1 {
            return Err("retry.max_attempts must be >= 1".into());
        }
        if self.backoff_base_ms < 1 {
            return Err("retry.backoff_base_ms must be positive".into());
        }
        if self.backoff_factor.is_nan() || self.backoff_factor < 1.0 {
            return Err("retry.backoff_factor must be >= 1".into());
        }
        Ok(())
    }

    /// Delay before retrying after the given (1-based) failed attempt.
    pub fn backoff(&self, failed_attempt: u32) -> Duration {
        let exp = failed_attempt.saturating_sub(1) as i32;
        let ms = self.backoff_base_ms as f64 * self.backoff_factor.powi(exp);
        Duration::from_millis(ms.min(60_000.0) as u64)
    }
}

/// Raw completion as returned by a provider.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Unreachable(String),
    #[error("provider throttled the request")]
    RateLimited { retry_after: Option<Duration> },
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("no fixture entry for request hash {hash}")]
    FixtureMiss { hash: String },
    #[error("empty embedding input")]
    EmptyInput,
}

pub trait Provider: Send + Sync {
    fn complete(&self, req: &PromptRequest) -> Result<Completion, ProviderError>;

    /// One vector per input, same order. Need not be normalized.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("provider unreachable after {attempts} attempt(s): {message}")]
    ProviderUnreachable { attempts: u32, message: String },
    #[error("malformed output after {attempts} attempt(s): {}", violations.join("; "))]
    MalformedOutput {
        attempts: u32,
        raw_text: String,
        violations: Vec<String>,
    },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("provider rejected the request: {0}")]
    Rejected(String),
    #[error("no fixture entry for request hash {hash}")]
    FixtureMiss { hash: String },
    #[error("empty embedding input")]
    EmptyInput,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    /// Short stable name written to failure records.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::ProviderUnreachable { .. } => "provider_unreachable",
            GatewayError::MalformedOutput { .. } => "malformed_output",
            GatewayError::RateLimited { .. } => "rate_limited",
            GatewayError::Rejected(_) => "rejected",
            GatewayError::FixtureMiss { .. } => "fixture_miss",
            GatewayError::EmptyInput => "empty_input",
            GatewayError::InvalidRequest(_) => "invalid_request",
        }
    }
}

/// Anything that can turn text into unit vectors.
pub trait Embedder: Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    limiter: Option<TokenBucket>,
    policy: RetryPolicy,
    embed_cache: Mutex<HashMap<String, Vec<f64>>>,
    dimension: Mutex<Option<usize>>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, policy: RetryPolicy) -> Self {
        Self {
            provider,
            limiter: None,
            policy,
            embed_cache: Mutex::new(HashMap::new()),
            dimension: Mutex::new(None),
        }
    }

    pub fn with_rate_limit(mut self, limiter: TokenBucket) -> Self {
        self.limiter = Some(limiter);
        self
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub fn complete_structured(&self, req: &PromptRequest) -> Result<StructuredResponse, GatewayError> {
        self.complete_structured_with(req, |_| Vec::new())
    }

    /// Like [`Gateway::complete_structured`], with an extra semantic check
    /// run after the shape check. Its violations trigger the same corrective
    /// retry.
    pub fn complete_structured_with<F>(
        &self,
        req: &PromptRequest,
        extra_check: F,
    ) -> Result<StructuredResponse, GatewayError>
    where
        F: Fn(&Value) -> Vec<String>,
    {
        req.check()?;
        let policy = &self.policy;
        let mut current = req.clone();
        let mut last_transport: Option<GatewayError> = None;
        let mut last_malformed: Option<(String, Vec<String>)> = None;

        for attempt in 1..=policy.max_attempts {
            if let Some(bucket) = &self.limiter {
                bucket.acquire();
            }
            let completion = match self.provider.complete(&current) {
                Ok(c) => c,
                Err(ProviderError::Unreachable(message)) => {
                    tracing::warn!(attempt, %message, "provider unreachable");
                    last_transport = Some(GatewayError::ProviderUnreachable {
                        attempts: attempt,
                        message,
                    });
                    if attempt < policy.max_attempts {
                        std::thread::sleep(policy.backoff(attempt));
                    }
                    continue;
                }
                Err(ProviderError::RateLimited { retry_after }) => {
                    tracing::warn!(attempt, "provider throttled");
                    last_transport = Some(GatewayError::RateLimited { attempts: attempt });
                    if attempt < policy.max_attempts {
                        std::thread::sleep(retry_after.unwrap_or_else(|| policy.backoff(attempt)));
                    }
                    continue;
                }
                Err(ProviderError::Rejected(m)) => return Err(GatewayError::Rejected(m)),
                Err(ProviderError::FixtureMiss { hash }) => {
                    return Err(GatewayError::FixtureMiss { hash })
                }
                Err(ProviderError::EmptyInput) => return Err(GatewayError::EmptyInput),
            };
            last_transport = None;

            let Some(shape) = &current.response_schema else {
                return Ok(StructuredResponse {
                    raw_text: completion.text,
                    parsed: None,
                    model_id: completion.model_id,
                    attempt_count: attempt,
                });
            };

            let violations = match parse_model_json(&completion.text) {
                Err(e) => vec![e],
                Ok(value) => {
                    let mut v = shape.violations(&value);
                    if v.is_empty() {
                        v = extra_check(&value);
                    }
                    if v.is_empty() {
                        return Ok(StructuredResponse {
                            raw_text: completion.text,
                            parsed: Some(value),
                            model_id: completion.model_id,
                            attempt_count: attempt,
                        });
                    }
                    v
                }
            };
            tracing::debug!(attempt, violation = %violations[0], "structured output rejected");
            current.corrections.push(Correction {
                previous_output: completion.text.clone(),
                violation: violations[0].clone(),
            });
            last_malformed = Some((completion.text, violations));
        }

        if let Some(err) = last_transport {
            return Err(err);
        }
        let (raw_text, violations) = last_malformed.unwrap_or_default();
        Err(GatewayError::MalformedOutput {
            attempts: policy.max_attempts,
            raw_text,
            violations,
        })
    }

    /// Unit-norm embeddings, one per input. Results are cached for the
    /// lifetime of the gateway.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() || texts.iter().any(|t| crate::model::normalize_category_name(t).is_empty()) {
            return Err(GatewayError::EmptyInput);
        }
        let missing: Vec<String> = {
            let cache = self.embed_cache.lock().expect("embed cache poisoned");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .filter(|t| !cache.contains_key(t.as_str()) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let vectors = self.embed_uncached(&missing)?;
            let mut cache = self.embed_cache.lock().expect("embed cache poisoned");
            for (text, v) in missing.into_iter().zip(vectors) {
                cache.insert(text, v);
            }
        }
        let cache = self.embed_cache.lock().expect("embed cache poisoned");
        Ok(texts.iter().map(|t| cache[t.as_str()].clone()).collect())
    }

    fn embed_uncached(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let mut attempt = 0;
        let raw = loop {
            attempt += 1;
            if let Some(bucket) = &self.limiter {
                bucket.acquire();
            }
            match self.provider.embed(texts) {
                Ok(v) => break v,
                Err(ProviderError::Unreachable(message)) if attempt >= self.policy.max_attempts => {
                    return Err(GatewayError::ProviderUnreachable {
                        attempts: attempt,
                        message,
                    })
                }
                Err(ProviderError::RateLimited { .. }) if attempt >= self.policy.max_attempts => {
                    return Err(GatewayError::RateLimited { attempts: attempt })
                }
                Err(ProviderError::Unreachable(_)) => std::thread::sleep(self.policy.backoff(attempt)),
                Err(ProviderError::RateLimited { retry_after }) => {
                    std::thread::sleep(retry_after.unwrap_or_else(|| self.policy.backoff(attempt)))
                }
                Err(ProviderError::Rejected(m)) => return Err(GatewayError::Rejected(m)),
                Err(ProviderError::FixtureMiss { hash }) => return Err(GatewayError::FixtureMiss { hash }),
                Err(ProviderError::EmptyInput) => return Err(GatewayError::EmptyInput),
            }
        };
        if raw.len() != texts.len() {
            return Err(GatewayError::Rejected(format!(
                "embedder returned {} vectors for {} inputs",
                raw.len(),
                texts.len()
            )));
        }
        let mut dim = self.dimension.lock().expect("dimension lock poisoned");
        let mut out = Vec::with_capacity(raw.len());
        for v in raw {
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected || expected == 0 {
                return Err(GatewayError::Rejected(format!(
                    "embedding dimension {} differs from {expected}",
                    v.len()
                )));
            }
            out.push(l2_normalize(v).ok_or(GatewayError::EmptyInput)?);
        }
        Ok(out)
    }
}

impl Embedder for Gateway {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Gateway::embed(self, texts)
    }
}

pub(crate) fn l2_normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}
