//! Deterministic offline provider backed by a fixture file.
//!
//! Completions are looked up by [`PromptRequest::hash`]. A fixture entry is
//! either one response used for every attempt or a list indexed by attempt
//! (the last entry repeats). Embeddings are character-trigram counts hashed
//! into [`STUB_DIMENSION`] buckets with FNV-1a, then L2-normalized; the
//! text is passed through `normalize_category_name` and padded with one
//! space on each side before windowing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fnv1a64, l2_normalize, Completion, PromptRequest, Provider, ProviderError, Role};
use crate::model::normalize_category_name;

pub const STUB_DIMENSION: usize = 256;

/// Text returned for attempts forced to fail.
const FORCED_FAILURE_TEXT: &str = "{\"forced_failure\": ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureResponse {
    Always(String),
    PerAttempt(Vec<String>),
}

impl FixtureResponse {
    fn for_attempt(&self, attempt_index: usize) -> Option<&str> {
        match self {
            FixtureResponse::Always(s) => Some(s),
            FixtureResponse::PerAttempt(list) => list
                .get(attempt_index)
                .or_else(|| list.last())
                .map(String::as_str),
        }
    }
}

/// Makes the first `attempts` attempts for `hash` return unparseable text
/// (every attempt when `attempts` is absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedFailure {
    pub hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default)]
    pub responses: BTreeMap<String, FixtureResponse>,
    #[serde(default)]
    pub schema_failures: Vec<ForcedFailure>,
}

impl Fixture {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text + "\n")
    }

    pub fn insert(&mut self, req: &PromptRequest, response: impl Into<String>) -> String {
        let hash = req.hash();
        self.responses
            .insert(hash.clone(), FixtureResponse::Always(response.into()));
        hash
    }

    pub fn insert_sequence(&mut self, req: &PromptRequest, responses: Vec<String>) -> String {
        let hash = req.hash();
        self.responses
            .insert(hash.clone(), FixtureResponse::PerAttempt(responses));
        hash
    }

    pub fn force_failure(&mut self, req: &PromptRequest, attempts: Option<usize>) {
        self.schema_failures.push(ForcedFailure {
            hash: req.hash(),
            attempts,
        });
    }

    pub fn merge(&mut self, other: Fixture) {
        self.responses.extend(other.responses);
        self.schema_failures.extend(other.schema_failures);
    }
}

pub struct StubProvider {
    fixture: Fixture,
}

impl StubProvider {
    pub fn new(fixture: Fixture) -> Self {
        Self { fixture }
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        Fixture::load(path).map(Self::new)
    }

    pub fn model_id(role: Role) -> &'static str {
        match role {
            Role::Vlm => "stub-vlm",
            Role::Llm => "stub-llm",
            Role::Embedder => "stub-trigram-256",
        }
    }
}

impl Provider for StubProvider {
    fn complete(&self, req: &PromptRequest) -> Result<Completion, ProviderError> {
        let hash = req.hash();
        let attempt_index = req.corrections.len();
        let forced = self.fixture.schema_failures.iter().any(|f| {
            f.hash == hash && f.attempts.is_none_or(|n| attempt_index < n)
        });
        let model_id = Self::model_id(req.role).to_string();
        if forced {
            return Ok(Completion {
                text: FORCED_FAILURE_TEXT.to_string(),
                model_id,
            });
        }
        let text = self
            .fixture
            .responses
            .get(&hash)
            .and_then(|r| r.for_attempt(attempt_index))
            .ok_or(ProviderError::FixtureMiss { hash })?;
        Ok(Completion {
            text: text.to_string(),
            model_id,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        texts
            .iter()
            .map(|t| trigram_embedding(t).ok_or(ProviderError::EmptyInput))
            .collect()
    }
}

/// The stub embedding of `text`, or `None` when it normalizes to nothing.
pub fn trigram_embedding(text: &str) -> Option<Vec<f64>> {
    let normalized = normalize_category_name(text);
    if normalized.is_empty() {
        return None;
    }
    let chars: Vec<char> = std::iter::once(' ')
        .chain(normalized.chars())
        .chain(std::iter::once(' '))
        .collect();
    let mut v = vec![0.0; STUB_DIMENSION];
    let mut buf = String::new();
    for window in chars.windows(3) {
        buf.clear();
        buf.extend(window);
        let bucket = (fnv1a64(buf.as_bytes()) % STUB_DIMENSION as u64) as usize;
        v[bucket] += 1.0;
    }
    l2_normalize(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Field, Gateway, Part, RetryPolicy, Shape};
    use std::hash::Hasher;
    use std::sync::Arc;

    /// Independent trigram embedding: counts trigrams in a map first and
    /// hashes with the `fnv` crate.
    fn oracle_embedding(text: &str) -> Vec<f64> {
        let padded = format!(" {} ", normalize_category_name(text));
        let chars: Vec<char> = padded.chars().collect();
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for i in 0..chars.len() - 2 {
            let tri: String = chars[i..i + 3].iter().collect();
            *counts.entry(tri).or_default() += 1.0;
        }
        let mut v = vec![0.0f64; 256];
        for (tri, n) in counts {
            let mut h = fnv::FnvHasher::default();
            h.write(tri.as_bytes());
            v[(h.finish() % 256) as usize] += n;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn request() -> PromptRequest {
        PromptRequest::new(Role::Vlm, vec![Part::MediaRef("file://lincoln.mp4".into()), Part::Text("categorize".into())])
            .with_schema(Shape::object(vec![Field::required("raw_category", Shape::non_empty_string())]))
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 1,
            backoff_factor: 1.0,
        }
    }

    #[test]
    fn embedding_matches_oracle() {
        for text in ["abc", "History", "Travel & Events", "x", "How-To"] {
            let got = trigram_embedding(text).unwrap();
            let want = oracle_embedding(text);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12, "{text}");
            }
        }
    }

    #[test]
    fn embedding_similarity_ordering() {
        let history = oracle_embedding("history");
        let historical = oracle_embedding("historical");
        let cooking = oracle_embedding("cooking");
        assert!(cos(&history, &historical) > cos(&history, &cooking));
        let stub = StubProvider::new(Fixture::default());
        let out = stub.embed(&["history".into(), "history".into()]).unwrap();
        assert_eq!(out[0], out[1]);
        assert!((cos(&out[0], &out[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn echoes_fixture() {
        let mut fixture = Fixture::default();
        fixture.insert(&request(), r#"{"raw_category":"History"}"#);
        let gw = Gateway::new(Arc::new(StubProvider::new(fixture)), fast());
        let a = gw.complete_structured(&request()).unwrap();
        let b = gw.complete_structured(&request()).unwrap();
        assert_eq!(a.attempt_count, 1);
        assert_eq!(a.parsed.as_ref().unwrap()["raw_category"], "History");
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert_eq!(a.model_id, "stub-vlm");
    }

    #[test]
    fn per_attempt_sequence_recovers_on_second_attempt() {
        let mut fixture = Fixture::default();
        fixture.insert_sequence(
            &request(),
            vec!["not json".into(), r#"{"raw_category":"History"}"#.into()],
        );
        let gw = Gateway::new(Arc::new(StubProvider::new(fixture)), fast());
        assert_eq!(gw.complete_structured(&request()).unwrap().attempt_count, 2);
    }

    #[test]
    fn forced_failures() {
        let mut fixture = Fixture::default();
        fixture.insert(&request(), r#"{"raw_category":"History"}"#);
        fixture.force_failure(&request(), Some(1));
        let gw = Gateway::new(Arc::new(StubProvider::new(fixture.clone())), fast());
        assert_eq!(gw.complete_structured(&request()).unwrap().attempt_count, 2);

        fixture.schema_failures.clear();
        fixture.force_failure(&request(), None);
        let gw = Gateway::new(Arc::new(StubProvider::new(fixture)), fast());
        assert!(matches!(
            gw.complete_structured(&request()),
            Err(crate::gateway::GatewayError::MalformedOutput { attempts: 3, .. })
        ));
    }

    #[test]
    fn miss_is_reported_with_hash() {
        let stub = StubProvider::new(Fixture::default());
        let err = stub.complete(&request()).unwrap_err();
        assert_eq!(err, ProviderError::FixtureMiss { hash: request().hash() });
    }

    #[test]
    fn fixture_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        let mut fixture = Fixture::default();
        fixture.insert(&request(), "a");
        fixture.force_failure(&request(), Some(2));
        fixture.save(&path).unwrap();
        assert_eq!(Fixture::load(&path).unwrap(), fixture);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("schema_failures"));
    }
}
