//! OpenAI-compatible HTTP adapter (`/chat/completions`, `/embeddings`).
//!
//! The API key is read from the environment variable named in the config
//! each time the provider is built; it never appears in config files.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Completion, Part, PromptRequest, Provider, ProviderError, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIds {
    pub vlm: String,
    pub llm: String,
    pub embedder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub models: ModelIds,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    120
}

pub struct HttpProvider {
    client: Client,
    base_url: String,
    api_key: String,
    models: ModelIds,
}

impl HttpProvider {
    pub fn new(config: &HttpProviderConfig) -> Result<Self, String> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| format!("environment variable `{}` is not set", config.api_key_env))?;
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| format!("http client: {e}"))?;
        Ok(Self {
            client,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            api_key,
            models: config.models.clone(),
        })
    }

    fn model(&self, role: Role) -> &str {
        match role {
            Role::Vlm => &self.models.vlm,
            Role::Llm => &self.models.llm,
            Role::Embedder => &self.models.embedder,
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let resp = self
            .client
            .post(format!("{}{path}", self.base_url))
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| ProviderError::Unreachable(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(ProviderError::RateLimited { retry_after });
        }
        if status.is_server_error() {
            return Err(ProviderError::Unreachable(format!("server returned {status}")));
        }
        let text = resp.text().map_err(|e| ProviderError::Unreachable(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Rejected(format!("{status}: {text}")));
        }
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::Unreachable(format!("undecodable response body: {e}")))
    }
}

/// Chat-completions body for a request, corrections rendered as
/// assistant/user turn pairs after the original prompt.
pub(crate) fn chat_body(req: &PromptRequest, model: &str) -> Value {
    let content: Vec<Value> = req
        .parts
        .iter()
        .map(|p| match p {
            Part::Text(t) => json!({"type": "text", "text": t}),
            Part::MediaRef(uri) => json!({"type": "image_url", "image_url": {"url": uri}}),
        })
        .collect();
    let mut messages = vec![json!({"role": "user", "content": content})];
    for c in &req.corrections {
        messages.push(json!({"role": "assistant", "content": c.previous_output}));
        messages.push(json!({"role": "user", "content": c.instruction()}));
    }
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    });
    if let Some(shape) = &req.response_schema {
        body["response_format"] = json!({
            "type": "json_schema",
            "json_schema": {"name": "response", "schema": shape.to_json_schema()},
        });
    }
    body
}

impl Provider for HttpProvider {
    fn complete(&self, req: &PromptRequest) -> Result<Completion, ProviderError> {
        let model = self.model(req.role);
        let body = self.post("/chat/completions", &chat_body(req, model))?;
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Unreachable("response has no message content".into()))?;
        Ok(Completion {
            text: text.to_string(),
            model_id: body["model"].as_str().unwrap_or(model).to_string(),
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let body = self.post(
            "/embeddings",
            &json!({"model": self.models.embedder, "input": texts}),
        )?;
        let data = body["data"]
            .as_array()
            .ok_or_else(|| ProviderError::Unreachable("embedding response has no data".into()))?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item["index"].as_u64().map_or(pos, |i| i as usize);
            let vector = item["embedding"]
                .as_array()
                .ok_or_else(|| ProviderError::Unreachable("embedding item without vector".into()))?
                .iter()
                .map(|x| x.as_f64().unwrap_or(f64::NAN))
                .collect();
            rows.push((index, vector));
        }
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Correction, Field, Shape};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves canned (status, body) replies, one per connection, and
    /// returns the request bodies it saw.
    fn serve(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nretry-after: 0\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (addr, handle)
    }

    fn provider(base_url: String) -> HttpProvider {
        std::env::set_var("RAVEN_TEST_KEY", "secret");
        HttpProvider::new(&HttpProviderConfig {
            base_url,
            api_key_env: "RAVEN_TEST_KEY".into(),
            models: ModelIds {
                vlm: "vlm-x".into(),
                llm: "llm-x".into(),
                embedder: "emb-x".into(),
            },
            timeout_s: 5,
        })
        .unwrap()
    }

    #[test]
    fn missing_key_env_is_an_error() {
        let cfg = HttpProviderConfig {
            base_url: "http://localhost".into(),
            api_key_env: "RAVEN_DEFINITELY_UNSET_KEY".into(),
            models: ModelIds {
                vlm: "a".into(),
                llm: "b".into(),
                embedder: "c".into(),
            },
            timeout_s: 1,
        };
        assert!(HttpProvider::new(&cfg).is_err());
    }

    #[test]
    fn chat_body_layout() {
        let mut req = PromptRequest::new(
            Role::Vlm,
            vec![Part::Text("look".into()), Part::MediaRef("gs://clip.mp4".into())],
        )
        .with_schema(Shape::object(vec![Field::required("a", Shape::string())]));
        req.corrections.push(Correction {
            previous_output: "{bad".into(),
            violation: "$: invalid JSON".into(),
        });
        let body = chat_body(&req, "m");
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "gs://clip.mp4");
        assert_eq!(body["messages"][1]["role"], "assistant");
        assert_eq!(body["messages"][1]["content"], "{bad");
        assert!(body["messages"][2]["content"].as_str().unwrap().contains("$: invalid JSON"));
        assert_eq!(body["response_format"]["json_schema"]["schema"]["required"], json!(["a"]));
    }

    #[test]
    fn completion_and_embedding_round_trip() {
        let (addr, handle) = serve(vec![
            (200, r#"{"model":"vlm-x-001","choices":[{"message":{"content":"{\"a\":\"b\"}"}}]}"#.into()),
            (200, r#"{"data":[{"index":1,"embedding":[0,1]},{"index":0,"embedding":[1,0]}]}"#.into()),
        ]);
        let p = provider(addr);
        let req = PromptRequest::new(Role::Vlm, vec![Part::Text("hi".into())]);
        let c = p.complete(&req).unwrap();
        assert_eq!(c.text, r#"{"a":"b"}"#);
        assert_eq!(c.model_id, "vlm-x-001");
        let v = p.embed(&["x".into(), "y".into()]).unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let seen = handle.join().unwrap();
        assert!(seen[0].contains("\"model\":\"vlm-x\""));
        assert!(seen[1].contains("\"input\":[\"x\",\"y\"]"));
    }

    #[test]
    fn status_codes_map_to_error_kinds() {
        let (addr, handle) = serve(vec![
            (429, "{}".into()),
            (503, "{}".into()),
            (400, r#"{"error":"bad"}"#.into()),
        ]);
        let p = provider(addr);
        let req = PromptRequest::new(Role::Llm, vec![Part::Text("hi".into())]);
        assert_eq!(
            p.complete(&req),
            Err(ProviderError::RateLimited {
                retry_after: Some(Duration::from_secs(0))
            })
        );
        assert!(matches!(p.complete(&req), Err(ProviderError::Unreachable(_))));
        assert!(matches!(p.complete(&req), Err(ProviderError::Rejected(_))));
        handle.join().unwrap();
    }
}
