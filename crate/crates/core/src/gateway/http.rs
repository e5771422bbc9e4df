//! OpenAI-compatible HTTP providers.
//!
//! Chat: `POST {base}/chat/completions` with
//! `{model, messages:[{role, content}], temperature, max_tokens}`, reading
//! `choices[0].message.content`. Embeddings: `POST {base}/embeddings` with
//! `{model, input}`, reading `data[0].embedding`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, EmbeddingProvider};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            chat_model: "gpt-3.5-turbo".into(),
            embedding_model: "text-embedding-3-small".into(),
            api_key: None,
            timeout_secs: default_timeout_secs(),
        }
    }
}

struct Client {
    agent: ureq::Agent,
    cfg: HttpProviderConfig,
}

impl Client {
    fn new(cfg: HttpProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, cfg }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path);
        let mut req = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::MalformedResponse(format!("unreadable body: {e}")))?;
        match status {
            200..=299 => {}
            429 => return Err(Error::ProviderRateLimited { attempts: 1 }),
            408 => return Err(Error::ProviderTimeout(format!("status 408 from {url}"))),
            500..=599 => {
                return Err(Error::ProviderUnavailable {
                    status,
                    attempts: 1,
                })
            }
            _ => return Err(Error::ProviderRejected { status, body: text }),
        }
        if text.trim().is_empty() {
            return Err(Error::MalformedResponse("empty body".into()));
        }
        serde_json::from_str(&text).map_err(|e| Error::MalformedResponse(e.to_string()))
    }
}

fn map_transport(e: ureq::Error) -> Error {
    match e {
        ureq::Error::Timeout(t) => Error::ProviderTimeout(t.to_string()),
        other => {
            tracing::warn!(error = %other, "transport failure");
            Error::ProviderUnavailable {
                status: 0,
                attempts: 1,
            }
        }
    }
}

pub struct HttpChat(Client);

impl HttpChat {
    pub fn new(cfg: HttpProviderConfig) -> Self {
        Self(Client::new(cfg))
    }
}

impl ChatProvider for HttpChat {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        let mut body = json!({
            "model": self.0.cfg.chat_model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if !req.stop_sequences.is_empty() {
            body["stop"] = json!(req.stop_sequences);
        }
        let v = self.0.post("chat/completions", &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Error::MalformedResponse("missing choices[0].message.content".into()))
    }
}

pub struct HttpEmbedder(Client);

impl HttpEmbedder {
    pub fn new(cfg: HttpProviderConfig) -> Self {
        Self(Client::new(cfg))
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let body = json!({"model": self.0.cfg.embedding_model, "input": text});
        let v = self.0.post("embeddings", &body)?;
        let arr = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::MalformedResponse("missing data[0].embedding".into()))?;
        arr.iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| Error::MalformedResponse("non-numeric embedding value".into()))
            })
            .collect()
    }
}
