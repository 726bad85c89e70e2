//! HTTP client for an external language-model bridge.
//!
//! Endpoints:
//! - `GET /v1/embedding-table`: an `EEGT` tensor `[V, E]` immediately
//!   followed by the UTF-8 vocabulary, one token per line.
//! - `GET /v1/model-hash`: the served weights hash, as plain text or
//!   `{"hash": "..."}`.
//! - `POST /v1/generate`: `{"prompt", "embedding", "max_tokens"}` in,
//!   `{"text", "token_ids"}` out.

use std::fmt;
use std::io::{Cursor, Read};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::{parse_vocab, EmbeddingTable};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerateRequest<'a> {
    pub prompt: &'a str,
    pub embedding: &'a [f32],
    pub max_tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
    pub token_ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Clone)]
pub struct BridgeClient {
    base: String,
    agent: ureq::Agent,
}

impl fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BridgeClient").field("base", &self.base).finish()
    }
}

fn backend(sample: &str, reason: impl fmt::Display) -> Error {
    Error::Backend {
        sample: sample.to_string(),
        reason: reason.to_string(),
    }
}

fn describe(err: ureq::Error) -> String {
    match err {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            format!("HTTP {code}: {}", body.trim())
        }
        ureq::Error::Transport(t) => t.to_string(),
    }
}

impl BridgeClient {
    pub fn new(base_url: impl Into<String>) -> Result<Self> {
        Self::with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: impl Into<String>, timeout: Duration) -> Result<Self> {
        let base = base_url.into().trim_end_matches('/').to_string();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(Error::param(format!(
                "bridge URL {base:?} must start with http:// or https://"
            )));
        }
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Ok(BridgeClient { base, agent })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn get(&self, path: &str) -> Result<ureq::Response> {
        self.agent
            .get(&format!("{}{path}", self.base))
            .call()
            .map_err(|e| backend("-", format!("GET {path}: {}", describe(e))))
    }

    pub fn embedding_table(&self) -> Result<EmbeddingTable> {
        let mut body = Vec::new();
        self.get("/v1/embedding-table")?
            .into_reader()
            .read_to_end(&mut body)
            .map_err(|e| backend("-", e))?;
        decode_table_body(&body).map_err(|e| backend("-", format!("embedding table: {e}")))
    }

    pub fn model_hash(&self) -> Result<String> {
        let text = self.get("/v1/model-hash")?.into_string().map_err(|e| backend("-", e))?;
        #[derive(Deserialize)]
        struct Hash {
            hash: String,
        }
        Ok(match serde_json::from_str::<Hash>(&text) {
            Ok(h) => h.hash,
            Err(_) => text.trim().to_string(),
        })
    }

    /// Errors carry sample `-`; [`crate::decode::DecoderBackend`] fills in
    /// the real sample id.
    pub fn generate(&self, prompt: &str, embedding: &[f32], max_tokens: usize) -> Result<GenerateResponse> {
        let req = GenerateRequest {
            prompt,
            embedding,
            max_tokens,
        };
        self.agent
            .post(&format!("{}/v1/generate", self.base))
            .send_json(&req)
            .map_err(|e| backend("-", format!("POST /v1/generate: {}", describe(e))))?
            .into_json()
            .map_err(|e| backend("-", format!("bad generate response: {e}")))
    }
}

/// `EEGT` table bytes followed by newline-separated vocabulary.
pub fn encode_table_body(table: &EmbeddingTable) -> Vec<u8> {
    let mut body = table.vectors().to_eegt_bytes();
    for token in table.vocab() {
        body.extend_from_slice(token.as_bytes());
        body.push(b'\n');
    }
    body
}

pub fn decode_table_body(body: &[u8]) -> Result<EmbeddingTable> {
    let mut cursor = Cursor::new(body);
    let vectors = Tensor::read_eegt(&mut cursor)?;
    let rest = &body[cursor.position() as usize..];
    let text = std::str::from_utf8(rest).map_err(|e| Error::data(format!("vocabulary is not UTF-8: {e}")))?;
    EmbeddingTable::new(vectors, parse_vocab(text))
}
