//! Client for an HTTP embedding service.
//!
//! `GET /v1/health` returns `{status, model, dim}`; `POST /v1/embed` takes
//! `{model, pooling, snippets: [{lang, code}]}` and returns
//! `{dim, vectors}` with one vector per snippet in request order. Callers
//! sketch code before sending it.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::code::Lang;
use crate::encoder::{Embedding, PoolingStrategy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    /// Service root, e.g. `http://127.0.0.1:8080`.
    pub base_url: String,
    pub model: String,
    pub pooling: PoolingStrategy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Largest number of snippets per request.
    #[serde(default = "default_batch")]
    pub max_batch: usize,
}

fn default_timeout() -> u64 {
    30
}

fn default_batch() -> usize {
    64
}

impl ClientConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, pooling: PoolingStrategy) -> Self {
        ClientConfig {
            base_url: base_url.into(),
            model: model.into(),
            pooling,
            timeout_secs: default_timeout(),
            max_batch: default_batch(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub lang: Lang,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    pub pooling: PoolingStrategy,
    pub snippets: Vec<Snippet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: String,
    pub dim: usize,
}

/// A health-checked connection to an embedding service.
#[derive(Debug)]
pub struct RemoteEmbedder {
    config: ClientConfig,
    agent: ureq::Agent,
    health: Health,
}

fn transport(e: ureq::Error) -> Error {
    match e {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            Error::BackendFailure(format!("service answered {code}: {}", body.trim()))
        }
        ureq::Error::Transport(t) => Error::Transport(t.to_string()),
    }
}

fn decode<T: for<'de> Deserialize<'de>>(resp: ureq::Response, what: &str) -> Result<T> {
    let body = resp.into_string().map_err(|e| Error::Transport(e.to_string()))?;
    serde_json::from_str(&body).map_err(|e| Error::ProtocolMismatch(format!("{what}: {e}")))
}

impl RemoteEmbedder {
    /// Query `/v1/health` and keep the advertised dimension.
    pub fn connect(config: ClientConfig) -> Result<Self> {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build();
        let url = format!("{}/v1/health", config.base_url.trim_end_matches('/'));
        let health: Health = decode(agent.get(&url).call().map_err(transport)?, "health")?;
        if health.dim == 0 {
            return Err(Error::ProtocolMismatch("service advertises dimension 0".into()));
        }
        if health.model != config.model {
            log::warn!("service reports model `{}`, requesting `{}`", health.model, config.model);
        }
        Ok(RemoteEmbedder { config, agent, health })
    }

    pub fn health(&self) -> &Health {
        &self.health
    }

    pub fn dim(&self) -> usize {
        self.health.dim
    }

    /// One vector per snippet, in order. An empty list makes no request.
    pub fn embed(&self, snippets: &[Snippet]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(snippets.len());
        for chunk in snippets.chunks(self.config.max_batch.max(1)) {
            out.extend(self.embed_chunk(chunk)?);
        }
        Ok(out)
    }

    fn embed_chunk(&self, snippets: &[Snippet]) -> Result<Vec<Embedding>> {
        let url = format!("{}/v1/embed", self.config.base_url.trim_end_matches('/'));
        let req = EmbedRequest {
            model: self.config.model.clone(),
            pooling: self.config.pooling,
            snippets: snippets.to_vec(),
        };
        let resp: EmbedResponse = decode(
            self.agent.post(&url).send_json(&req).map_err(transport)?,
            "embed",
        )?;
        if resp.dim != self.health.dim {
            return Err(Error::DimensionMismatch(self.health.dim, resp.dim));
        }
        if resp.vectors.len() != snippets.len() {
            return Err(Error::ProtocolMismatch(format!(
                "sent {} snippets, received {} vectors",
                snippets.len(),
                resp.vectors.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != resp.dim {
                    Err(Error::DimensionMismatch(resp.dim, v.len()))
                } else {
                    Ok(Embedding(v))
                }
            })
            .collect()
    }
}

/// Connect, check health and embed `snippets` in one call.
pub fn remote_embed(config: &ClientConfig, snippets: &[(Lang, &str)]) -> Result<Vec<Embedding>> {
    if snippets.is_empty() {
        return Ok(Vec::new());
    }
    let client = RemoteEmbedder::connect(config.clone())?;
    let snippets: Vec<Snippet> = snippets
        .iter()
        .map(|&(lang, code)| Snippet { lang, code: code.to_owned() })
        .collect();
    client.embed(&snippets)
}
