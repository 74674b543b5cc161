//! HTTP clients for remote language and perception models.
//!
//! Wire contracts (JSON over HTTP POST):
//!
//! * LLM completion: POST to the endpoint with
//!   `{"model", "prompt", "temperature", "max_tokens"}`, reply
//!   `{"text": "..."}`. Endpoint and key come from the environment
//!   (`CAPLAB_LLM_ENDPOINT`, `CAPLAB_LLM_API_KEY` by default).
//! * Remote captioner: POST `{base}/caption` with
//!   `{"object_view_id", "visible_fraction", "context_tokens"}`, reply
//!   `{"caption": "..."}`.
//! * Remote embedder: POST `{base}/embed` with `{"text"}`, reply
//!   `{"embedding": [..]}`. Endpoint and token via `CAPLAB_MODEL_ENDPOINT`
//!   and `CAPLAB_MODEL_TOKEN`.
//!
//! Keys travel in an `Authorization: Bearer` header. Timeouts and retry
//! counts are configuration, not environment.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, HashedEmbedder};
use crate::error::{Error, Result};
use crate::Embedding;

pub const LLM_ENDPOINT_ENV: &str = "CAPLAB_LLM_ENDPOINT";
pub const LLM_API_KEY_ENV: &str = "CAPLAB_LLM_API_KEY";
pub const MODEL_ENDPOINT_ENV: &str = "CAPLAB_MODEL_ENDPOINT";
pub const MODEL_TOKEN_ENV: &str = "CAPLAB_MODEL_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: usize,
}

/// Raw completion; the unparsed text is kept verbatim for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmReply {
    pub raw_text: String,
    pub latency_ms: u64,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
}

pub trait LlmClient {
    fn complete(&self, req: &LlmRequest) -> Result<LlmReply>;
    fn model_name(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub timeout_ms: u64,
    pub retries: u32,
    pub endpoint_env: String,
    pub api_key_env: String,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model: "default".into(),
            temperature: 0.0,
            max_tokens: 128,
            timeout_ms: 30_000,
            retries: 2,
            endpoint_env: LLM_ENDPOINT_ENV.into(),
            api_key_env: LLM_API_KEY_ENV.into(),
        }
    }
}

#[derive(Deserialize)]
struct WireLlmResponse {
    text: String,
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

/// Blocking HTTP LLM client with bounded retries.
pub struct HttpLlmClient {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    timeout: Duration,
    retries: u32,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(endpoint: String, api_key: Option<String>, settings: &LlmSettings) -> Self {
        let timeout = Duration::from_millis(settings.timeout_ms);
        Self {
            endpoint,
            api_key,
            model: settings.model.clone(),
            timeout,
            retries: settings.retries,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    /// Build from the environment; `None` when no endpoint is configured
    /// (offline mode).
    pub fn from_env(settings: &LlmSettings) -> Option<Self> {
        let endpoint = std::env::var(&settings.endpoint_env).ok()?;
        let api_key = std::env::var(&settings.api_key_env).ok();
        Some(Self::new(endpoint, api_key, settings))
    }

    fn post_json(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value> {
        let mut last_err = String::new();
        for _attempt in 0..=self.retries {
            let mut req = self.agent.post(url).timeout(self.timeout);
            if let Some(key) = &self.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    return resp
                        .into_json::<serde_json::Value>()
                        .map_err(|e| Error::Transport(format!("bad response body: {e}")));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Transport(format!(
            "POST {url} failed after {} attempts: {last_err}",
            self.retries + 1
        )))
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, req: &LlmRequest) -> Result<LlmReply> {
        let started = Instant::now();
        let body = serde_json::to_value(req)?;
        let value = self.post_json(&self.endpoint, &body)?;
        let wire: WireLlmResponse = serde_json::from_value(value)
            .map_err(|e| Error::Transport(format!("malformed completion: {e}")))?;
        Ok(LlmReply {
            raw_text: wire.text,
            latency_ms: started.elapsed().as_millis() as u64,
            prompt_tokens: wire.prompt_tokens,
            completion_tokens: wire.completion_tokens,
        })
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// Request body for the remote captioner: the symbolic stand-in for an
/// object crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteCaptionRequest {
    pub object_view_id: u64,
    pub visible_fraction: f64,
    pub context_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteCaptionResponse {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedResponse {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteModelSettings {
    pub timeout_ms: u64,
    pub retries: u32,
    pub endpoint_env: String,
    pub token_env: String,
}

impl Default for RemoteModelSettings {
    fn default() -> Self {
        Self {
            timeout_ms: 30_000,
            retries: 2,
            endpoint_env: MODEL_ENDPOINT_ENV.into(),
            token_env: MODEL_TOKEN_ENV.into(),
        }
    }
}

/// Client for a remote captioner/embedder service.
pub struct RemoteModelClient {
    base: String,
    token: Option<String>,
    timeout: Duration,
    retries: u32,
    agent: ureq::Agent,
}

impl RemoteModelClient {
    pub fn new(base: String, token: Option<String>, settings: &RemoteModelSettings) -> Self {
        let timeout = Duration::from_millis(settings.timeout_ms);
        Self {
            base: base.trim_end_matches('/').to_string(),
            token,
            timeout,
            retries: settings.retries,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn from_env(settings: &RemoteModelSettings) -> Option<Self> {
        let base = std::env::var(&settings.endpoint_env).ok()?;
        let token = std::env::var(&settings.token_env).ok();
        Some(Self::new(base, token, settings))
    }

    fn post<TReq: Serialize, TResp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &TReq,
    ) -> Result<TResp> {
        let url = format!("{}{path}", self.base);
        let value = serde_json::to_value(body)?;
        let mut last_err = String::new();
        for _ in 0..=self.retries {
            let mut req = self.agent.post(&url).timeout(self.timeout);
            if let Some(token) = &self.token {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            match req.send_json(value.clone()) {
                Ok(resp) => {
                    return resp
                        .into_json::<TResp>()
                        .map_err(|e| Error::Transport(format!("bad response body: {e}")));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::Transport(format!(
            "POST {url} failed after {} attempts: {last_err}",
            self.retries + 1
        )))
    }

    pub fn caption(&self, req: &RemoteCaptionRequest) -> Result<RemoteCaptionResponse> {
        self.post("/caption", req)
    }

    pub fn embed_text(&self, text: &str) -> Result<Embedding> {
        let resp: RemoteEmbedResponse =
            self.post("/embed", &RemoteEmbedRequest { text: text.into() })?;
        Ok(Embedding { values: resp.embedding })
    }
}

impl Embedder for RemoteModelClient {
    /// Falls back to the deterministic hashed embedder when the service is
    /// unreachable, so downstream consumers stay total.
    fn embed(&self, text: &str) -> Embedding {
        self.embed_text(text).unwrap_or_else(|_| HashedEmbedder::default().embed(text))
    }
}

impl crate::perceive::ViewCaptioner for RemoteModelClient {
    fn caption_view(
        &mut self,
        object: &crate::scene::ObjectGT,
        visible_fraction: f64,
        view_pose: crate::scene::CameraPose,
    ) -> Result<crate::perceive::CaptionRecord> {
        let resp = self.caption(&RemoteCaptionRequest {
            object_view_id: u64::from(object.id),
            visible_fraction,
            context_tokens: object.attribute_tokens.clone(),
        })?;
        Ok(crate::perceive::CaptionRecord {
            text: resp.caption.to_lowercase(),
            object_id_gt: object.id,
            view_pose,
            visible_fraction,
            corrupted: false,
        })
    }
}
