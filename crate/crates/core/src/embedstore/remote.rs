use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{EmbeddingProvider, EmbeddingVector, LabelRef, ProviderError};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Body of `POST /embed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    /// Base64 of raw interleaved RGB bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dimension: usize,
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum CacheKey {
    Text(String),
    Patches { item_id: String, grid: usize },
}

/// HTTP client for the `/embed` protocol.
///
/// Every answer is cached in memory for the lifetime of the provider.
/// Non-200 answers and unparseable bodies are transport errors and are
/// retried up to `retries` extra times. Well-formed answers with the wrong
/// shape are malformed and fail at once.
pub struct RemoteProvider {
    url: String,
    dimension: usize,
    retries: u32,
    client: reqwest::blocking::Client,
    cache: Mutex<HashMap<CacheKey, Vec<EmbeddingVector>>>,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("url", &self.url)
            .field("dimension", &self.dimension)
            .finish()
    }
}

impl RemoteProvider {
    pub fn new(endpoint: &str, dimension: usize, timeout: Duration, retries: u32) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::config("provider.endpoint", e.to_string()))?;
        Ok(Self {
            url: format!("{}/embed", endpoint.trim_end_matches('/')),
            dimension,
            retries,
            client,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn post_once(&self, body: &EmbedRequest) -> Result<EmbedResponse, ProviderError> {
        let resp = self
            .client
            .post(&self.url)
            .json(body)
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(ProviderError::Transport(format!("HTTP {status}: {text}")));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| ProviderError::Transport(format!("malformed body: {e}")))
    }

    fn request(
        &self,
        key: CacheKey,
        body: EmbedRequest,
        expected: usize,
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let mut attempt = 0;
        let resp = loop {
            match self.post_once(&body) {
                Ok(r) => break r,
                Err(ProviderError::Transport(_)) if attempt < self.retries => attempt += 1,
                Err(e) => return Err(e),
            }
        };
        if resp.dimension != self.dimension {
            return Err(ProviderError::Malformed(format!(
                "dimension {} (expected {})",
                resp.dimension, self.dimension
            )));
        }
        if resp.vectors.len() != expected {
            return Err(ProviderError::Malformed(format!(
                "{} vectors (expected {expected})",
                resp.vectors.len()
            )));
        }
        let vectors = resp
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(ProviderError::Malformed(format!("vector of length {}", v.len())));
                }
                EmbeddingVector::new(v).map_err(|e| ProviderError::Malformed(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.cache
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| vectors.clone());
        Ok(vectors)
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn needs_images(&self) -> bool {
        true
    }

    fn text_embedding(&self, label: LabelRef<'_>) -> Result<EmbeddingVector, ProviderError> {
        let body = EmbedRequest {
            kind: "text".into(),
            label: Some(label.name.to_string()),
            item_id: None,
            image: None,
            grid: None,
        };
        let mut v = self.request(CacheKey::Text(label.name.to_string()), body, 1)?;
        Ok(v.remove(0))
    }

    fn patch_embeddings(
        &self,
        item_id: &str,
        label: LabelRef<'_>,
        image: Option<&ImageTensor>,
        grid: usize,
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let key = CacheKey::Patches {
            item_id: item_id.to_string(),
            grid,
        };
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let image = image.ok_or_else(|| ProviderError::ImageRequired(item_id.to_string()))?;
        let body = EmbedRequest {
            kind: "patches".into(),
            label: Some(label.name.to_string()),
            item_id: Some(item_id.to_string()),
            image: Some(base64::engine::general_purpose::STANDARD.encode(&image.pixels)),
            grid: Some(grid),
        };
        self.request(key, body, grid * grid)
    }
}
