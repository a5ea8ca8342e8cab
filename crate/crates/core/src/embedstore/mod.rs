//! Embedding data model, similarity, and embedding providers.
//!
//! Three providers implement [`EmbeddingProvider`]:
//!
//! - [`FileProvider`] serves vectors from a binary store written by an
//!   external exporter.
//! - [`SyntheticProvider`] derives vectors from seeded hashes. Foreground
//!   patches lean towards the label's text direction and background patches
//!   are pure noise, so patch selection has a known ground truth.
//! - [`RemoteProvider`] speaks the `/embed` JSON protocol over HTTP and
//!   caches every answer.

mod file;
mod remote;
mod store;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub use file::FileProvider;
pub use remote::{EmbedRequest, EmbedResponse, RemoteProvider};
pub use store::{
    load_store, read_label_table, save_store, write_label_table, EmbeddingStore, StoreError,
    STORE_FORMAT_VERSION, STORE_MAGIC, TEXT_SLOT,
};
pub use synthetic::SyntheticProvider;

pub const DEFAULT_DIMENSION: usize = 512;

/// Finite 32-bit embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = Error;
    fn try_from(v: Vec<f32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Patch position of a record, or the label's text embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Text,
    Patch(u16),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EmbeddingKey {
    pub item_id: String,
    pub slot: Slot,
    pub label_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub key: EmbeddingKey,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchScore {
    pub patch_index: usize,
    pub score: f64,
}

/// A class label as seen by providers.
#[derive(Debug, Clone, Copy)]
pub struct LabelRef<'a> {
    pub id: u32,
    pub name: &'a str,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no embedding for {0}")]
    Missing(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("provider needs pixel data for {0}")]
    ImageRequired(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// Whether [`patch_embeddings`](Self::patch_embeddings) reads pixels.
    fn needs_images(&self) -> bool {
        false
    }

    fn text_embedding(&self, label: LabelRef<'_>) -> Result<EmbeddingVector, ProviderError>;

    /// One vector per patch of a `grid`×`grid` partition, in row-major
    /// patch order.
    fn patch_embeddings(
        &self,
        item_id: &str,
        label: LabelRef<'_>,
        image: Option<&ImageTensor>,
        grid: usize,
    ) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

pub fn pseudo_sentence(label: &str) -> Result<String> {
    if label.is_empty() {
        return Err(Error::Empty("label"));
    }
    Ok(format!("Image of a {label}"))
}

/// `(a·b) / (‖a‖‖b‖)`, accumulated in f64.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}
fn default_sigma() -> f64 {
    0.3
}
fn default_foreground() -> f64 {
    0.5
}
fn default_background_scale() -> f64 {
    1.0
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    File {
        store: PathBuf,
        /// Sidecar mapping label ids to label strings.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<PathBuf>,
    },
    Synthetic {
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_foreground")]
        foreground_fraction: f64,
        /// Norm of background patch vectors relative to unit-norm
        /// foreground directions.
        #[serde(default = "default_background_scale")]
        background_scale: f64,
    },
    Remote {
        endpoint: String,
        #[serde(default = "default_dimension")]
        dimension: usize,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_retries")]
        retries: u32,
    },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Synthetic {
            dimension: default_dimension(),
            sigma: default_sigma(),
            foreground_fraction: default_foreground(),
            background_scale: default_background_scale(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProviderConfig::File { store, labels } => {
                if !store.exists() {
                    return Err(Error::config(
                        "provider.store",
                        format!("{} does not exist", store.display()),
                    ));
                }
                if let Some(l) = labels {
                    if !l.exists() {
                        return Err(Error::config(
                            "provider.labels",
                            format!("{} does not exist", l.display()),
                        ));
                    }
                }
            }
            ProviderConfig::Synthetic {
                dimension,
                sigma,
                foreground_fraction,
                background_scale,
            } => {
                if *dimension == 0 {
                    return Err(Error::config("provider.dimension", "must be positive"));
                }
                if !(0.0..=1.0).contains(sigma) {
                    return Err(Error::config("provider.sigma", "must lie in [0, 1]"));
                }
                if !(0.0..=1.0).contains(foreground_fraction) {
                    return Err(Error::config(
                        "provider.foreground_fraction",
                        "must lie in [0, 1]",
                    ));
                }
                if !(*background_scale > 0.0 && background_scale.is_finite()) {
                    return Err(Error::config("provider.background_scale", "must be positive"));
                }
            }
            ProviderConfig::Remote {
                endpoint,
                dimension,
                ..
            } => {
                if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
                    return Err(Error::config("provider.endpoint", "must be an http(s) URL"));
                }
                if *dimension == 0 {
                    return Err(Error::config("provider.dimension", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Instantiate the configured backend. `seed` only affects the
    /// synthetic provider.
    pub fn build(&self, seed: u64) -> Result<Box<dyn EmbeddingProvider>> {
        self.validate()?;
        Ok(match self {
            ProviderConfig::File { store, labels } => {
                Box::new(FileProvider::open(store, labels.as_deref())?)
            }
            ProviderConfig::Synthetic {
                dimension,
                sigma,
                foreground_fraction,
                background_scale,
            } => Box::new(SyntheticProvider::new(
                seed,
                *dimension,
                *sigma,
                *foreground_fraction,
                *background_scale,
            )),
            ProviderConfig::Remote {
                endpoint,
                dimension,
                timeout_ms,
                retries,
            } => Box::new(RemoteProvider::new(
                endpoint,
                *dimension,
                std::time::Duration::from_millis(*timeout_ms),
                *retries,
            )?),
        })
    }
}
