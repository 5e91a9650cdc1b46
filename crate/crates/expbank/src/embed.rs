//! Embedding providers: canonical viewpoint text in, unit-norm vector out.
//!
//! Two providers implement the same [`Embedder`] contract. [`HashEmbedder`]
//! is fully deterministic (FNV-1a seed, SplitMix64 stream) so every retrieval
//! result downstream is reproducible and oracle-checkable. [`RemoteEmbedder`]
//! speaks a small JSON protocol (`POST /v1/embed`) for real embedding models
//! and re-normalizes whatever the service returns. All vectors the engine
//! stores or queries with are L2-normalized, so cosine similarity reduces to
//! a dot product in the index.

use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

use crate::hash::{fnv1a64, SplitMix64};
use crate::model::State;
use crate::viewpoint::{project, spec_of, Component, ViewpointId};

/// Default dimension of the deterministic local provider.
pub const DEFAULT_HASH_DIM: usize = 64;
/// Environment variable selecting the remote embedding endpoint. Absent
/// means the local hash provider.
pub const EMBED_URL_ENV: &str = "EXPBANK_EMBED_URL";

const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedder unavailable: {0}")]
    Unavailable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding value is not finite")]
    NotFinite,
    #[error("embedding is not unit-norm (|v| = {0})")]
    NotUnitNorm(f64),
}

/// A fixed-dimension, unit-norm vector of 32-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Wraps pre-normalized values, verifying finiteness and unit norm
    /// within 1e-6.
    pub fn from_values(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NotFinite);
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(EmbedError::NotUnitNorm(norm));
        }
        Ok(Self { values })
    }

    /// Normalizes an arbitrary finite vector to unit length.
    pub fn normalized(raw: &[f64]) -> Result<Self, EmbedError> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NotFinite);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::ZeroNorm);
        }
        let values = raw.iter().map(|v| (v / norm) as f32).collect();
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

pub fn l2_norm(values: &[f32]) -> f64 {
    values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

/// One unit of embeddable content: the canonical projection text plus the
/// visual ids it references (empty unless the viewpoint includes visuals).
/// The local provider hashes the text only; a remote multimodal service may
/// resolve the ids to the underlying images.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedContent {
    pub text: String,
    pub visual_ids: Vec<String>,
}

impl EmbedContent {
    pub fn text_only(text: impl Into<String>) -> Self {
        Self { text: text.into(), visual_ids: Vec::new() }
    }
}

/// Builds the query/index content for a state under one viewpoint.
pub fn viewpoint_content(state: &State, viewpoint: ViewpointId) -> EmbedContent {
    let visual_ids = if spec_of(viewpoint).includes(Component::VisualRefs) {
        state.visual_refs.iter().map(|r| r.id.clone()).collect()
    } else {
        Vec::new()
    };
    EmbedContent { text: project(state, viewpoint), visual_ids }
}

/// Embedding provider contract: unit-norm vectors of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Stable provider identifier recorded in bank manifests. Banks built
    /// with one provider are not queried with another.
    fn tag(&self) -> String;

    fn embed_batch(&self, items: &[EmbedContent]) -> Result<Vec<Embedding>, EmbedError>;

    fn embed(&self, item: &EmbedContent) -> Result<Embedding, EmbedError> {
        let mut out = self.embed_batch(std::slice::from_ref(item))?;
        Ok(out.remove(0))
    }
}

/// Deterministic local provider: FNV-1a 64 seeds a SplitMix64 stream, one
/// uniform draw per component, normalized to unit length. Bit-exact across
/// platforms.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    /// `dim` must be at least 2.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "hash embedder needs dim >= 2");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIM)
    }
}

/// Computes the deterministic hash embedding of `content` at dimension `dim`:
/// seed = FNV-1a 64 of the UTF-8 bytes, then for each component draw
/// u = (SplitMix64 >> 11) * 2^-53 and map to x = 2u - 1, finally L2-normalize.
pub fn hash_embed(content: &str, dim: usize) -> Result<Embedding, EmbedError> {
    let mut stream = SplitMix64::new(fnv1a64(content.as_bytes()));
    let raw: Vec<f64> = (0..dim).map(|_| 2.0 * stream.next_unit_f64() - 1.0).collect();
    Embedding::normalized(&raw)
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("hash-fnv1a-splitmix64-d{}", self.dim)
    }

    fn embed_batch(&self, items: &[EmbedContent]) -> Result<Vec<Embedding>, EmbedError> {
        items.iter().map(|item| hash_embed(&item.text, self.dim)).collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    inputs: Vec<&'a str>,
    visual_ids: Vec<&'a [String]>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Remote provider speaking `POST /v1/embed` with
/// `{"model", "inputs", "visual_ids"}` to `{"dim", "vectors"}`. Vectors are
/// re-normalized locally; the service dimension is pinned by a handshake at
/// construction and enforced on every response.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    max_retries: u32,
    batch_size: usize,
    max_in_flight: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    /// Connects and performs the dimension handshake with a probe input.
    pub fn connect(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self, EmbedError> {
        let mut provider = Self {
            endpoint: endpoint.into(),
            model: model.into(),
            dim: 0,
            max_retries: 2,
            batch_size: 32,
            max_in_flight: 8,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .map_err(|e| EmbedError::Unavailable(e.to_string()))?,
        };
        let probe = EmbedContent::text_only("dimension probe");
        let response = provider.request(std::slice::from_ref(&probe))?;
        if response.dim == 0 || response.vectors.iter().any(|v| v.len() != response.dim) {
            return Err(EmbedError::Unavailable("handshake returned inconsistent dim".into()));
        }
        provider.dim = response.dim;
        Ok(provider)
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.max_in_flight = limit.max(1);
        self
    }

    fn request(&self, items: &[EmbedContent]) -> Result<EmbedResponse, EmbedError> {
        let body = EmbedRequest {
            model: &self.model,
            inputs: items.iter().map(|i| i.text.as_str()).collect(),
            visual_ids: items.iter().map(|i| i.visual_ids.as_slice()).collect(),
        };
        let mut last_err = String::new();
        // Requests are idempotent; bounded retries on transport failure.
        for _ in 0..=self.max_retries {
            match self.client.post(&self.endpoint).json(&body).send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp
                        .json::<EmbedResponse>()
                        .map_err(|e| EmbedError::Unavailable(format!("bad response body: {e}")));
                }
                Ok(resp) => last_err = format!("status {}", resp.status()),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(EmbedError::Unavailable(last_err))
    }

    fn embed_chunk(&self, chunk: &[EmbedContent]) -> Result<Vec<Embedding>, EmbedError> {
        let response = self.request(chunk)?;
        if response.dim != self.dim {
            return Err(EmbedError::DimensionMismatch { expected: self.dim, got: response.dim });
        }
        if response.vectors.len() != chunk.len() {
            return Err(EmbedError::Unavailable(format!(
                "asked for {} vectors, got {}",
                chunk.len(),
                response.vectors.len()
            )));
        }
        response
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch { expected: self.dim, got: v.len() });
                }
                Embedding::normalized(&v)
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn tag(&self) -> String {
        format!("remote-{}-d{}", self.model, self.dim)
    }

    fn embed_batch(&self, items: &[EmbedContent]) -> Result<Vec<Embedding>, EmbedError> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let chunks: Vec<&[EmbedContent]> = items.chunks(self.batch_size).collect();
        let mut results: Vec<Option<Result<Vec<Embedding>, EmbedError>>> = Vec::new();
        results.resize_with(chunks.len(), || None);
        for wave in (0..chunks.len()).collect::<Vec<_>>().chunks(self.max_in_flight) {
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for &chunk_idx in wave {
                    let chunk = chunks[chunk_idx];
                    handles.push((chunk_idx, scope.spawn(move || self.embed_chunk(chunk))));
                }
                for (chunk_idx, handle) in handles {
                    results[chunk_idx] = Some(
                        handle.join().unwrap_or_else(|_| {
                            Err(EmbedError::Unavailable("embed worker panicked".into()))
                        }),
                    );
                }
            });
        }
        let mut out = Vec::with_capacity(items.len());
        for r in results.into_iter().flatten() {
            out.extend(r?);
        }
        Ok(out)
    }
}

/// Selects the provider from the environment: a remote endpoint when
/// `EXPBANK_EMBED_URL` is set, the deterministic local provider otherwise.
pub fn provider_from_env(model: &str) -> Result<std::sync::Arc<dyn Embedder>, EmbedError> {
    match std::env::var(EMBED_URL_ENV) {
        Ok(url) if !url.trim().is_empty() => {
            Ok(std::sync::Arc::new(RemoteEmbedder::connect(url, model)?))
        }
        _ => Ok(std::sync::Arc::new(HashEmbedder::default())),
    }
}
