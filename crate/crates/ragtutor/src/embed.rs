//! Embedding generation behind a provider contract.
//!
//! Every vector leaving this module is unit-normalized, so cosine similarity
//! downstream reduces to a plain dot product. Two providers exist: a remote
//! JSON-over-HTTP adapter for a local embedding server, and a deterministic
//! mock that expands a hash of the text's character 3-grams — texts sharing
//! more 3-grams land closer together, which keeps retrieval tests meaningful
//! offline.

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("cannot normalize a zero (or non-finite) vector")]
    DegenerateVector,
    #[error("embedding endpoint unreachable after {attempts} attempts: {source}")]
    Transport {
        attempts: u32,
        source: reqwest::Error,
    },
    #[error("embedding dimension mismatch: expected {expected}, server sent {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding protocol error: {0}")]
    Protocol(String),
}

/// A unit-normalized vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Dot product; equals cosine similarity because both sides are unit.
    pub fn dot(&self, other: &EmbeddingVector) -> f32 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Wrap values that are already unit-normalized (persistence reload path,
    /// where renormalizing would break bitwise round-trips).
    pub(crate) fn from_unit_values(values: Vec<f32>) -> Self {
        Self { values }
    }
}

/// Scale a raw vector to unit L2 norm. The norm is accumulated in f64 to keep
/// the result stable for large dimensions.
pub fn normalize(raw: &[f32]) -> Result<EmbeddingVector, EmbedError> {
    let norm_sq: f64 = raw.iter().map(|&x| (x as f64) * (x as f64)).sum();
    let norm = norm_sq.sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbedError::DegenerateVector);
    }
    let values = raw.iter().map(|&x| (x as f64 / norm) as f32).collect();
    Ok(EmbeddingVector { values })
}

/// Converts texts to unit vectors. Implementations are stateless after
/// construction and safe to call concurrently.
#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// One unit vector per text, order preserved. The same text always maps
    /// to the same vector for a given provider instance.
    async fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

// ---------------------------------------------------------------------------
// deterministic mock
// ---------------------------------------------------------------------------

/// FNV-1a, used to seed the per-gram expansion. Stable across platforms and
/// runs, unlike the std hasher.
fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic embedding of `text` into `dim` dimensions.
///
/// Each character 3-gram of the text seeds a ChaCha8 stream of uniform values
/// in [-1, 1); the streams are summed over the gram multiset and the result
/// normalized. Texts that share 3-grams share summands, so their cosine
/// similarity rises with gram overlap. Texts shorter than 3 characters use
/// the whole text as a single gram.
pub fn mock_embed(text: &str, dim: usize) -> EmbeddingVector {
    assert!(dim >= 2, "mock embeddings need dim >= 2");
    let chars: Vec<char> = text.chars().collect();
    let mut acc = vec![0f32; dim];
    let mut add_gram = |gram: &str| {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a_64(gram.as_bytes()));
        for slot in acc.iter_mut() {
            *slot += rng.gen_range(-1.0f32..1.0);
        }
    };
    if chars.len() < 3 {
        add_gram(text);
    } else {
        for window in chars.windows(3) {
            add_gram(&window.iter().collect::<String>());
        }
    }
    normalize(&acc).unwrap_or_else(|_| {
        // all-zero accumulation is practically unreachable; fall back to a
        // fixed unit vector rather than failing the provider contract
        let mut values = vec![0f32; dim];
        values[0] = 1.0;
        EmbeddingVector { values }
    })
}

/// Offline provider backed by [`mock_embed`].
pub struct MockEmbeddingProvider {
    dim: usize,
}

impl MockEmbeddingProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "mock embeddings need dim >= 2");
        Self { dim }
    }
}

#[async_trait]
impl EmbeddingProvider for MockEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    async fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                if t.is_empty() {
                    Err(EmbedError::EmptyText)
                } else {
                    Ok(mock_embed(t, self.dim))
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// remote adapter
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Adapter for a local embedding server speaking
/// `POST {endpoint}/embed  {"texts": [..]} -> {"vectors": [[..]]}`.
pub struct RemoteEmbeddingProvider {
    url: String,
    dim: usize,
    client: reqwest::Client,
    max_attempts: u32,
}

impl RemoteEmbeddingProvider {
    pub fn new(endpoint: &str, dim: usize) -> Self {
        Self {
            url: format!("{}/embed", endpoint.trim_end_matches('/')),
            dim,
            client: reqwest::Client::new(),
            max_attempts: 3,
        }
    }
}

#[async_trait]
impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    async fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.iter().any(|t| t.is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let mut last_err = None;
        for attempt in 1..=self.max_attempts {
            let sent = self
                .client
                .post(&self.url)
                .json(&EmbedRequest { texts })
                .send()
                .await;
            match sent {
                Ok(response) => {
                    let response = response
                        .error_for_status()
                        .map_err(|e| EmbedError::Protocol(e.to_string()))?;
                    let body: EmbedResponse = response
                        .json()
                        .await
                        .map_err(|e| EmbedError::Protocol(e.to_string()))?;
                    return self.check_and_normalize(texts.len(), body);
                }
                Err(source) => {
                    last_err = Some(source);
                    if attempt < self.max_attempts {
                        tokio::time::sleep(std::time::Duration::from_millis(
                            100 * u64::from(attempt),
                        ))
                        .await;
                    }
                }
            }
        }
        Err(EmbedError::Transport {
            attempts: self.max_attempts,
            source: last_err.expect("at least one attempt"),
        })
    }
}

impl RemoteEmbeddingProvider {
    fn check_and_normalize(
        &self,
        expected_count: usize,
        body: EmbedResponse,
    ) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if body.vectors.len() != expected_count {
            return Err(EmbedError::Protocol(format!(
                "server returned {} vectors for {} texts",
                body.vectors.len(),
                expected_count
            )));
        }
        body.vectors
            .into_iter()
            .map(|raw| {
                if raw.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dim,
                        got: raw.len(),
                    });
                }
                if raw.iter().any(|x| !x.is_finite()) {
                    return Err(EmbedError::Protocol("non-finite vector entry".into()));
                }
                normalize(&raw)
            })
            .collect()
    }
}
