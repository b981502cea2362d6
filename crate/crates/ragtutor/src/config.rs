//! Runtime configuration from environment variables and an optional `.env` file.
//!
//! Every key is optional; unset keys fall back to the documented defaults.
//! Environment variables override `.env` entries. The Telegram token is held
//! in a [`SecretToken`] that redacts itself in `Debug`, `Display`, and serde
//! output.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

/// Environment keys understood by [`load_config`].
pub const ENV_KEYS: &[&str] = &[
    "MODEL_PATH",
    "N_CTX",
    "N_BATCH",
    "N_GPU_LAYERS",
    "FLASH_ATTN",
    "TENSOR_SPLIT",
    "TELEGRAM_BOT_TOKEN",
    "EMBEDDING_DIM",
    "TOP_K",
    "CHUNK_SIZE",
    "CHUNK_OVERLAP",
    "MAX_OUTPUT_TOKENS",
    "TEMPERATURE",
    "BACKEND_ENDPOINT",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for {key}: {value:?} ({reason})")]
    InvalidValue {
        key: &'static str,
        value: String,
        reason: String,
    },
    #[error("CHUNK_OVERLAP ({overlap}) must be smaller than CHUNK_SIZE ({chunk_size})")]
    OverlapTooLarge { overlap: usize, chunk_size: usize },
    #[error("MAX_OUTPUT_TOKENS ({max_output_tokens}) must be smaller than N_CTX ({n_ctx})")]
    OutputExceedsContext { max_output_tokens: u32, n_ctx: u32 },
    #[error("TENSOR_SPLIT ({0}) must lie in [0, 1]")]
    TensorSplitOutOfRange(f32),
}

/// Secret string that never leaks through `Debug`, `Display`, or serde.
///
/// Call [`SecretToken::expose`] at the single point where the raw value is
/// actually sent to the Telegram API.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct SecretToken(String);

impl SecretToken {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    /// The raw secret. Only the wire client should call this.
    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for SecretToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[REDACTED]")
    }
}

impl fmt::Display for SecretToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[REDACTED]")
    }
}

impl Serialize for SecretToken {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str("[REDACTED]")
    }
}

/// All runtime parameters. Immutable after load; share freely across tasks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeConfig {
    /// Opaque path forwarded to the inference backend; never opened locally.
    pub model_path: String,
    /// Context window in tokens (prompt + output together).
    pub n_ctx: u32,
    /// Tokens per processing batch; backend passthrough.
    pub n_batch: u32,
    /// Transformer layers offloaded to the GPU; backend passthrough.
    pub n_gpu_layers: u32,
    /// Flash-attention kernel toggle; backend passthrough.
    pub flash_attn: bool,
    /// GPU share in a single-GPU setup, in [0, 1]; backend passthrough.
    pub tensor_split: f32,
    pub telegram_token: SecretToken,
    /// Dimensionality of embedding vectors.
    pub embedding_dim: usize,
    /// Retrieval fan-out.
    pub top_k: usize,
    pub chunk_size_tokens: usize,
    pub chunk_overlap_tokens: usize,
    /// Upper bound on generated tokens per answer.
    pub max_output_tokens: u32,
    /// Sampling randomness; low values favour factual answers.
    pub temperature: f32,
    /// Inference server base URL. `None` selects the offline mock backends.
    pub backend_endpoint: Option<String>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            model_path: "/models/mistral-7b-instruct-v0.1.Q4_K_M.gguf".to_string(),
            n_ctx: 768,
            n_batch: 256,
            n_gpu_layers: 20,
            flash_attn: true,
            tensor_split: 0.85,
            telegram_token: SecretToken::default(),
            embedding_dim: 384,
            top_k: 4,
            chunk_size_tokens: 512,
            chunk_overlap_tokens: 64,
            max_output_tokens: 128,
            temperature: 0.2,
            backend_endpoint: None,
        }
    }
}

impl RuntimeConfig {
    /// Inverse of [`load_config`]: a key/value map that reloads to an equal
    /// config. The map carries the raw token so the round trip is exact; it
    /// is a reload artifact, not a log or display path — never print it.
    pub fn to_env_map(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("MODEL_PATH".into(), self.model_path.clone());
        map.insert("N_CTX".into(), self.n_ctx.to_string());
        map.insert("N_BATCH".into(), self.n_batch.to_string());
        map.insert("N_GPU_LAYERS".into(), self.n_gpu_layers.to_string());
        map.insert(
            "FLASH_ATTN".into(),
            if self.flash_attn { "1" } else { "0" }.into(),
        );
        map.insert("TENSOR_SPLIT".into(), self.tensor_split.to_string());
        map.insert(
            "TELEGRAM_BOT_TOKEN".into(),
            self.telegram_token.expose().to_string(),
        );
        map.insert("EMBEDDING_DIM".into(), self.embedding_dim.to_string());
        map.insert("TOP_K".into(), self.top_k.to_string());
        map.insert("CHUNK_SIZE".into(), self.chunk_size_tokens.to_string());
        map.insert(
            "CHUNK_OVERLAP".into(),
            self.chunk_overlap_tokens.to_string(),
        );
        map.insert(
            "MAX_OUTPUT_TOKENS".into(),
            self.max_output_tokens.to_string(),
        );
        map.insert("TEMPERATURE".into(), self.temperature.to_string());
        if let Some(endpoint) = &self.backend_endpoint {
            map.insert("BACKEND_ENDPOINT".into(), endpoint.clone());
        }
        map
    }
}

/// Parse the minimal `.env` grammar: `KEY=VALUE` lines, `#` comments and
/// blank lines ignored, no quoting or escaping.
pub fn parse_dotenv(text: &str) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    map
}

/// Build a [`RuntimeConfig`] from an environment map plus optional `.env`
/// text. Environment entries win over `.env` entries; missing keys take the
/// defaults documented on [`RuntimeConfig::default`].
pub fn load_config(
    env: &BTreeMap<String, String>,
    dotenv_text: Option<&str>,
) -> Result<RuntimeConfig, ConfigError> {
    let dotenv = dotenv_text.map(parse_dotenv).unwrap_or_default();
    let get = |key: &'static str| -> Option<&String> { env.get(key).or_else(|| dotenv.get(key)) };

    let defaults = RuntimeConfig::default();
    let config = RuntimeConfig {
        model_path: get("MODEL_PATH").cloned().unwrap_or(defaults.model_path),
        n_ctx: parse_num(get("N_CTX"), "N_CTX", defaults.n_ctx)?,
        n_batch: parse_num(get("N_BATCH"), "N_BATCH", defaults.n_batch)?,
        n_gpu_layers: parse_num(get("N_GPU_LAYERS"), "N_GPU_LAYERS", defaults.n_gpu_layers)?,
        flash_attn: parse_bool(get("FLASH_ATTN"), "FLASH_ATTN", defaults.flash_attn)?,
        tensor_split: parse_num(get("TENSOR_SPLIT"), "TENSOR_SPLIT", defaults.tensor_split)?,
        telegram_token: get("TELEGRAM_BOT_TOKEN")
            .map(SecretToken::new)
            .unwrap_or(defaults.telegram_token),
        embedding_dim: parse_positive(get("EMBEDDING_DIM"), "EMBEDDING_DIM", defaults.embedding_dim)?,
        top_k: parse_positive(get("TOP_K"), "TOP_K", defaults.top_k)?,
        chunk_size_tokens: parse_positive(get("CHUNK_SIZE"), "CHUNK_SIZE", defaults.chunk_size_tokens)?,
        chunk_overlap_tokens: parse_num(
            get("CHUNK_OVERLAP"),
            "CHUNK_OVERLAP",
            defaults.chunk_overlap_tokens,
        )?,
        max_output_tokens: parse_positive(
            get("MAX_OUTPUT_TOKENS"),
            "MAX_OUTPUT_TOKENS",
            defaults.max_output_tokens,
        )?,
        temperature: parse_num(get("TEMPERATURE"), "TEMPERATURE", defaults.temperature)?,
        backend_endpoint: get("BACKEND_ENDPOINT")
            .filter(|v| !v.is_empty())
            .cloned(),
    };

    validate(&config)?;
    Ok(config)
}

fn validate(config: &RuntimeConfig) -> Result<(), ConfigError> {
    if config.chunk_overlap_tokens >= config.chunk_size_tokens {
        return Err(ConfigError::OverlapTooLarge {
            overlap: config.chunk_overlap_tokens,
            chunk_size: config.chunk_size_tokens,
        });
    }
    if config.max_output_tokens >= config.n_ctx {
        return Err(ConfigError::OutputExceedsContext {
            max_output_tokens: config.max_output_tokens,
            n_ctx: config.n_ctx,
        });
    }
    if !(0.0..=1.0).contains(&config.tensor_split) || !config.tensor_split.is_finite() {
        return Err(ConfigError::TensorSplitOutOfRange(config.tensor_split));
    }
    if config.temperature < 0.0 || !config.temperature.is_finite() {
        return Err(ConfigError::InvalidValue {
            key: "TEMPERATURE",
            value: config.temperature.to_string(),
            reason: "must be a finite value >= 0".into(),
        });
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(
    raw: Option<&String>,
    key: &'static str,
    default: T,
) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    match raw {
        None => Ok(default),
        Some(s) => s.trim().parse().map_err(|e: T::Err| ConfigError::InvalidValue {
            key,
            value: s.clone(),
            reason: e.to_string(),
        }),
    }
}

fn parse_positive<T>(raw: Option<&String>, key: &'static str, default: T) -> Result<T, ConfigError>
where
    T: std::str::FromStr + PartialOrd + Default + fmt::Display,
    T::Err: fmt::Display,
{
    let value = parse_num(raw, key, default)?;
    if value <= T::default() {
        return Err(ConfigError::InvalidValue {
            key,
            value: value.to_string(),
            reason: "must be positive".into(),
        });
    }
    Ok(value)
}

fn parse_bool(raw: Option<&String>, key: &'static str, default: bool) -> Result<bool, ConfigError> {
    match raw.map(|s| s.trim()) {
        None => Ok(default),
        Some("1") | Some("true") | Some("True") | Some("TRUE") => Ok(true),
        Some("0") | Some("false") | Some("False") | Some("FALSE") => Ok(false),
        Some(other) => Err(ConfigError::InvalidValue {
            key,
            value: other.to_string(),
            reason: "expected one of 1/0/true/false".into(),
        }),
    }
}
