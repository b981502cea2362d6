//! Generation backend contract with streaming token events.
//!
//! Backends stream [`GenerationEvent`]s (first token, tokens, done) to a sink
//! and return a [`GenerationResult`] whose timing fields come from the event
//! timestamps on the monotonic clock — TTFB is the gap between the request
//! and the first token, generation duration is everything after it.
//!
//! Three backends: the HTTP adapter for a local llama-server-style completion
//! endpoint, a scripted mock that emits tokens at a configured rate (the
//! throughput source for tests and benchmarks), and a replay backend that
//! reproduces recorded runs instantly.

pub mod http;
pub mod mock;

pub use http::HttpGenerationBackend;
pub use mock::{ReplayBackend, ReplayIteration, ScriptedMockBackend};

use std::time::Instant;

use async_trait::async_trait;
use serde::Serialize;
use thiserror::Error;

use crate::config::RuntimeConfig;
use crate::ingest::estimate_tokens;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("generation backend unreachable: {0}")]
    Transport(String),
    #[error("generation protocol error: {0}")]
    Protocol(String),
    #[error("stream disconnected after {tokens_received} tokens: {reason}")]
    PartialResult {
        tokens_received: usize,
        partial_text: String,
        reason: String,
    },
}

/// Sampling and passthrough parameters for one generation call.
///
/// `n_gpu_layers`, `flash_attn`, `tensor_split`, and `model_path` are
/// forwarded verbatim to the backend, which owns GPU offloading.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f32,
    pub n_ctx: u32,
    pub n_batch: u32,
    pub n_gpu_layers: u32,
    pub flash_attn: bool,
    pub tensor_split: f32,
    pub model_path: String,
}

impl GenerationParams {
    pub fn from_config(config: &RuntimeConfig) -> Self {
        Self {
            max_tokens: config.max_output_tokens,
            temperature: config.temperature,
            n_ctx: config.n_ctx,
            n_batch: config.n_batch,
            n_gpu_layers: config.n_gpu_layers,
            flash_attn: config.flash_attn,
            tensor_split: config.tensor_split,
            model_path: config.model_path.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    FirstToken,
    Token,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenCounts {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

/// One streaming event. The first emitted token has kind [`EventKind::FirstToken`];
/// exactly one terminal [`EventKind::Done`] closes the stream and may carry
/// backend-reported token counts.
#[derive(Debug, Clone)]
pub struct GenerationEvent {
    pub kind: EventKind,
    pub text_delta: String,
    pub timestamp: Instant,
    pub token_counts: Option<TokenCounts>,
}

/// Completed generation with timing derived from event timestamps.
#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub text: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    /// Request to first token. When nothing was generated this is the time
    /// to the terminal event.
    pub ttfb_s: f64,
    /// Time after the first token, i.e. `total_duration_s - ttfb_s`.
    pub generation_duration_s: f64,
    pub total_duration_s: f64,
    /// True when the backend reported no counts and they were estimated from
    /// text lengths instead.
    pub token_counts_estimated: bool,
}

/// A generation backend. One generation is in flight per backend at a time
/// (single GPU session); callers serialize through a queue.
#[async_trait]
pub trait GenerationBackend: Send + Sync {
    async fn generate(
        &self,
        prompt: &str,
        params: &GenerationParams,
        sink: &mut (dyn for<'e> FnMut(&'e GenerationEvent) + Send),
    ) -> Result<GenerationResult, LlmError>;
}

/// Shared event bookkeeping for backend implementations: enforces the
/// first-token/token/done ordering, concatenates deltas, and turns timestamps
/// into the result's timing fields.
pub(crate) struct EventRecorder<'a> {
    started: Instant,
    first_token_at: Option<Instant>,
    done_at: Option<Instant>,
    text: String,
    deltas: usize,
    reported: Option<TokenCounts>,
    sink: &'a mut (dyn for<'e> FnMut(&'e GenerationEvent) + Send),
}

impl<'a> EventRecorder<'a> {
    pub fn new(sink: &'a mut (dyn for<'e> FnMut(&'e GenerationEvent) + Send)) -> Self {
        Self {
            started: Instant::now(),
            first_token_at: None,
            done_at: None,
            text: String::new(),
            deltas: 0,
            reported: None,
            sink,
        }
    }

    pub fn tokens_seen(&self) -> usize {
        self.deltas
    }

    pub fn partial_text(&self) -> &str {
        &self.text
    }

    pub fn emit_delta(&mut self, delta: &str) {
        debug_assert!(self.done_at.is_none(), "delta after done");
        let now = Instant::now();
        let kind = if self.first_token_at.is_none() {
            self.first_token_at = Some(now);
            EventKind::FirstToken
        } else {
            EventKind::Token
        };
        self.text.push_str(delta);
        self.deltas += 1;
        (self.sink)(&GenerationEvent {
            kind,
            text_delta: delta.to_string(),
            timestamp: now,
            token_counts: None,
        });
    }

    pub fn emit_done(&mut self, counts: Option<TokenCounts>) {
        debug_assert!(self.done_at.is_none(), "duplicate done");
        let now = Instant::now();
        self.done_at = Some(now);
        self.reported = counts;
        (self.sink)(&GenerationEvent {
            kind: EventKind::Done,
            text_delta: String::new(),
            timestamp: now,
            token_counts: counts,
        });
    }

    /// Build the result. Counts fall back to text-length estimates when the
    /// backend reported none; the completion count never exceeds the cap.
    pub fn finish(self, prompt: &str, max_tokens: u32) -> GenerationResult {
        let done_at = self.done_at.unwrap_or_else(Instant::now);
        let total = done_at.duration_since(self.started).as_secs_f64();
        let ttfb = self
            .first_token_at
            .map(|t| t.duration_since(self.started).as_secs_f64())
            .unwrap_or(total);
        let (prompt_tokens, completion_tokens, estimated) = match self.reported {
            Some(counts) => (counts.prompt_tokens, counts.completion_tokens, false),
            None => (
                estimate_tokens(prompt) as u32,
                estimate_tokens(&self.text) as u32,
                true,
            ),
        };
        GenerationResult {
            text: self.text,
            prompt_tokens,
            completion_tokens: completion_tokens.min(max_tokens),
            ttfb_s: ttfb,
            generation_duration_s: total - ttfb,
            total_duration_s: total,
            token_counts_estimated: estimated,
        }
    }
}

#[cfg(test)]
pub(crate) fn test_params(max_tokens: u32) -> GenerationParams {
    GenerationParams {
        max_tokens,
        temperature: 0.2,
        n_ctx: 768,
        n_batch: 256,
        n_gpu_layers: 20,
        flash_attn: true,
        tensor_split: 0.85,
        model_path: "/models/test.gguf".into(),
    }
}
