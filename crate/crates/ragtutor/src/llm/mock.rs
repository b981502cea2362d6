//! Deterministic generation backends for offline runs, tests, and benchmarks.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;

use super::{
    EventRecorder, GenerationBackend, GenerationEvent, GenerationParams, GenerationResult,
    LlmError, TokenCounts,
};
use crate::ingest::estimate_tokens;

/// Emits a scripted token stream at a fixed rate after a fixed first-token
/// delay. Token `i` appears at `delay + i / rate`; the terminal event lands
/// one token interval after the last delta (the end-of-stream token), so a
/// stream of `n` tokens measures `total = delay + n / rate` and a generation
/// rate equal to the configured one.
pub struct ScriptedMockBackend {
    first_token_delay: Duration,
    tokens_per_second: f64,
    tokens: Vec<String>,
}

impl ScriptedMockBackend {
    pub fn new(first_token_delay_s: f64, tokens_per_second: f64, tokens: Vec<String>) -> Self {
        assert!(tokens_per_second > 0.0, "rate must be positive");
        assert!(first_token_delay_s >= 0.0, "delay must be non-negative");
        Self {
            first_token_delay: Duration::from_secs_f64(first_token_delay_s),
            tokens_per_second,
            tokens,
        }
    }

    /// Backend that immediately answers with a fixed text, split on
    /// whitespace into word tokens.
    pub fn canned_answer(text: &str) -> Self {
        let tokens = text
            .split_inclusive(char::is_whitespace)
            .map(str::to_string)
            .collect();
        Self::new(0.005, 400.0, tokens)
    }
}

#[async_trait]
impl GenerationBackend for ScriptedMockBackend {
    async fn generate(
        &self,
        prompt: &str,
        params: &GenerationParams,
        sink: &mut (dyn for<'e> FnMut(&'e GenerationEvent) + Send),
    ) -> Result<GenerationResult, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let mut recorder = EventRecorder::new(sink);
        let started = tokio::time::Instant::now();
        let n = self.tokens.len().min(params.max_tokens as usize);
        let at = |tokens_done: usize| {
            started
                + self.first_token_delay
                + Duration::from_secs_f64(tokens_done as f64 / self.tokens_per_second)
        };
        for (i, token) in self.tokens.iter().take(n).enumerate() {
            tokio::time::sleep_until(at(i)).await;
            recorder.emit_delta(token);
        }
        tokio::time::sleep_until(at(n)).await;
        recorder.emit_done(Some(TokenCounts {
            prompt_tokens: estimate_tokens(prompt) as u32,
            completion_tokens: n as u32,
        }));
        Ok(recorder.finish(prompt, params.max_tokens))
    }
}

/// One scripted iteration of a [`ReplayBackend`]: raw timing and counts as a
/// real run would have measured them.
#[derive(Debug, Clone, Copy)]
pub struct ReplayIteration {
    pub ttfb_s: f64,
    pub gen_tps: f64,
    pub completion_tokens: u32,
    pub prompt_tokens: u32,
}

/// Replays recorded iterations instantly: returns results carrying the
/// scripted timings without sleeping through them. Calls cycle through the
/// iteration list.
pub struct ReplayBackend {
    iterations: Vec<ReplayIteration>,
    cursor: AtomicUsize,
}

impl ReplayBackend {
    pub fn new(iterations: Vec<ReplayIteration>) -> Self {
        assert!(!iterations.is_empty(), "need at least one iteration");
        Self {
            iterations,
            cursor: AtomicUsize::new(0),
        }
    }

    /// Five-iteration reference run captured on an RTX 4060 laptop GPU with a
    /// quantized 7B instruct model (n_gpu_layers=20, n_ctx=768, n_batch=256,
    /// flash_attn on). Lets the benchmark pipeline run end to end on machines
    /// without a GPU.
    pub fn rtx4060_reference() -> Self {
        Self::new(vec![
            ReplayIteration { ttfb_s: 0.350, gen_tps: 16.99, completion_tokens: 117, prompt_tokens: 24 },
            ReplayIteration { ttfb_s: 0.067, gen_tps: 16.27, completion_tokens: 111, prompt_tokens: 24 },
            ReplayIteration { ttfb_s: 0.062, gen_tps: 15.61, completion_tokens: 107, prompt_tokens: 24 },
            ReplayIteration { ttfb_s: 0.062, gen_tps: 16.12, completion_tokens: 108, prompt_tokens: 24 },
            ReplayIteration { ttfb_s: 0.065, gen_tps: 16.05, completion_tokens: 109, prompt_tokens: 24 },
        ])
    }
}

#[async_trait]
impl GenerationBackend for ReplayBackend {
    async fn generate(
        &self,
        prompt: &str,
        _params: &GenerationParams,
        sink: &mut (dyn for<'e> FnMut(&'e GenerationEvent) + Send),
    ) -> Result<GenerationResult, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let step = self.cursor.fetch_add(1, Ordering::Relaxed);
        let it = self.iterations[step % self.iterations.len()];
        let counts = TokenCounts {
            prompt_tokens: it.prompt_tokens,
            completion_tokens: it.completion_tokens,
        };
        let mut recorder = EventRecorder::new(sink);
        recorder.emit_done(Some(counts));
        let generation_duration = f64::from(it.completion_tokens) / it.gen_tps;
        Ok(GenerationResult {
            text: String::new(),
            prompt_tokens: it.prompt_tokens,
            completion_tokens: it.completion_tokens,
            ttfb_s: it.ttfb_s,
            generation_duration_s: generation_duration,
            total_duration_s: it.ttfb_s + generation_duration,
            token_counts_estimated: false,
        })
    }
}
