//! Wire adapter for a local llama-server-style streaming completion endpoint.
//!
//! Request: `POST {endpoint}/completion` with a JSON body carrying the prompt
//! and all generation parameters (GPU settings pass through untouched).
//! Response: an SSE-style stream, one `data: {json}` line per token delta,
//! with a final `"stop": true` event that may carry token counts:
//!
//! ```text
//! data: {"content": "Hello", "stop": false}
//! data: {"content": "", "stop": true, "prompt_tokens": 24, "completion_tokens": 117}
//! ```

use async_trait::async_trait;
use futures_util::StreamExt;
use serde::{Deserialize, Serialize};

use super::{
    EventRecorder, GenerationBackend, GenerationEvent, GenerationParams, GenerationResult,
    LlmError, TokenCounts,
};

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    stream: bool,
    max_tokens: u32,
    temperature: f32,
    n_ctx: u32,
    n_batch: u32,
    n_gpu_layers: u32,
    flash_attn: bool,
    tensor_split: f32,
    model_path: &'a str,
}

#[derive(Deserialize)]
struct StreamPayload {
    #[serde(default)]
    content: String,
    #[serde(default)]
    stop: bool,
    #[serde(default)]
    prompt_tokens: Option<u32>,
    #[serde(default)]
    completion_tokens: Option<u32>,
}

pub struct HttpGenerationBackend {
    url: String,
    client: reqwest::Client,
}

impl HttpGenerationBackend {
    pub fn new(endpoint: &str) -> Self {
        Self {
            url: format!("{}/completion", endpoint.trim_end_matches('/')),
            client: reqwest::Client::new(),
        }
    }
}

#[async_trait]
impl GenerationBackend for HttpGenerationBackend {
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
        let response = self
            .client
            .post(&self.url)
            .json(&CompletionRequest {
                prompt,
                stream: true,
                max_tokens: params.max_tokens,
                temperature: params.temperature,
                n_ctx: params.n_ctx,
                n_batch: params.n_batch,
                n_gpu_layers: params.n_gpu_layers,
                flash_attn: params.flash_attn,
                tensor_split: params.tensor_split,
                model_path: &params.model_path,
            })
            .send()
            .await
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let response = response
            .error_for_status()
            .map_err(|e| LlmError::Protocol(e.to_string()))?;

        let mut stream = response.bytes_stream();
        let mut buffer = Vec::new();
        let mut saw_stop = false;
        let mut counts = None;

        'recv: while let Some(chunk) = stream.next().await {
            let chunk = chunk.map_err(|e| LlmError::PartialResult {
                tokens_received: recorder.tokens_seen(),
                partial_text: recorder.partial_text().to_string(),
                reason: e.to_string(),
            })?;
            buffer.extend_from_slice(&chunk);
            while let Some(pos) = buffer.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = buffer.drain(..=pos).collect();
                let line = String::from_utf8_lossy(&line[..line.len() - 1]);
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let payload = parse_line(line)?;
                if payload.stop {
                    counts = match (payload.prompt_tokens, payload.completion_tokens) {
                        (Some(p), Some(c)) => Some(TokenCounts {
                            prompt_tokens: p,
                            completion_tokens: c,
                        }),
                        _ => None,
                    };
                    saw_stop = true;
                    break 'recv;
                }
                if !payload.content.is_empty() {
                    recorder.emit_delta(&payload.content);
                }
            }
        }

        if !saw_stop {
            // a final line may arrive without a trailing newline
            let tail = String::from_utf8_lossy(&buffer);
            let tail = tail.trim();
            if !tail.is_empty() {
                let payload = parse_line(tail)?;
                if payload.stop {
                    counts = match (payload.prompt_tokens, payload.completion_tokens) {
                        (Some(p), Some(c)) => Some(TokenCounts {
                            prompt_tokens: p,
                            completion_tokens: c,
                        }),
                        _ => None,
                    };
                    saw_stop = true;
                } else if !payload.content.is_empty() {
                    recorder.emit_delta(&payload.content);
                }
            }
        }
        if !saw_stop {
            // stream ended without a terminal event
            return Err(LlmError::PartialResult {
                tokens_received: recorder.tokens_seen(),
                partial_text: recorder.partial_text().to_string(),
                reason: "stream closed before the terminal event".into(),
            });
        }
        recorder.emit_done(counts);
        Ok(recorder.finish(prompt, params.max_tokens))
    }
}

fn parse_line(line: &str) -> Result<StreamPayload, LlmError> {
    let json = line
        .strip_prefix("data:")
        .map(str::trim_start)
        .ok_or_else(|| LlmError::Protocol(format!("unexpected stream line: {line:?}")))?;
    serde_json::from_str(json).map_err(|e| LlmError::Protocol(format!("bad stream payload: {e}")))
}
