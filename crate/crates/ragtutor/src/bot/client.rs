//! Minimal Telegram Bot API client: long-poll `getUpdates` plus
//! `sendMessage`, against a configurable API base so tests can point it at a
//! local simulated server. Every error string is scrubbed of the bot token
//! before it can reach a log line.

use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::config::SecretToken;

/// Production API base; tests substitute a local server.
pub const TELEGRAM_API_BASE: &str = "https://api.telegram.org";

/// Wire limit on one message's text.
pub const MAX_MESSAGE_CHARS: usize = 4096;

#[derive(Debug, Error)]
pub enum BotError {
    #[error("TELEGRAM_BOT_TOKEN is not configured")]
    MissingToken,
    #[error("telegram rejected the bot token (401)")]
    AuthRejected,
    #[error("telegram transport error: {0}")]
    Transport(String),
    #[error("telegram protocol error: {0}")]
    Protocol(String),
    #[error("reply could not be delivered after {attempts} attempts: {reason}")]
    DeliveryFailed { attempts: u32, reason: String },
    #[error("refusing to send an empty message")]
    EmptyMessage,
}

/// One text message received from a chat.
#[derive(Debug, Clone)]
pub struct IncomingMessage {
    pub update_id: i64,
    pub chat_id: i64,
    pub text: String,
    pub received_at: std::time::Instant,
}

/// Result of one `getUpdates` call: the text messages plus the offset to use
/// for the next poll (`max(update_id) + 1` over all updates, text or not).
#[derive(Debug)]
pub struct UpdateBatch {
    pub messages: Vec<IncomingMessage>,
    pub next_offset: i64,
}

#[derive(Deserialize)]
struct ApiEnvelope<T> {
    ok: bool,
    #[serde(default)]
    result: Option<T>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    parameters: Option<ResponseParameters>,
}

#[derive(Deserialize)]
struct ResponseParameters {
    #[serde(default)]
    retry_after: Option<u64>,
}

#[derive(Deserialize)]
struct Update {
    update_id: i64,
    #[serde(default)]
    message: Option<MessagePayload>,
}

#[derive(Deserialize)]
struct MessagePayload {
    chat: ChatRef,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Deserialize)]
struct ChatRef {
    id: i64,
}

enum SendFailure {
    RetryAfter(u64),
    Retryable(String),
}

pub struct TelegramClient {
    api_base: String,
    token: SecretToken,
    http: reqwest::Client,
}

impl TelegramClient {
    pub fn new(api_base: &str, token: SecretToken) -> Result<Self, BotError> {
        if token.is_empty() {
            return Err(BotError::MissingToken);
        }
        Ok(Self {
            api_base: api_base.trim_end_matches('/').to_string(),
            token,
            http: reqwest::Client::new(),
        })
    }

    fn method_url(&self, method: &str) -> String {
        format!("{}/bot{}/{}", self.api_base, self.token.expose(), method)
    }

    /// Strip the raw token out of any string destined for logs or errors.
    fn redact(&self, text: &str) -> String {
        text.replace(self.token.expose(), "[REDACTED]")
    }

    /// One long-poll fetch. Non-text updates are skipped but still advance
    /// the offset. A 401 is fatal; other failures are transport errors the
    /// caller retries with backoff, leaving the offset unchanged.
    pub async fn get_updates(&self, offset: i64, timeout_s: u64) -> Result<UpdateBatch, BotError> {
        let url = format!(
            "{}?offset={offset}&timeout={timeout_s}",
            self.method_url("getUpdates")
        );
        let response = self
            .http
            .get(url)
            .timeout(Duration::from_secs(timeout_s + 10))
            .send()
            .await
            .map_err(|e| BotError::Transport(self.redact(&e.to_string())))?;
        if response.status() == reqwest::StatusCode::UNAUTHORIZED {
            return Err(BotError::AuthRejected);
        }
        if !response.status().is_success() {
            return Err(BotError::Transport(format!(
                "getUpdates returned HTTP {}",
                response.status()
            )));
        }
        let envelope: ApiEnvelope<Vec<Update>> = response
            .json()
            .await
            .map_err(|e| BotError::Protocol(self.redact(&e.to_string())))?;
        if !envelope.ok {
            return Err(BotError::Protocol(
                envelope.description.unwrap_or_else(|| "ok=false".into()),
            ));
        }
        let updates = envelope.result.unwrap_or_default();
        let next_offset = updates
            .iter()
            .map(|u| u.update_id + 1)
            .max()
            .unwrap_or(offset);
        let received_at = std::time::Instant::now();
        let messages = updates
            .into_iter()
            .filter_map(|u| {
                let message = u.message?;
                let text = message.text?;
                Some(IncomingMessage {
                    update_id: u.update_id,
                    chat_id: message.chat.id,
                    text,
                    received_at,
                })
            })
            .collect();
        Ok(UpdateBatch {
            messages,
            next_offset,
        })
    }

    /// Deliver `text` to a chat, splitting it into wire-sized parts at
    /// whitespace. Rate limits wait the server-indicated time; other failures
    /// retry up to 3 times before the reply is reported undeliverable.
    pub async fn send_reply(&self, chat_id: i64, text: &str) -> Result<(), BotError> {
        if text.is_empty() {
            return Err(BotError::EmptyMessage);
        }
        for part in split_message(text, MAX_MESSAGE_CHARS) {
            self.send_part(chat_id, &part).await?;
        }
        Ok(())
    }

    async fn send_part(&self, chat_id: i64, text: &str) -> Result<(), BotError> {
        const MAX_ATTEMPTS: u32 = 4; // initial attempt + 3 retries
        let mut attempt = 0;
        loop {
            attempt += 1;
            let failure = match self.send_once(chat_id, text).await {
                Ok(()) => return Ok(()),
                Err(f) => f,
            };
            let (wait, reason) = match failure {
                SendFailure::RetryAfter(secs) => {
                    (Duration::from_secs(secs), format!("rate limited, retry_after={secs}s"))
                }
                SendFailure::Retryable(reason) => (Duration::from_millis(250), reason),
            };
            if attempt >= MAX_ATTEMPTS {
                return Err(BotError::DeliveryFailed {
                    attempts: attempt,
                    reason,
                });
            }
            log::warn!("sendMessage attempt {attempt} failed ({reason}); retrying");
            tokio::time::sleep(wait).await;
        }
    }

    async fn send_once(&self, chat_id: i64, text: &str) -> Result<(), SendFailure> {
        let response = self
            .http
            .post(self.method_url("sendMessage"))
            .json(&serde_json::json!({ "chat_id": chat_id, "text": text }))
            .send()
            .await
            .map_err(|e| SendFailure::Retryable(self.redact(&e.to_string())))?;
        if response.status() == reqwest::StatusCode::TOO_MANY_REQUESTS {
            let retry_after = response
                .json::<ApiEnvelope<serde_json::Value>>()
                .await
                .ok()
                .and_then(|env| env.parameters)
                .and_then(|p| p.retry_after)
                .unwrap_or(1);
            return Err(SendFailure::RetryAfter(retry_after));
        }
        if !response.status().is_success() {
            return Err(SendFailure::Retryable(format!(
                "sendMessage returned HTTP {}",
                response.status()
            )));
        }
        let envelope: ApiEnvelope<serde_json::Value> = response
            .json()
            .await
            .map_err(|e| SendFailure::Retryable(self.redact(&e.to_string())))?;
        if !envelope.ok {
            return Err(SendFailure::Retryable(
                envelope.description.unwrap_or_else(|| "ok=false".into()),
            ));
        }
        Ok(())
    }
}

/// Split `text` into parts of at most `limit` characters, cutting at the last
/// whitespace inside each window (hard split only when a window contains no
/// whitespace at all). Concatenating the parts reproduces the text exactly.
pub fn split_message(text: &str, limit: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= limit {
        return vec![text.to_string()];
    }
    let mut parts = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        if chars.len() - start <= limit {
            parts.push(chars[start..].iter().collect());
            break;
        }
        let hard_end = start + limit;
        let cut = (start + 1..=hard_end)
            .rev()
            .find(|&i| chars[i - 1].is_whitespace())
            .unwrap_or(hard_end);
        parts.push(chars[start..cut].iter().collect());
        start = cut;
    }
    parts
}
