//! Telegram bot back-end: long-poll for user messages, answer each through
//! the retrieval pipeline, send the reply back.
//!
//! One polling task feeds a FIFO queue consumed by one generation worker, so
//! generations never overlap (the backend is a single GPU session) and chats
//! are served in arrival order. Per-message failures produce an apologetic
//! reply and a log entry; only an invalid token stops the loop. Shutdown
//! lets the in-flight generation finish before returning.

pub mod client;

pub use client::{
    split_message, BotError, IncomingMessage, TelegramClient, UpdateBatch, MAX_MESSAGE_CHARS,
    TELEGRAM_API_BASE,
};

use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{mpsc, oneshot};

use crate::config::RuntimeConfig;
use crate::embed::EmbeddingProvider;
use crate::index::VectorIndex;
use crate::llm::GenerationBackend;
use crate::rag::{answer_query, AnswerOutcome, PromptTemplate};

/// Fixed reply to the `/start` command.
pub const GREETING: &str = "Hi! I am the course assistant. Ask me a question about the course \
material and I will answer from the ingested documents, with sources.";

/// Fixed reply when the pipeline fails for one message.
pub const APOLOGY: &str =
    "Sorry, I could not produce an answer this time. Please try again in a moment.";

#[derive(Debug, Clone)]
pub struct BotConfig {
    pub api_base: String,
    /// Long-poll hold time passed to getUpdates.
    pub poll_timeout_s: u64,
    /// First retry delay after a transport failure; doubles up to the cap.
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
}

impl Default for BotConfig {
    fn default() -> Self {
        Self {
            api_base: TELEGRAM_API_BASE.to_string(),
            poll_timeout_s: 30,
            backoff_base: Duration::from_secs(1),
            backoff_cap: Duration::from_secs(60),
        }
    }
}

/// Counters reported when `serve` returns after a shutdown signal.
#[derive(Debug, Default, Clone, Copy)]
pub struct ServeStats {
    pub polls: u64,
    pub questions_processed: u64,
    pub greetings: u64,
    pub duplicates_skipped: u64,
    pub transport_failures: u64,
}

enum WorkItem {
    Greeting { chat_id: i64 },
    Question(IncomingMessage),
}

/// Render the user-facing reply: the answer followed by one source line per
/// citation.
pub fn format_reply(outcome: &AnswerOutcome) -> String {
    if outcome.citations.is_empty() {
        return outcome.text.clone();
    }
    let mut reply = outcome.text.clone();
    reply.push_str("\n\nSources:");
    let mut seen = std::collections::HashSet::new();
    for citation in &outcome.citations {
        let line = format!("{}#{}", citation.origin, citation.seq);
        if seen.insert(line.clone()) {
            reply.push_str("\n- ");
            reply.push_str(&line);
        }
    }
    reply
}

/// Run the bot until `shutdown` fires. Fatal only on a missing/rejected
/// token; transport problems back off exponentially and polling resumes.
pub async fn serve(
    runtime: Arc<RuntimeConfig>,
    bot: BotConfig,
    index: Arc<VectorIndex>,
    provider: Arc<dyn EmbeddingProvider>,
    backend: Arc<dyn GenerationBackend>,
    mut shutdown: oneshot::Receiver<()>,
) -> Result<ServeStats, BotError> {
    let client = Arc::new(TelegramClient::new(
        &bot.api_base,
        runtime.telegram_token.clone(),
    )?);
    let (queue_tx, mut queue_rx) = mpsc::channel::<WorkItem>(64);

    let worker = {
        let client = Arc::clone(&client);
        let runtime = Arc::clone(&runtime);
        let index = Arc::clone(&index);
        let provider = Arc::clone(&provider);
        let backend = Arc::clone(&backend);
        tokio::spawn(async move {
            let template = PromptTemplate::default();
            while let Some(item) = queue_rx.recv().await {
                let (chat_id, reply) = match item {
                    WorkItem::Greeting { chat_id } => (chat_id, GREETING.to_string()),
                    WorkItem::Question(message) => {
                        let reply = match answer_query(
                            &message.text,
                            &index,
                            provider.as_ref(),
                            backend.as_ref(),
                            &template,
                            &runtime,
                        )
                        .await
                        {
                            Ok(outcome) => format_reply(&outcome),
                            Err(err) => {
                                log::error!(
                                    "pipeline failed for update {}: {err}",
                                    message.update_id
                                );
                                APOLOGY.to_string()
                            }
                        };
                        (message.chat_id, reply)
                    }
                };
                if let Err(err) = client.send_reply(chat_id, &reply).await {
                    log::error!("dropping reply to chat {chat_id}: {err}");
                }
            }
        })
    };

    let mut stats = ServeStats::default();
    let mut offset: i64 = 0;
    let mut backoff = bot.backoff_base;
    loop {
        let poll = tokio::select! {
            _ = &mut shutdown => break,
            result = client.get_updates(offset, bot.poll_timeout_s) => result,
        };
        stats.polls += 1;
        let batch = match poll {
            Ok(batch) => {
                backoff = bot.backoff_base;
                batch
            }
            Err(BotError::AuthRejected) => {
                drop(queue_tx);
                let _ = worker.await;
                return Err(BotError::AuthRejected);
            }
            Err(err) => {
                stats.transport_failures += 1;
                log::warn!("poll failed, retrying in {backoff:?}: {err}");
                tokio::select! {
                    _ = &mut shutdown => break,
                    _ = tokio::time::sleep(backoff) => {}
                }
                backoff = (backoff * 2).min(bot.backoff_cap);
                continue;
            }
        };

        let mut messages = batch.messages;
        messages.sort_by_key(|m| m.update_id);
        for message in messages {
            // offset already moved past this id: a duplicate delivery
            if message.update_id < offset {
                stats.duplicates_skipped += 1;
                continue;
            }
            offset = message.update_id + 1;
            if message.text.trim().starts_with("/start") {
                stats.greetings += 1;
                let _ = queue_tx
                    .send(WorkItem::Greeting {
                        chat_id: message.chat_id,
                    })
                    .await;
            } else {
                stats.questions_processed += 1;
                let _ = queue_tx.send(WorkItem::Question(message)).await;
            }
        }
        // non-text updates advance the offset too; it never decreases
        offset = offset.max(batch.next_offset);
    }

    // graceful shutdown: close the queue and let the worker drain it
    drop(queue_tx);
    let _ = worker.await;
    Ok(stats)
}
