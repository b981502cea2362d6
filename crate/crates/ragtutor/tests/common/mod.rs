//! In-process simulated servers for integration tests: a Telegram API subset
//! (getUpdates long polling + sendMessage, with fault injection) and an
//! inference server speaking the embed / streaming-completion protocols.

#![allow(dead_code)]

use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::Notify;

// ---------------------------------------------------------------------------
// simulated Telegram server
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SentMessage {
    pub chat_id: i64,
    pub text: String,
    pub at: Instant,
}

/// One observed getUpdates call.
#[derive(Debug, Clone, Copy)]
pub struct PollRecord {
    pub at: Instant,
    pub offset: i64,
    /// false when the call was answered with an injected fault
    pub served: bool,
}

struct TgState {
    token: String,
    updates: Mutex<Vec<Value>>,
    /// every update ever pushed, never pruned; used for duplicate redelivery
    history: Mutex<Vec<Value>>,
    notify: Notify,
    sent: Mutex<Vec<SentMessage>>,
    send_attempts: Mutex<Vec<Instant>>,
    polls: Mutex<Vec<PollRecord>>,
    fail_polls: AtomicU32,
    fail_sends: AtomicU32,
    rate_limit_once: Mutex<Option<u64>>,
    replay_confirmed_once: AtomicBool,
}

pub struct SimTelegram {
    pub base_url: String,
    pub token: String,
    state: Arc<TgState>,
}

impl SimTelegram {
    pub async fn start(token: &str) -> Self {
        let state = Arc::new(TgState {
            token: token.to_string(),
            updates: Mutex::new(Vec::new()),
            history: Mutex::new(Vec::new()),
            notify: Notify::new(),
            sent: Mutex::new(Vec::new()),
            send_attempts: Mutex::new(Vec::new()),
            polls: Mutex::new(Vec::new()),
            fail_polls: AtomicU32::new(0),
            fail_sends: AtomicU32::new(0),
            rate_limit_once: Mutex::new(None),
            replay_confirmed_once: AtomicBool::new(false),
        });
        let app = Router::new()
            .route("/{bot_token}/getUpdates", get(get_updates))
            .route("/{bot_token}/sendMessage", post(send_message))
            .with_state(Arc::clone(&state));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Self {
            base_url: format!("http://{addr}"),
            token: token.to_string(),
            state,
        }
    }

    pub fn push_text(&self, update_id: i64, chat_id: i64, text: &str) {
        self.push_update(json!({
            "update_id": update_id,
            "message": { "message_id": update_id, "chat": { "id": chat_id }, "text": text }
        }));
    }

    /// A non-text message (e.g. a sticker): must be skipped but still
    /// advance the offset.
    pub fn push_sticker(&self, update_id: i64, chat_id: i64) {
        self.push_update(json!({
            "update_id": update_id,
            "message": { "message_id": update_id, "chat": { "id": chat_id },
                         "sticker": { "file_id": "abc" } }
        }));
    }

    pub fn push_update(&self, update: Value) {
        self.state.history.lock().unwrap().push(update.clone());
        self.state.updates.lock().unwrap().push(update);
        self.state.notify.notify_waiters();
    }

    /// Fail the next `n` getUpdates calls with HTTP 500.
    pub fn fail_next_polls(&self, n: u32) {
        self.state.fail_polls.store(n, Ordering::SeqCst);
    }

    /// Fail the next `n` sendMessage calls with HTTP 500.
    pub fn fail_next_sends(&self, n: u32) {
        self.state.fail_sends.store(n, Ordering::SeqCst);
    }

    /// Answer the next sendMessage with 429 and the given retry_after.
    pub fn rate_limit_next_send(&self, retry_after_s: u64) {
        *self.state.rate_limit_once.lock().unwrap() = Some(retry_after_s);
    }

    /// Serve the next getUpdates call with every update ever pushed, ignoring
    /// the confirming offset — a duplicate delivery.
    pub fn replay_confirmed_once(&self) {
        self.state.replay_confirmed_once.store(true, Ordering::SeqCst);
    }

    pub fn sent(&self) -> Vec<SentMessage> {
        self.state.sent.lock().unwrap().clone()
    }

    /// Times of every sendMessage attempt, including rate-limited and failed
    /// ones.
    pub fn send_attempts(&self) -> Vec<Instant> {
        self.state.send_attempts.lock().unwrap().clone()
    }

    pub fn polls(&self) -> Vec<PollRecord> {
        self.state.polls.lock().unwrap().clone()
    }

    /// Wait until at least `n` messages have been sent (panics on timeout).
    pub async fn wait_for_sent(&self, n: usize, timeout: Duration) -> Vec<SentMessage> {
        let deadline = Instant::now() + timeout;
        loop {
            let sent = self.sent();
            if sent.len() >= n {
                return sent;
            }
            assert!(
                Instant::now() < deadline,
                "timed out waiting for {n} sent messages, have {}",
                sent.len()
            );
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
}

#[derive(serde::Deserialize)]
struct PollQuery {
    #[serde(default)]
    offset: i64,
    #[serde(default)]
    timeout: u64,
}

fn check_token(state: &TgState, path_token: &str) -> bool {
    path_token.strip_prefix("bot") == Some(state.token.as_str())
}

fn unauthorized() -> Response {
    (
        StatusCode::UNAUTHORIZED,
        Json(json!({"ok": false, "error_code": 401, "description": "Unauthorized"})),
    )
        .into_response()
}

async fn get_updates(
    Path(bot_token): Path<String>,
    Query(query): Query<PollQuery>,
    State(state): State<Arc<TgState>>,
) -> Response {
    if !check_token(&state, &bot_token) {
        return unauthorized();
    }
    let faulted = state
        .fail_polls
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    state.polls.lock().unwrap().push(PollRecord {
        at: Instant::now(),
        offset: query.offset,
        served: !faulted,
    });
    if faulted {
        return (StatusCode::INTERNAL_SERVER_ERROR, "injected fault").into_response();
    }
    if state.replay_confirmed_once.swap(false, Ordering::SeqCst) {
        let all = state.history.lock().unwrap().clone();
        return Json(json!({"ok": true, "result": all})).into_response();
    }

    // long poll: confirmed updates (id < offset) are pruned; hold the request
    // briefly when nothing is pending
    let deadline = tokio::time::Instant::now() + Duration::from_secs(query.timeout.min(2));
    loop {
        {
            let mut updates = state.updates.lock().unwrap();
            updates.retain(|u| u["update_id"].as_i64().unwrap_or(0) >= query.offset);
            if !updates.is_empty() {
                return Json(json!({"ok": true, "result": updates.clone()})).into_response();
            }
        }
        if tokio::time::Instant::now() >= deadline {
            return Json(json!({"ok": true, "result": []})).into_response();
        }
        let _ = tokio::time::timeout_at(deadline, state.notify.notified()).await;
    }
}

async fn send_message(
    Path(bot_token): Path<String>,
    State(state): State<Arc<TgState>>,
    Json(body): Json<Value>,
) -> Response {
    if !check_token(&state, &bot_token) {
        return unauthorized();
    }
    state.send_attempts.lock().unwrap().push(Instant::now());
    if state
        .fail_sends
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return (StatusCode::INTERNAL_SERVER_ERROR, "injected fault").into_response();
    }
    if let Some(retry_after) = state.rate_limit_once.lock().unwrap().take() {
        return (
            StatusCode::TOO_MANY_REQUESTS,
            Json(json!({
                "ok": false,
                "error_code": 429,
                "description": "Too Many Requests",
                "parameters": { "retry_after": retry_after }
            })),
        )
            .into_response();
    }
    let chat_id = body["chat_id"].as_i64().unwrap_or(0);
    let text = body["text"].as_str().unwrap_or("").to_string();
    let mut sent = state.sent.lock().unwrap();
    let message_id = sent.len() as i64 + 1;
    sent.push(SentMessage {
        chat_id,
        text,
        at: Instant::now(),
    });
    Json(json!({"ok": true, "result": {"message_id": message_id}})).into_response()
}

// ---------------------------------------------------------------------------
// simulated inference server (embed + streaming completion)
// ---------------------------------------------------------------------------

/// What the completion endpoint streams back.
#[derive(Debug, Clone)]
pub enum CompletionScript {
    /// Well-formed stream: one data line per delta, then a stop line that
    /// carries counts when present.
    Tokens {
        deltas: Vec<String>,
        counts: Option<(u32, u32)>,
    },
    /// A line that is not a `data:` event appears mid-stream.
    MalformedLine,
    /// Stream ends after the given number of deltas without a stop event.
    DropAfter(usize),
    /// Well-formed stream whose final stop line has no trailing newline.
    StopWithoutNewline { deltas: Vec<String> },
}

struct InfState {
    embed_dim: usize,
    script: Mutex<CompletionScript>,
    completion_requests: Mutex<Vec<Value>>,
    embed_requests: Mutex<Vec<Value>>,
}

pub struct SimInference {
    pub base_url: String,
    state: Arc<InfState>,
}

impl SimInference {
    pub async fn start(embed_dim: usize) -> Self {
        let state = Arc::new(InfState {
            embed_dim,
            script: Mutex::new(CompletionScript::Tokens {
                deltas: vec!["ok".into()],
                counts: Some((1, 1)),
            }),
            completion_requests: Mutex::new(Vec::new()),
            embed_requests: Mutex::new(Vec::new()),
        });
        let app = Router::new()
            .route("/completion", post(completion))
            .route("/embed", post(embed))
            .with_state(Arc::clone(&state));
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Self {
            base_url: format!("http://{addr}"),
            state,
        }
    }

    pub fn set_script(&self, script: CompletionScript) {
        *self.state.script.lock().unwrap() = script;
    }

    pub fn completion_requests(&self) -> Vec<Value> {
        self.state.completion_requests.lock().unwrap().clone()
    }

    pub fn embed_requests(&self) -> Vec<Value> {
        self.state.embed_requests.lock().unwrap().clone()
    }
}

/// Deterministic per-text embedding used by the simulated server.
pub fn sim_server_vector(text: &str, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|i| ((text.len() * (i + 3) + i * 7) % 23) as f32 + 1.0)
        .collect()
}

async fn completion(State(state): State<Arc<InfState>>, Json(body): Json<Value>) -> Response {
    state.completion_requests.lock().unwrap().push(body);
    let script = state.script.lock().unwrap().clone();
    let mut out = String::new();
    match script {
        CompletionScript::Tokens { deltas, counts } => {
            for delta in &deltas {
                out.push_str(&format!(
                    "data: {}\n",
                    json!({"content": delta, "stop": false})
                ));
            }
            let mut stop = json!({"content": "", "stop": true});
            if let Some((prompt_tokens, completion_tokens)) = counts {
                stop["prompt_tokens"] = json!(prompt_tokens);
                stop["completion_tokens"] = json!(completion_tokens);
            }
            out.push_str(&format!("data: {stop}\n"));
        }
        CompletionScript::MalformedLine => {
            out.push_str(&format!(
                "data: {}\n",
                json!({"content": "a", "stop": false})
            ));
            out.push_str("this is not an event line\n");
        }
        CompletionScript::DropAfter(n) => {
            for i in 0..n {
                out.push_str(&format!(
                    "data: {}\n",
                    json!({"content": format!("t{i}"), "stop": false})
                ));
            }
            // no stop line: the stream just ends
        }
        CompletionScript::StopWithoutNewline { deltas } => {
            for delta in &deltas {
                out.push_str(&format!(
                    "data: {}\n",
                    json!({"content": delta, "stop": false})
                ));
            }
            out.push_str(&format!("data: {}", json!({"content": "", "stop": true})));
        }
    }
    (
        [(axum::http::header::CONTENT_TYPE, "text/event-stream")],
        out,
    )
        .into_response()
}

async fn embed(State(state): State<Arc<InfState>>, Json(body): Json<Value>) -> Response {
    state.embed_requests.lock().unwrap().push(body.clone());
    let texts: Vec<String> = body["texts"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|t| t.as_str().unwrap_or("").to_string())
                .collect()
        })
        .unwrap_or_default();
    let dim = state.embed_dim;
    let vectors: Vec<Vec<f32>> = texts.iter().map(|t| sim_server_vector(t, dim)).collect();
    Json(json!({"vectors": vectors})).into_response()
}
