//! Session-oriented control service for live simulations.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | `POST` | `/sessions` | optional config JSON | `201 {id, tick, config}` |
//! | `GET` | `/sessions` | | list of ids |
//! | `GET` | `/sessions/{id}` | | status with full snapshot |
//! | `DELETE` | `/sessions/{id}` | | `204` |
//! | `POST` | `/sessions/{id}/command` | `{"verb": ...}` | acknowledgment |
//! | `GET` | `/sessions/{id}/network` | `?format=text` for the edge list | network view |
//! | `GET` | `/sessions/{id}/stream` | `?decimation=N`, WebSocket upgrade | JSON frames |
//!
//! Verbs: `step {n}`, `run {rate}`, `pause`, `crash`, `force_short`,
//! `remove_value_investors`, `reset {seed}`. Stream clients may send
//! `{"decimation": N}` at any time to thin the frame rate.

pub mod session;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use otcnet_core::{SimConfig, SimState};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

pub use session::{Ack, Command, Frame, Mode, Status};
use session::{Published, Request, SessionHandle};

#[derive(Default)]
pub struct Sessions {
    next_id: AtomicU64,
    live: Mutex<HashMap<String, SessionHandle>>,
}

impl Sessions {
    fn get(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.live
            .lock()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }
}

pub type AppState = Arc<Sessions>;

pub fn router() -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_status).delete(delete_session))
        .route("/sessions/{id}/command", post(command))
        .route("/sessions/{id}/network", get(network))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(AppState::default())
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session `{id}`"))
    }

    fn gone() -> Self {
        Self::new(StatusCode::NOT_FOUND, "session closed")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

async fn ask<T>(handle: &SessionHandle, make: impl FnOnce(oneshot::Sender<T>) -> Request) -> Result<T, ApiError> {
    let (tx, rx) = oneshot::channel();
    if !handle.send(make(tx)) {
        return Err(ApiError::gone());
    }
    rx.await.map_err(|_| ApiError::gone())
}

async fn create_session(State(sessions): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let config: SimConfig = if body.iter().all(u8::is_ascii_whitespace) {
        SimConfig::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
    };
    let state = SimState::new(config.clone()).map_err(|e| match e {
        otcnet_core::Error::Config { field, message } => ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": "invalid config", "field": field, "message": message }),
        },
        other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, other.to_string()),
    })?;
    let id = format!("s{}", sessions.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    let handle = SessionHandle::spawn(id.clone(), state);
    sessions
        .live
        .lock()
        .expect("session table poisoned")
        .insert(id.clone(), handle);
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": id, "tick": 0, "config": config })),
    )
        .into_response())
}

async fn list_sessions(State(sessions): State<AppState>) -> Json<Vec<String>> {
    let mut ids: Vec<String> = sessions
        .live
        .lock()
        .expect("session table poisoned")
        .keys()
        .cloned()
        .collect();
    ids.sort();
    Json(ids)
}

async fn session_status(State(sessions): State<AppState>, Path(id): Path<String>) -> Result<Json<Status>, ApiError> {
    let handle = sessions.get(&id)?;
    Ok(Json(ask(&handle, Request::Status).await?))
}

async fn delete_session(State(sessions): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    sessions
        .live
        .lock()
        .expect("session table poisoned")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::not_found(&id))
}

async fn command(State(sessions): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Ack>, ApiError> {
    let handle = sessions.get(&id)?;
    let cmd: Command =
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    cmd.validate().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    ask(&handle, |tx| Request::Command(cmd, tx))
        .await?
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))
}

#[derive(Debug, Deserialize)]
struct NetworkQuery {
    format: Option<String>,
}

async fn network(
    State(sessions): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<NetworkQuery>,
) -> Result<Response, ApiError> {
    let handle = sessions.get(&id)?;
    let (view, edge_list) = ask(&handle, Request::Network).await?;
    Ok(match q.format.as_deref() {
        None | Some("json") => Json(view).into_response(),
        Some("text") => edge_list.into_response(),
        Some(other) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("unknown format `{other}`"),
            ))
        }
    })
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    decimation: Option<u64>,
}

async fn stream(
    State(sessions): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let decimation = q.decimation.unwrap_or(1);
    if decimation == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "decimation must be at least 1"));
    }
    // Subscribe before the handshake completes so no frame after it is missed.
    let frames = sessions.get(&id)?.subscribe();
    Ok(ws.on_upgrade(move |socket| forward_frames(socket, frames, decimation)))
}

#[derive(Debug, Deserialize)]
struct StreamControl {
    decimation: u64,
}

/// Sends every `decimation`-th tick frame plus every command frame. Trades from
/// skipped frames are carried into the next one sent.
async fn forward_frames(mut socket: WebSocket, mut frames: broadcast::Receiver<Published>, mut decimation: u64) {
    let mut carried = Vec::new();
    loop {
        tokio::select! {
            published = frames.recv() => {
                let published = match published {
                    Ok(p) => p,
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                };
                let frame = &published.frame;
                if !published.forced && frame.tick % decimation != 0 {
                    carried.extend(frame.trades.iter().cloned());
                    continue;
                }
                let text = if carried.is_empty() {
                    serde_json::to_string(&**frame)
                } else {
                    let mut merged = (**frame).clone();
                    carried.append(&mut merged.trades);
                    merged.trades = std::mem::take(&mut carried);
                    serde_json::to_string(&merged)
                };
                let Ok(text) = text else { break };
                if socket.send(Message::Text(text.into())).await.is_err() {
                    return;
                }
            }
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(t))) => {
                    if let Ok(StreamControl { decimation: d }) = serde_json::from_str(&t) {
                        decimation = d.max(1);
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
