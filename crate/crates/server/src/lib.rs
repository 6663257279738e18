//! HTTP and websocket transport for dashboards.
//!
//! Routes:
//! - `GET /` serves the client (a directory given at startup, or a minimal
//!   built-in page)
//! - `GET /healthz`
//! - `POST /api/session?dashboard=NAME` returns `{session_id, document}`
//! - `GET /ws?session=ID` upgrades to the event/patch channel

mod session;
pub mod wire;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use session::{ServerError, SessionInfo, SessionManager, SessionStatus, DEFAULT_SESSION_TTL_S};
pub use wire::{ClientMessage, ServerMessage};

const INDEX_HTML: &str = include_str!("index.html");

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Idle seconds before a session expires; 0 disables expiry.
    pub session_ttl_s: u64,
    /// Directory holding a built client bundle.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            session_ttl_s: DEFAULT_SESSION_TTL_S,
            static_dir: None,
        }
    }
}

fn error_body(status: StatusCode, code: &str, detail: String) -> Response {
    (status, Json(ServerMessage::error(code, detail))).into_response()
}

async fn healthz() -> &'static str {
    "ok"
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn create_session(
    State(manager): State<Arc<SessionManager>>,
    Query(query): Query<HashMap<String, String>>,
) -> Response {
    let Some(name) = query.get("dashboard") else {
        return error_body(StatusCode::BAD_REQUEST, "MalformedMessage", "missing dashboard parameter".into());
    };
    match manager.create_session(name) {
        Ok(info) => Json(info).into_response(),
        Err(e @ ServerError::UnknownDashboard(_)) => error_body(StatusCode::NOT_FOUND, e.code(), e.to_string()),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string()),
    }
}

async fn channel(
    State(manager): State<Arc<SessionManager>>,
    Query(query): Query<HashMap<String, String>>,
    ws: WebSocketUpgrade,
) -> Response {
    let id = query.get("session").cloned().unwrap_or_default();
    ws.on_upgrade(move |socket| run_channel(manager, id, socket))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

async fn close(socket: &mut WebSocket, reason: &str) {
    send(socket, &ServerMessage::Close { reason: reason.to_string() }).await;
    let _ = socket.send(Message::Close(None)).await;
}

async fn run_channel(manager: Arc<SessionManager>, id: String, mut socket: WebSocket) {
    let mut closed = match manager.subscribe(&id) {
        Ok(rx) => rx,
        Err(e) => {
            send(&mut socket, &ServerMessage::error(e.code(), e.to_string())).await;
            close(&mut socket, "unknown session").await;
            return;
        }
    };
    loop {
        tokio::select! {
            changed = closed.changed() => {
                let reason = match changed {
                    Ok(()) => closed.borrow().clone().unwrap_or_default(),
                    Err(_) => "session ended".to_string(),
                };
                close(&mut socket, &reason).await;
                return;
            }
            incoming = socket.recv() => {
                let bytes = match incoming {
                    Some(Ok(Message::Text(t))) => t.as_str().as_bytes().to_vec(),
                    Some(Ok(Message::Binary(b))) => b.to_vec(),
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => return,
                };
                match manager.handle_event(&id, &bytes) {
                    Ok(reply) => {
                        if !send(&mut socket, &reply).await {
                            return;
                        }
                    }
                    Err(e) => {
                        send(&mut socket, &ServerMessage::error(e.code(), e.to_string())).await;
                        close(&mut socket, "unknown session").await;
                        return;
                    }
                }
            }
        }
    }
}

pub fn router(manager: Arc<SessionManager>, config: &ServerConfig) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/session", post(create_session))
        .route("/ws", get(channel))
        .with_state(manager);
    match &config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

/// Periodically drops idle sessions.
pub fn spawn_expiry(manager: Arc<SessionManager>, ttl_s: u64) -> Option<tokio::task::JoinHandle<()>> {
    if ttl_s == 0 {
        return None;
    }
    let period = Duration::from_secs((ttl_s / 4).clamp(1, 30));
    Some(tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            manager.expire_sessions(chrono::Utc::now(), ttl_s);
        }
    }))
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, manager: Arc<SessionManager>, config: ServerConfig) -> std::io::Result<()> {
    let expiry = spawn_expiry(manager.clone(), config.session_ttl_s);
    let app = router(manager, &config);
    let result = axum::serve(listener, app).await;
    if let Some(task) = expiry {
        task.abort();
    }
    result
}

/// Binds `addr` and serves in a background task, returning the bound address.
pub async fn spawn(
    addr: SocketAddr,
    manager: Arc<SessionManager>,
    config: ServerConfig,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener, manager, config))))
}
