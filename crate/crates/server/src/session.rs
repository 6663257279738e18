use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use elqa_dashboard::{DashboardError, DashboardRegistry, Document, LiveDashboard};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;
use tokio::sync::watch;

use crate::wire::{parse_client_message, ServerMessage};

/// Idle time after which a session is dropped, unless configured otherwise.
pub const DEFAULT_SESSION_TTL_S: u64 = 1800;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown dashboard {0:?}")]
    UnknownDashboard(String),
    #[error(transparent)]
    Dashboard(DashboardError),
}

impl ServerError {
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::UnknownSession(_) => "UnknownSession",
            ServerError::UnknownDashboard(_) => "UnknownDashboard",
            ServerError::Dashboard(e) => e.code(),
        }
    }
}

impl From<DashboardError> for ServerError {
    fn from(e: DashboardError) -> Self {
        match e {
            DashboardError::UnknownDashboard(name) => ServerError::UnknownDashboard(name),
            other => ServerError::Dashboard(other),
        }
    }
}

/// Response body of session creation.
#[derive(Debug, Clone, Serialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub document: Value,
}

struct Live {
    dashboard: Box<dyn LiveDashboard>,
    last_active_at: DateTime<Utc>,
}

struct Session {
    dashboard_name: String,
    created_at: DateTime<Utc>,
    live: Mutex<Live>,
    closed: watch::Sender<Option<String>>,
}

/// Snapshot of one session's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionStatus {
    pub dashboard: String,
    pub created_at: DateTime<Utc>,
    pub last_active_at: DateTime<Utc>,
    pub revision: u64,
}

/// All live sessions. Each session's events run one at a time under its own
/// lock; distinct sessions proceed in parallel.
pub struct SessionManager {
    registry: DashboardRegistry,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl std::fmt::Debug for SessionManager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionManager")
            .field("registry", &self.registry)
            .field("sessions", &self.sessions.read().len())
            .finish()
    }
}

impl SessionManager {
    pub fn new(registry: DashboardRegistry) -> Self {
        Self {
            registry,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn create_session(&self, dashboard_name: &str) -> Result<SessionInfo, ServerError> {
        let dashboard = self.registry.create(dashboard_name)?;
        let document = dashboard.document().to_payload();
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let now = Utc::now();
        let (closed, _) = watch::channel(None);
        let session = Session {
            dashboard_name: dashboard_name.to_string(),
            created_at: now,
            live: Mutex::new(Live {
                dashboard,
                last_active_at: now,
            }),
            closed,
        };
        self.sessions.write().insert(session_id.clone(), Arc::new(session));
        tracing::info!(session = %session_id, dashboard = dashboard_name, "session created");
        Ok(SessionInfo { session_id, document })
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ServerError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServerError::UnknownSession(id.to_string()))
    }

    /// Processes one inbound message. Only an unknown session is an `Err`;
    /// every other failure becomes an error message for the client.
    pub fn handle_event(&self, session_id: &str, bytes: &[u8]) -> Result<ServerMessage, ServerError> {
        let session = self.session(session_id)?;
        let mut live = session.live.lock();
        live.last_active_at = Utc::now();
        let event = match parse_client_message(bytes) {
            Ok(e) => e,
            Err(detail) => return Ok(ServerMessage::error("MalformedMessage", detail)),
        };
        Ok(match live.dashboard.input_change(&event) {
            Ok(patch) => patch.into(),
            Err(e) => ServerMessage::error(e.code(), e.to_string()),
        })
    }

    pub fn document(&self, session_id: &str) -> Result<Document, ServerError> {
        Ok(self.session(session_id)?.live.lock().dashboard.document().clone())
    }

    pub fn status(&self, session_id: &str) -> Result<SessionStatus, ServerError> {
        let s = self.session(session_id)?;
        let live = s.live.lock();
        Ok(SessionStatus {
            dashboard: s.dashboard_name.clone(),
            created_at: s.created_at,
            last_active_at: live.last_active_at,
            revision: live.dashboard.document().revision(),
        })
    }

    /// Receives the close reason once the session goes away.
    pub fn subscribe(&self, session_id: &str) -> Result<watch::Receiver<Option<String>>, ServerError> {
        Ok(self.session(session_id)?.closed.subscribe())
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops sessions idle for longer than `ttl_s` seconds and notifies their
    /// channels. A ttl of 0 never expires anything.
    pub fn expire_sessions(&self, now: DateTime<Utc>, ttl_s: u64) -> usize {
        if ttl_s == 0 {
            return 0;
        }
        let ttl = chrono::Duration::seconds(ttl_s.min(i64::MAX as u64) as i64);
        let mut sessions = self.sessions.write();
        let idle: Vec<String> = sessions
            .iter()
            .filter(|(_, s)| now - s.live.lock().last_active_at > ttl)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &idle {
            if let Some(s) = sessions.remove(id) {
                s.closed.send_replace(Some("session expired".to_string()));
                tracing::info!(session = %id, "session expired");
            }
        }
        idle.len()
    }
}
