//! JSON messages exchanged over the channel.

use elqa_dashboard::{EventKind, Patch, PatchOp, UiEvent};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Event {
        model: String,
        event: EventKind,
        #[serde(default)]
        payload: Value,
    },
}

impl ClientMessage {
    pub fn into_event(self) -> UiEvent {
        let ClientMessage::Event { model, event, payload } = self;
        UiEvent::new(model, event, payload)
    }
}

impl From<&UiEvent> for ClientMessage {
    fn from(e: &UiEvent) -> Self {
        ClientMessage::Event {
            model: e.model_id.clone(),
            event: e.event,
            payload: e.payload.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Patch { revision: u64, ops: Vec<PatchOp> },
    Error { code: String, detail: String },
    Close { reason: String },
}

impl ServerMessage {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code: code.to_string(),
            detail: detail.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }

    /// The patch carried by a `patch` message.
    pub fn patch(&self) -> Option<Patch> {
        match self {
            ServerMessage::Patch { revision, ops } => Some(Patch {
                revision: *revision,
                ops: ops.clone(),
            }),
            _ => None,
        }
    }
}

impl From<Patch> for ServerMessage {
    fn from(p: Patch) -> Self {
        ServerMessage::Patch {
            revision: p.revision,
            ops: p.ops,
        }
    }
}

/// Parses one inbound message.
pub fn parse_client_message(bytes: &[u8]) -> Result<UiEvent, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    serde_json::from_str::<ClientMessage>(text)
        .map(ClientMessage::into_event)
        .map_err(|e| e.to_string())
}
