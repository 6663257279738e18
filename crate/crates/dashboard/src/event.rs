use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::document::ModelKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ValueChange,
    Select,
    Tap,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::ValueChange, EventKind::Select, EventKind::Tap];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ValueChange => "value_change",
            EventKind::Select => "select",
            EventKind::Tap => "tap",
        }
    }

    /// Whether a model of `kind` can emit this event.
    pub fn valid_for(self, kind: ModelKind) -> bool {
        match self {
            EventKind::ValueChange => kind == ModelKind::SelectBox,
            EventKind::Select => {
                matches!(kind, ModelKind::ColumnDataSource | ModelKind::DataTable)
            }
            EventKind::Tap => kind.is_plot(),
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown event {s:?}"))
    }
}

/// A client-originated interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiEvent {
    #[serde(rename = "model")]
    pub model_id: String,
    pub event: EventKind,
    #[serde(default)]
    pub payload: Value,
}

impl UiEvent {
    pub fn new(model_id: impl Into<String>, event: EventKind, payload: Value) -> Self {
        Self {
            model_id: model_id.into(),
            event,
            payload,
        }
    }

    pub fn value_change(model_id: impl Into<String>, value: impl Into<Value>) -> Self {
        Self::new(model_id, EventKind::ValueChange, value.into())
    }

    pub fn select(model_id: impl Into<String>, indices: &[usize]) -> Self {
        Self::new(model_id, EventKind::Select, Value::from(indices.to_vec()))
    }

    pub fn tap(model_id: impl Into<String>, source: &str, index: usize) -> Self {
        Self::new(
            model_id,
            EventKind::Tap,
            serde_json::json!({"source": source, "index": index}),
        )
    }
}

/// The value carried by a `value_change` payload: either a bare string or
/// an object with a `value` (or `verdict`) member.
pub fn payload_value(payload: &Value) -> Option<&str> {
    match payload {
        Value::String(s) => Some(s),
        Value::Object(o) => o.get("value").or_else(|| o.get("verdict"))?.as_str(),
        _ => None,
    }
}
