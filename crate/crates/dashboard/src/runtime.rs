//! Dashboard lifecycle, callback dispatch and patch coalescing.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use elqa_core::StoreError;
use serde_json::{json, Value};
use thiserror::Error;

use crate::document::{ColumnMap, DocError, Document, ModelKind, Patch, PatchOp};
use crate::event::{payload_value, EventKind, UiEvent};

/// Option prepended to every parameter list; selects everything.
pub const ALL_OPTION: &str = "(all)";

#[derive(Debug, Error)]
pub enum DashboardError {
    #[error("no handler for {event} on {model:?}")]
    NoHandler { model: String, event: EventKind },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("handler for {event} on {model:?} already registered")]
    DuplicateRegistration { model: String, event: EventKind },
    #[error("interactive widget {0:?} has no handler")]
    UnhandledWidget(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("unknown circuit {0:?}")]
    UnknownCircuit(String),
    #[error("template {0:?} lacks the {{measurement_id}} placeholder")]
    BadTemplate(String),
    #[error("unknown dashboard {0:?}")]
    UnknownDashboard(String),
    #[error(transparent)]
    Document(#[from] DocError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl DashboardError {
    pub fn code(&self) -> &'static str {
        match self {
            DashboardError::NoHandler { .. } => "NoHandler",
            DashboardError::InvalidPayload(_) => "InvalidPayload",
            DashboardError::DuplicateRegistration { .. } => "DuplicateRegistration",
            DashboardError::UnhandledWidget(_) => "UnhandledWidget",
            DashboardError::UnknownParameter(_) => "UnknownParameter",
            DashboardError::UnknownCircuit(_) => "UnknownCircuit",
            DashboardError::BadTemplate(_) => "BadTemplate",
            DashboardError::UnknownDashboard(_) => "UnknownDashboard",
            DashboardError::Document(e) => e.code(),
            DashboardError::Store(e) => e.code(),
        }
    }
}

/// Columns for one data source plus the rows that could not be computed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceData {
    pub data: ColumnMap,
    pub warnings: Vec<String>,
}

/// Pending property writes made by one handler invocation.
pub struct DocTx<'a> {
    doc: &'a Document,
    writes: Vec<(String, String, Value)>,
    index: HashMap<(String, String), usize>,
}

impl<'a> DocTx<'a> {
    fn new(doc: &'a Document) -> Self {
        Self {
            doc,
            writes: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// The document as it was before this event.
    pub fn document(&self) -> &Document {
        self.doc
    }

    /// Current value including pending writes.
    pub fn get(&self, model: &str, prop: &str) -> Option<&Value> {
        match self.index.get(&(model.to_string(), prop.to_string())) {
            Some(&i) => Some(&self.writes[i].2),
            None => self.doc.get(model, prop),
        }
    }

    pub fn set(&mut self, model: &str, prop: &str, value: Value) {
        let key = (model.to_string(), prop.to_string());
        match self.index.get(&key) {
            Some(&i) => self.writes[i].2 = value,
            None => {
                self.index.insert(key, self.writes.len());
                self.writes.push((model.to_string(), prop.to_string(), value));
            }
        }
    }

    /// Writes `data` and `warnings` of a column data source, clearing its
    /// selection.
    pub fn set_source(&mut self, model: &str, source: &SourceData) {
        self.set(model, "data", crate::document::columns_value(&source.data));
        self.set(model, "warnings", json!(source.warnings));
        self.set(model, "selected_indices", json!([]));
    }

    fn into_ops(self, echo: &(String, String)) -> Vec<PatchOp> {
        let doc = self.doc;
        self.writes
            .into_iter()
            .filter(|(m, p, v)| (m == &echo.0 && p == &echo.1) || doc.get(m, p) != Some(v))
            .map(|(model_id, property, new_value)| PatchOp {
                model_id,
                property,
                new_value,
            })
            .collect()
    }
}

pub type Handler<D> =
    Box<dyn Fn(&mut D, &mut DocTx<'_>, &UiEvent) -> Result<(), DashboardError> + Send + Sync>;

/// Maps (model id, event) to exactly one handler.
pub struct CallbackRegistry<D> {
    handlers: BTreeMap<(String, EventKind), Handler<D>>,
}

impl<D> Default for CallbackRegistry<D> {
    fn default() -> Self {
        Self {
            handlers: BTreeMap::new(),
        }
    }
}

impl<D> CallbackRegistry<D> {
    pub fn register<F>(&mut self, model: &str, event: EventKind, handler: F) -> Result<(), DashboardError>
    where
        F: Fn(&mut D, &mut DocTx<'_>, &UiEvent) -> Result<(), DashboardError> + Send + Sync + 'static,
    {
        let key = (model.to_string(), event);
        if self.handlers.contains_key(&key) {
            return Err(DashboardError::DuplicateRegistration {
                model: model.to_string(),
                event,
            });
        }
        self.handlers.insert(key, Box::new(handler));
        Ok(())
    }

    pub fn contains(&self, model: &str, event: EventKind) -> bool {
        self.handlers.contains_key(&(model.to_string(), event))
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, EventKind)> {
        self.handlers.keys().map(|(m, e)| (m.as_str(), *e))
    }

    pub fn len(&self) -> usize {
        self.handlers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handlers.is_empty()
    }
}

/// The five lifecycle methods of an application.
pub trait Dashboard: Send + Sized + 'static {
    type Filters;

    /// Builds the initial document.
    fn create(&mut self) -> Result<Document, DashboardError>;

    /// Attaches handlers to the widgets built by `create`.
    fn setup_events(&self, registry: &mut CallbackRegistry<Self>) -> Result<(), DashboardError>;

    /// Column data per source id for the given filters.
    fn get_data(&self, filters: &Self::Filters) -> Result<BTreeMap<String, SourceData>, DashboardError>;

    /// Options for a named parameter, starting with [`ALL_OPTION`].
    fn get_parameter(&self, name: &str) -> Result<Vec<String>, DashboardError>;
}

/// A dashboard together with its live document and handlers.
pub struct DashboardRuntime<D: Dashboard> {
    dashboard: D,
    document: Document,
    registry: CallbackRegistry<D>,
    handler_calls: u64,
}

impl<D: Dashboard> std::fmt::Debug for DashboardRuntime<D> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DashboardRuntime")
            .field("revision", &self.document.revision())
            .field("handlers", &self.registry.len())
            .field("handler_calls", &self.handler_calls)
            .finish()
    }
}

impl<D: Dashboard> DashboardRuntime<D> {
    /// Runs `create` and `setup_events`, then checks that every handler
    /// targets an existing model of a compatible kind and every interactive
    /// widget is handled.
    pub fn new(mut dashboard: D) -> Result<Self, DashboardError> {
        let document = dashboard.create()?;
        document.validate()?;
        let mut registry = CallbackRegistry::default();
        dashboard.setup_events(&mut registry)?;
        for (model, event) in registry.keys() {
            let node = document
                .model(model)
                .ok_or_else(|| DocError::UnknownModel(model.to_string()))?;
            if !event.valid_for(node.kind) {
                return Err(DashboardError::InvalidPayload(format!(
                    "{event} cannot target {model}, a {}",
                    node.kind
                )));
            }
        }
        for (id, node) in document.models() {
            if node.kind.is_interactive() && !registry.keys().any(|(m, _)| m == id) {
                return Err(DashboardError::UnhandledWidget(id.clone()));
            }
        }
        Ok(Self {
            dashboard,
            document,
            registry,
            handler_calls: 0,
        })
    }

    pub fn document(&self) -> &Document {
        &self.document
    }

    pub fn dashboard(&self) -> &D {
        &self.dashboard
    }

    pub fn registry(&self) -> &CallbackRegistry<D> {
        &self.registry
    }

    pub fn handler_calls(&self) -> u64 {
        self.handler_calls
    }

    /// Dispatches one event and returns the single patch it produced. On
    /// error the document is unchanged.
    pub fn input_change(&mut self, event: &UiEvent) -> Result<Patch, DashboardError> {
        let handler = self
            .registry
            .handlers
            .get(&(event.model_id.clone(), event.event))
            .ok_or_else(|| DashboardError::NoHandler {
                model: event.model_id.clone(),
                event: event.event,
            })?;
        let (echo, echo_value) = validate_event(&self.document, event)?;

        let mut tx = DocTx::new(&self.document);
        tx.set(&echo.0, &echo.1, echo_value);
        self.handler_calls += 1;
        handler(&mut self.dashboard, &mut tx, event)?;

        let patch = Patch {
            revision: self.document.revision() + 1,
            ops: tx.into_ops(&echo),
        };
        self.document = self.document.apply_patch(&patch)?;
        Ok(patch)
    }
}

fn invalid(msg: impl Into<String>) -> DashboardError {
    DashboardError::InvalidPayload(msg.into())
}

/// Checks the payload against the target and returns the property the
/// event itself sets, with its new value.
fn validate_event(doc: &Document, event: &UiEvent) -> Result<((String, String), Value), DashboardError> {
    let node = doc
        .model(&event.model_id)
        .ok_or_else(|| DocError::UnknownModel(event.model_id.clone()))?;
    if !event.event.valid_for(node.kind) {
        return Err(invalid(format!("{} is not valid for a {}", event.event, node.kind)));
    }
    let id = event.model_id.clone();
    match event.event {
        EventKind::ValueChange => {
            let value = payload_value(&event.payload)
                .ok_or_else(|| invalid("value_change needs a string value"))?;
            let known = node
                .get("options")
                .and_then(Value::as_array)
                .is_some_and(|o| o.iter().any(|x| x.as_str() == Some(value)));
            if !value.is_empty() && !known {
                return Err(invalid(format!("{value:?} is not an option of {id}")));
            }
            Ok(((id, "value".into()), json!(value)))
        }
        EventKind::Select => {
            let source = if node.kind == ModelKind::DataTable {
                node.str_prop("source").unwrap_or_default().to_string()
            } else {
                id
            };
            let rows = doc.model(&source).map_or(0, |s| s.row_count());
            let items = event
                .payload
                .as_array()
                .ok_or_else(|| invalid("select needs a list of row indices"))?;
            let mut seen = Vec::with_capacity(items.len());
            for item in items {
                match item.as_u64() {
                    Some(i) if (i as usize) < rows && !seen.contains(&i) => seen.push(i),
                    _ => return Err(invalid(format!("bad row index {item} for {source}"))),
                }
            }
            Ok(((source, "selected_indices".into()), json!(seen)))
        }
        EventKind::Tap => {
            let sources: Vec<&str> = node
                .get("sources")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_str).collect())
                .unwrap_or_default();
            let (source, index) = match &event.payload {
                Value::Number(n) => (sources.first().copied(), n.as_u64()),
                Value::Object(o) => (
                    o.get("source").and_then(Value::as_str),
                    o.get("index").and_then(Value::as_u64),
                ),
                _ => (None, None),
            };
            let (Some(source), Some(index)) = (source, index) else {
                return Err(invalid("tap needs {source, index}"));
            };
            if !sources.contains(&source) {
                return Err(invalid(format!("{source} is not plotted by {id}")));
            }
            if index as usize >= doc.model(source).map_or(0, |s| s.row_count()) {
                return Err(invalid(format!("index {index} out of range for {source}")));
            }
            Ok(((id, "tapped".into()), json!({"source": source, "index": index})))
        }
    }
}

/// Object-safe view of a running dashboard, for transports.
pub trait LiveDashboard: Send {
    fn document(&self) -> &Document;
    fn input_change(&mut self, event: &UiEvent) -> Result<Patch, DashboardError>;
    fn handler_calls(&self) -> u64;
}

impl<D: Dashboard> LiveDashboard for DashboardRuntime<D> {
    fn document(&self) -> &Document {
        DashboardRuntime::document(self)
    }

    fn input_change(&mut self, event: &UiEvent) -> Result<Patch, DashboardError> {
        DashboardRuntime::input_change(self, event)
    }

    fn handler_calls(&self) -> u64 {
        DashboardRuntime::handler_calls(self)
    }
}

pub type DashboardFactory =
    Arc<dyn Fn() -> Result<Box<dyn LiveDashboard>, DashboardError> + Send + Sync>;

/// Named dashboard constructors.
#[derive(Clone, Default)]
pub struct DashboardRegistry {
    factories: BTreeMap<String, DashboardFactory>,
}

impl DashboardRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Result<Box<dyn LiveDashboard>, DashboardError> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Arc::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn LiveDashboard>, DashboardError> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| DashboardError::UnknownDashboard(name.to_string()))?;
        factory()
    }
}

impl std::fmt::Debug for DashboardRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}
