//! The server-held widget tree and its patches.
//!
//! A [`Document`] maps model ids to [`ModelNode`]s, each with a kind and a
//! property map. The schema of every kind is checked on construction and on
//! every patch; a document that fails [`Document::validate`] is never
//! observable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Named columns of equal length.
pub type ColumnMap = BTreeMap<String, Vec<Value>>;

/// Placeholder a tap tool's URL template must contain.
pub const MEASUREMENT_PLACEHOLDER: &str = "{measurement_id}";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DocError {
    #[error("patch revision {got} does not follow document revision {current}")]
    RevisionGap { current: u64, got: u64 },
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("schema violation on {model}: {reason}")]
    SchemaViolation { model: String, reason: String },
    #[error("duplicate model id {0:?}")]
    DuplicateModel(String),
    #[error("patch has no operations")]
    EmptyPatch,
    #[error("malformed document payload: {0}")]
    Malformed(String),
}

impl DocError {
    pub fn code(&self) -> &'static str {
        match self {
            DocError::RevisionGap { .. } => "RevisionGap",
            DocError::UnknownModel(_) => "UnknownModel",
            DocError::SchemaViolation { .. } => "SchemaViolation",
            DocError::DuplicateModel(_) => "DuplicateModel",
            DocError::EmptyPatch => "EmptyPatch",
            DocError::Malformed(_) => "Malformed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SelectBox,
    DataTable,
    LinePlot,
    ScatterPlot,
    ColumnDataSource,
    TapTool,
    DetailPanel,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::SelectBox => "select_box",
            ModelKind::DataTable => "data_table",
            ModelKind::LinePlot => "line_plot",
            ModelKind::ScatterPlot => "scatter_plot",
            ModelKind::ColumnDataSource => "column_data_source",
            ModelKind::TapTool => "tap_tool",
            ModelKind::DetailPanel => "detail_panel",
        }
    }

    pub fn is_plot(self) -> bool {
        matches!(self, ModelKind::LinePlot | ModelKind::ScatterPlot)
    }

    /// Kinds a user interacts with directly.
    pub fn is_interactive(self) -> bool {
        matches!(
            self,
            ModelKind::SelectBox | ModelKind::DataTable | ModelKind::LinePlot | ModelKind::ScatterPlot
        )
    }

    fn allowed(self) -> &'static [&'static str] {
        match self {
            ModelKind::SelectBox => &["title", "options", "value"],
            ModelKind::DataTable => &["title", "source", "columns"],
            ModelKind::LinePlot | ModelKind::ScatterPlot => {
                &["title", "sources", "legend", "x", "y", "tapped"]
            }
            ModelKind::ColumnDataSource => &["data", "selected_indices", "warnings"],
            ModelKind::TapTool => &["target", "url_template", "last_url"],
            ModelKind::DetailPanel => &["title", "fields"],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelNode {
    pub kind: ModelKind,
    pub properties: BTreeMap<String, Value>,
}

impl ModelNode {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            properties: BTreeMap::new(),
        }
    }

    pub fn with(mut self, prop: &str, value: Value) -> Self {
        self.properties.insert(prop.to_string(), value);
        self
    }

    pub fn get(&self, prop: &str) -> Option<&Value> {
        self.properties.get(prop)
    }

    pub fn str_prop(&self, prop: &str) -> Option<&str> {
        self.get(prop).and_then(Value::as_str)
    }

    /// Row count of a column data source.
    pub fn row_count(&self) -> usize {
        self.get("data")
            .and_then(Value::as_object)
            .and_then(|cols| cols.values().next())
            .and_then(Value::as_array)
            .map_or(0, Vec::len)
    }

    /// One column of a column data source.
    pub fn column(&self, name: &str) -> Option<&Vec<Value>> {
        self.get("data")?.get(name)?.as_array()
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.get("selected_indices")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_u64().map(|i| i as usize)).collect())
            .unwrap_or_default()
    }
}

/// Arrangement of models on the page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutNode {
    Model(String),
    Row(Vec<LayoutNode>),
    Column(Vec<LayoutNode>),
}

impl LayoutNode {
    fn ids<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            LayoutNode::Model(id) => out.push(id),
            LayoutNode::Row(c) | LayoutNode::Column(c) => c.iter().for_each(|n| n.ids(out)),
        }
    }
}

/// One property assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchOp {
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(rename = "prop")]
    pub property: String,
    #[serde(rename = "value")]
    pub new_value: Value,
}

/// All property changes caused by one event, tagged with the revision the
/// document reaches once they are applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub revision: u64,
    pub ops: Vec<PatchOp>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Document {
    models: BTreeMap<String, ModelNode>,
    layout: Vec<LayoutNode>,
    revision: u64,
}

fn violation(model: &str, reason: impl Into<String>) -> DocError {
    DocError::SchemaViolation {
        model: model.to_string(),
        reason: reason.into(),
    }
}

fn string_list(model: &str, prop: &str, v: &Value) -> Result<Vec<String>, DocError> {
    v.as_array()
        .and_then(|a| a.iter().map(|x| x.as_str().map(str::to_string)).collect())
        .ok_or_else(|| violation(model, format!("{prop} must be a list of strings")))
}

impl Document {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn models(&self) -> &BTreeMap<String, ModelNode> {
        &self.models
    }

    pub fn layout(&self) -> &[LayoutNode] {
        &self.layout
    }

    pub fn model(&self, id: &str) -> Option<&ModelNode> {
        self.models.get(id)
    }

    pub fn get(&self, id: &str, prop: &str) -> Option<&Value> {
        self.models.get(id)?.get(prop)
    }

    /// Adds a model while the document is being built.
    pub fn add(&mut self, id: impl Into<String>, node: ModelNode) -> Result<(), DocError> {
        let id = id.into();
        if self.models.contains_key(&id) {
            return Err(DocError::DuplicateModel(id));
        }
        self.models.insert(id, node);
        Ok(())
    }

    pub fn set_layout(&mut self, layout: Vec<LayoutNode>) {
        self.layout = layout;
    }

    /// Checks every kind schema and every cross-model reference.
    pub fn validate(&self) -> Result<(), DocError> {
        let mut ids = Vec::new();
        self.layout.iter().for_each(|n| n.ids(&mut ids));
        for id in ids {
            if !self.models.contains_key(id) {
                return Err(DocError::UnknownModel(id.to_string()));
            }
        }
        for (id, node) in &self.models {
            self.validate_node(id, node)?;
        }
        Ok(())
    }

    fn reference(&self, from: &str, prop: &str, v: Option<&Value>, want: fn(ModelKind) -> bool) -> Result<String, DocError> {
        let target = v
            .and_then(Value::as_str)
            .ok_or_else(|| violation(from, format!("{prop} must name a model")))?;
        match self.models.get(target) {
            None => Err(DocError::UnknownModel(target.to_string())),
            Some(node) if !want(node.kind) => Err(violation(
                from,
                format!("{prop} refers to {target}, a {}", node.kind),
            )),
            Some(_) => Ok(target.to_string()),
        }
    }

    fn validate_node(&self, id: &str, node: &ModelNode) -> Result<(), DocError> {
        let allowed = node.kind.allowed();
        if let Some(p) = node.properties.keys().find(|p| !allowed.contains(&p.as_str())) {
            return Err(violation(id, format!("unknown property {p} for {}", node.kind)));
        }
        let text = |prop: &str| -> Result<(), DocError> {
            match node.get(prop) {
                None | Some(Value::String(_)) => Ok(()),
                Some(_) => Err(violation(id, format!("{prop} must be a string"))),
            }
        };
        text("title")?;
        match node.kind {
            ModelKind::SelectBox => {
                let options = string_list(
                    id,
                    "options",
                    node.get("options").unwrap_or(&Value::Null),
                )?;
                let value = node
                    .str_prop("value")
                    .ok_or_else(|| violation(id, "value must be a string"))?;
                if !value.is_empty() && !options.iter().any(|o| o == value) {
                    return Err(violation(id, format!("value {value:?} is not an option")));
                }
            }
            ModelKind::DataTable => {
                let source = self.reference(id, "source", node.get("source"), |k| {
                    k == ModelKind::ColumnDataSource
                })?;
                let columns = string_list(id, "columns", node.get("columns").unwrap_or(&Value::Null))?;
                let src = &self.models[&source];
                for c in columns {
                    if src.column(&c).is_none() {
                        return Err(violation(id, format!("column {c} missing from {source}")));
                    }
                }
            }
            ModelKind::LinePlot | ModelKind::ScatterPlot => {
                let sources = node
                    .get("sources")
                    .and_then(Value::as_array)
                    .ok_or_else(|| violation(id, "sources must be a list"))?;
                for s in sources {
                    self.reference(id, "sources", Some(s), |k| k == ModelKind::ColumnDataSource)?;
                }
                text("x")?;
                text("y")?;
                if let Some(legend) = node.get("legend") {
                    let legend = string_list(id, "legend", legend)?;
                    if legend.len() != sources.len() {
                        return Err(violation(id, "legend needs one entry per source"));
                    }
                }
                match node.get("tapped") {
                    None | Some(Value::Null) => {}
                    Some(t) => {
                        let src = t.get("source").and_then(Value::as_str);
                        let idx = t.get("index").and_then(Value::as_u64);
                        match (src, idx) {
                            (Some(s), Some(i)) if sources.iter().any(|x| x == s) => {
                                if i as usize >= self.models[s].row_count() {
                                    return Err(violation(id, "tapped index out of range"));
                                }
                            }
                            _ => return Err(violation(id, "tapped must be {source, index}")),
                        }
                    }
                }
            }
            ModelKind::ColumnDataSource => {
                let data = node
                    .get("data")
                    .and_then(Value::as_object)
                    .ok_or_else(|| violation(id, "data must be a column map"))?;
                let mut len = None;
                for (name, col) in data {
                    let n = col
                        .as_array()
                        .ok_or_else(|| violation(id, format!("column {name} must be a list")))?
                        .len();
                    if *len.get_or_insert(n) != n {
                        return Err(violation(id, format!("column {name} has length {n}")));
                    }
                }
                let rows = len.unwrap_or(0);
                let sel = node
                    .get("selected_indices")
                    .and_then(Value::as_array)
                    .ok_or_else(|| violation(id, "selected_indices must be a list"))?;
                let mut seen = BTreeSet::new();
                for s in sel {
                    match s.as_u64() {
                        Some(i) if (i as usize) < rows && seen.insert(i) => {}
                        _ => return Err(violation(id, format!("bad selected index {s}"))),
                    }
                }
                if let Some(w) = node.get("warnings") {
                    string_list(id, "warnings", w)?;
                }
            }
            ModelKind::TapTool => {
                self.reference(id, "target", node.get("target"), ModelKind::is_plot)?;
                let template = node
                    .str_prop("url_template")
                    .ok_or_else(|| violation(id, "url_template must be a string"))?;
                if !template.contains(MEASUREMENT_PLACEHOLDER) {
                    return Err(violation(id, "url_template lacks the placeholder"));
                }
                match node.get("last_url") {
                    None | Some(Value::Null) | Some(Value::String(_)) => {}
                    Some(_) => return Err(violation(id, "last_url must be a string or null")),
                }
            }
            ModelKind::DetailPanel => match node.get("fields") {
                None | Some(Value::Object(_)) => {}
                Some(_) => return Err(violation(id, "fields must be an object")),
            },
        }
        Ok(())
    }

    /// Applies a patch produced for revision `self.revision() + 1`.
    pub fn apply_patch(&self, patch: &Patch) -> Result<Document, DocError> {
        if patch.revision != self.revision + 1 {
            return Err(DocError::RevisionGap {
                current: self.revision,
                got: patch.revision,
            });
        }
        if patch.ops.is_empty() {
            return Err(DocError::EmptyPatch);
        }
        let mut next = self.clone();
        for op in &patch.ops {
            let node = next
                .models
                .get_mut(&op.model_id)
                .ok_or_else(|| DocError::UnknownModel(op.model_id.clone()))?;
            node.properties.insert(op.property.clone(), op.new_value.clone());
        }
        next.validate()?;
        next.revision = patch.revision;
        Ok(next)
    }

    /// Canonical JSON form: object keys sorted, models sorted by id.
    pub fn to_payload(&self) -> Value {
        serde_json::to_value(self).expect("document serializes")
    }

    pub fn serialize(&self) -> String {
        self.to_payload().to_string()
    }

    pub fn from_payload(v: &Value) -> Result<Document, DocError> {
        let doc: Document =
            serde_json::from_value(v.clone()).map_err(|e| DocError::Malformed(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }
}

impl FromStr for Document {
    type Err = DocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Value = serde_json::from_str(s).map_err(|e| DocError::Malformed(e.to_string()))?;
        Document::from_payload(&v)
    }
}

/// Free-function form of [`Document::apply_patch`].
pub fn apply_patch(doc: &Document, patch: &Patch) -> Result<Document, DocError> {
    doc.apply_patch(patch)
}

/// Builds a `data` value for a column data source.
pub fn columns_value(columns: &ColumnMap) -> Value {
    Value::Object(
        columns
            .iter()
            .map(|(k, v)| (k.clone(), Value::Array(v.clone())))
            .collect::<Map<_, _>>(),
    )
}
