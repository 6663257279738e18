//! The circuit capacitance cleansing dashboard.
//!
//! Users filter circuits by type, pick one from the statistics table, inspect
//! its capacitance over time (one series per variant), follow a point to its
//! activity page and record a verdict on it.

mod stats;

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use elqa_core::store::{format_timestamp, Annotation, DistinctField, Repository, Variant, Verdict};
use parking_lot::RwLock;
use serde_json::{json, Map, Value};

pub use stats::{
    activity_link, capacitance_series, capacitance_series_with, circuit_stats, circuit_stats_with,
    stats_failures, CapacitanceCache, CapacitanceSeries, CircuitRow, SeriesPoint,
};

use crate::document::{columns_value, ColumnMap, Document, LayoutNode, ModelKind, ModelNode, Patch};
use crate::event::{payload_value, EventKind, UiEvent};
use crate::runtime::{
    CallbackRegistry, Dashboard, DashboardError, DashboardRegistry, DashboardRuntime, DocTx,
    SourceData, ALL_OPTION,
};

pub const DASHBOARD_NAME: &str = "cleansing";

pub const TYPE_SELECT: &str = "type_select";
pub const CIRCUITS_SOURCE: &str = "circuits_source";
pub const CIRCUITS_TABLE: &str = "circuits_table";
pub const M1_SOURCE: &str = "capacitance_m1";
pub const M2_SOURCE: &str = "capacitance_m2";
pub const CAPACITANCE_PLOT: &str = "capacitance_plot";
pub const TAP_TOOL: &str = "tap_tool";
pub const DETAIL_PANEL: &str = "detail_panel";
pub const VERDICT_SELECT: &str = "verdict_select";

pub const DEFAULT_ACTIVITY_URL: &str = "https://elqa.example.org/activity/{measurement_id}";
pub const DEFAULT_AUTHOR: &str = "anonymous";

pub const TABLE_COLUMNS: [&str; 8] = [
    "circuit_id",
    "circuit_type",
    "sector",
    "n_measurements",
    "mean_capacitance_F",
    "std_capacitance_F",
    "latest_capacitance_F",
    "trend_slope_F_per_day",
];

pub const SERIES_COLUMNS: [&str; 5] = ["performed_at", "capacitance_F", "measurement_id", "variant", "suspect"];

pub type SharedRepository = Arc<RwLock<Repository>>;
pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub fn shared(repo: Repository) -> SharedRepository {
    Arc::new(RwLock::new(repo))
}

/// Everything the dashboards of one server share.
#[derive(Clone)]
pub struct CleansingContext {
    repo: SharedRepository,
    cache: Arc<CapacitanceCache>,
    activity_url_template: String,
    author: String,
    clock: Clock,
}

impl std::fmt::Debug for CleansingContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CleansingContext")
            .field("activity_url_template", &self.activity_url_template)
            .field("author", &self.author)
            .finish_non_exhaustive()
    }
}

impl CleansingContext {
    pub fn new(repo: SharedRepository, activity_url_template: &str) -> Result<Self, DashboardError> {
        activity_link("", activity_url_template)?;
        let cache = Arc::new(CapacitanceCache::build(&repo.read()));
        Ok(Self {
            repo,
            cache,
            activity_url_template: activity_url_template.to_string(),
            author: DEFAULT_AUTHOR.to_string(),
            clock: Arc::new(Utc::now),
        })
    }

    /// Author recorded when a verdict payload names none.
    pub fn with_author(mut self, author: &str) -> Self {
        self.author = author.to_string();
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn repository(&self) -> &SharedRepository {
        &self.repo
    }

    pub fn cache(&self) -> &CapacitanceCache {
        &self.cache
    }

    pub fn activity_url_template(&self) -> &str {
        &self.activity_url_template
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CleansingFilters {
    pub circuit_type: Option<String>,
    pub circuit_id: Option<String>,
}

#[derive(Debug, Clone, Default)]
struct State {
    circuit_type: Option<String>,
    circuit: Option<String>,
    measurement: Option<String>,
    last_url: Option<String>,
}

/// The cleansing application. The document is always a function of the
/// repository and the selection state, and every handler ends by rendering
/// that function into the pending patch.
#[derive(Debug)]
pub struct CleansingDashboard {
    ctx: CleansingContext,
    state: State,
}

fn num(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

fn series_columns(points: &[SeriesPoint], variant: Variant) -> ColumnMap {
    let mut cols: ColumnMap = SERIES_COLUMNS.iter().map(|c| (c.to_string(), Vec::new())).collect();
    for p in points {
        cols.get_mut("performed_at").unwrap().push(json!(format_timestamp(&p.performed_at)));
        cols.get_mut("capacitance_F").unwrap().push(json!(p.capacitance_f));
        cols.get_mut("measurement_id").unwrap().push(json!(p.measurement_id));
        cols.get_mut("variant").unwrap().push(json!(variant.as_str()));
        cols.get_mut("suspect").unwrap().push(json!(p.suspect));
    }
    cols
}

fn warning_lines(failures: &[(String, elqa_core::preprocess::PreprocessError)]) -> Vec<String> {
    failures.iter().map(|(id, e)| format!("{id}: {e}")).collect()
}

/// Index of the row whose `column` equals `value`.
fn position(data: &ColumnMap, column: &str, value: &str) -> Option<usize> {
    data.get(column)?.iter().position(|v| v.as_str() == Some(value))
}

impl CleansingDashboard {
    pub fn new(ctx: CleansingContext) -> Self {
        Self {
            ctx,
            state: State::default(),
        }
    }

    pub fn context(&self) -> &CleansingContext {
        &self.ctx
    }

    pub fn selected_circuit(&self) -> Option<&str> {
        self.state.circuit.as_deref()
    }

    pub fn selected_measurement(&self) -> Option<&str> {
        self.state.measurement.as_deref()
    }

    fn table_data(&self, repo: &Repository, circuit_type: Option<&str>) -> SourceData {
        let cap = |m: &_| self.ctx.cache.get(m);
        let rows = circuit_stats_with(repo, circuit_type, &cap);
        let mut data: ColumnMap = TABLE_COLUMNS.iter().map(|c| (c.to_string(), Vec::new())).collect();
        for r in &rows {
            let cells = [
                json!(r.circuit_id),
                json!(r.circuit_type),
                json!(r.sector),
                json!(r.n_measurements),
                num(r.mean_capacitance_f),
                num(r.std_capacitance_f),
                num(r.latest_capacitance_f),
                num(r.trend_slope_f_per_day),
            ];
            for (c, v) in TABLE_COLUMNS.iter().zip(cells) {
                data.get_mut(*c).unwrap().push(v);
            }
        }
        SourceData {
            data,
            warnings: warning_lines(&stats_failures(repo, &rows, &cap)),
        }
    }

    fn plot_data(&self, repo: &Repository, circuit_id: Option<&str>) -> Result<[SourceData; 2], DashboardError> {
        let Some(id) = circuit_id else {
            return Ok([Variant::M1, Variant::M2].map(|v| SourceData {
                data: series_columns(&[], v),
                warnings: Vec::new(),
            }));
        };
        let series = capacitance_series_with(repo, id, &|m: &_| self.ctx.cache.get(m))?;
        let warnings = warning_lines(&series.failures);
        Ok([Variant::M1, Variant::M2].map(|v| SourceData {
            data: series_columns(series.series(v), v),
            warnings: warnings.clone(),
        }))
    }

    fn detail_fields(&self, repo: &Repository) -> Value {
        let mut f = Map::new();
        if let Some(m) = self.state.measurement.as_deref().and_then(|id| repo.measurement(id)) {
            f.insert("measurement_id".into(), json!(m.measurement_id));
            f.insert("circuit_id".into(), json!(m.circuit_id));
            f.insert("campaign_id".into(), json!(m.campaign_id));
            f.insert("variant".into(), json!(m.variant.as_str()));
            f.insert("operator".into(), json!(m.operator));
            f.insert("performed_at".into(), json!(format_timestamp(&m.performed_at)));
            f.insert("capacitance_F".into(), num(self.ctx.cache.get(m).ok()));
            f.insert("verdict".into(), json!(m.verdict().map_or("", Verdict::as_str)));
            if let Some(a) = &m.annotation {
                f.insert("author".into(), json!(a.author));
                f.insert("note".into(), json!(a.note));
                f.insert("annotated_at".into(), json!(format_timestamp(&a.created_at)));
            }
            if let Ok(url) = activity_link(&m.measurement_id, &self.ctx.activity_url_template) {
                f.insert("activity_url".into(), json!(url));
            }
        } else if let Some(c) = self.state.circuit.as_deref().and_then(|id| repo.circuit(id)) {
            f.insert("circuit_id".into(), json!(c.circuit_id));
            f.insert("circuit_type".into(), json!(c.circuit_type));
            f.insert("sector".into(), json!(c.sector.as_str()));
            f.insert("magnet_position".into(), json!(c.magnet_position));
            f.insert("manufacturer".into(), json!(c.manufacturer));
        }
        Value::Object(f)
    }

    /// Writes the document state implied by the repository and selection.
    fn render(&mut self, tx: &mut DocTx<'_>) -> Result<(), DashboardError> {
        let repo = self.ctx.repo.read();

        let table = self.table_data(&repo, self.state.circuit_type.as_deref());
        let row = self
            .state
            .circuit
            .as_deref()
            .and_then(|c| position(&table.data, "circuit_id", c));
        if row.is_none() {
            self.state.circuit = None;
            self.state.measurement = None;
        }
        tx.set(TYPE_SELECT, "value", json!(self.state.circuit_type.as_deref().unwrap_or(ALL_OPTION)));
        tx.set_source(CIRCUITS_SOURCE, &table);
        tx.set(CIRCUITS_SOURCE, "selected_indices", json!(row.into_iter().collect::<Vec<_>>()));

        // A measurement stays selected while its circuit is, even once hidden.
        let owner = self
            .state
            .measurement
            .as_deref()
            .and_then(|id| repo.measurement(id))
            .map(|m| m.circuit_id.as_str());
        if owner.is_none() || owner != self.state.circuit.as_deref() {
            self.state.measurement = None;
        }

        let plots = self.plot_data(&repo, self.state.circuit.as_deref())?;
        for (id, src) in [M1_SOURCE, M2_SOURCE].into_iter().zip(&plots) {
            tx.set_source(id, src);
            if let Some(i) = self
                .state
                .measurement
                .as_deref()
                .and_then(|m| position(&src.data, "measurement_id", m))
            {
                tx.set(id, "selected_indices", json!([i]));
            }
        }

        tx.set(DETAIL_PANEL, "fields", self.detail_fields(&repo));
        let verdict = self
            .state
            .measurement
            .as_deref()
            .and_then(|id| repo.measurement(id))
            .and_then(|m| m.verdict());
        tx.set(VERDICT_SELECT, "value", json!(verdict.map_or("", Verdict::as_str)));
        tx.set(TAP_TOOL, "last_url", json!(self.state.last_url));
        tx.set(CAPACITANCE_PLOT, "tapped", Value::Null);
        Ok(())
    }

    fn on_type(&mut self, tx: &mut DocTx<'_>, ev: &UiEvent) -> Result<(), DashboardError> {
        let value = payload_value(&ev.payload).unwrap_or_default();
        self.state.circuit_type = match value {
            "" | ALL_OPTION => None,
            t => Some(t.to_string()),
        };
        self.render(tx)
    }

    fn on_table_select(&mut self, tx: &mut DocTx<'_>, ev: &UiEvent) -> Result<(), DashboardError> {
        let first = ev.payload.as_array().and_then(|a| a.first()).and_then(Value::as_u64);
        let circuit = match first {
            None => None,
            Some(i) => tx
                .document()
                .model(CIRCUITS_SOURCE)
                .and_then(|s| s.column("circuit_id"))
                .and_then(|c| c.get(i as usize))
                .and_then(Value::as_str)
                .map(str::to_string),
        };
        if circuit != self.state.circuit {
            self.state.measurement = None;
        }
        self.state.circuit = circuit;
        self.render(tx)
    }

    fn point_at(tx: &DocTx<'_>, source: &str, index: Option<u64>) -> Option<String> {
        tx.document()
            .model(source)?
            .column("measurement_id")?
            .get(index? as usize)?
            .as_str()
            .map(str::to_string)
    }

    fn on_point_select(&mut self, tx: &mut DocTx<'_>, ev: &UiEvent) -> Result<(), DashboardError> {
        let first = ev.payload.as_array().and_then(|a| a.first()).and_then(Value::as_u64);
        self.state.measurement = Self::point_at(tx, &ev.model_id, first);
        self.render(tx)
    }

    fn on_tap(&mut self, tx: &mut DocTx<'_>, ev: &UiEvent) -> Result<(), DashboardError> {
        let tapped = tx.get(&ev.model_id, "tapped").cloned().unwrap_or_default();
        let source = tapped.get("source").and_then(Value::as_str).unwrap_or_default();
        let index = tapped.get("index").and_then(Value::as_u64);
        if let Some(id) = Self::point_at(tx, source, index) {
            self.state.last_url = Some(activity_link(&id, &self.ctx.activity_url_template)?);
            self.state.measurement = Some(id);
        }
        self.render(tx)?;
        tx.set(&ev.model_id, "tapped", tapped);
        Ok(())
    }

    fn on_verdict(&mut self, tx: &mut DocTx<'_>, ev: &UiEvent) -> Result<(), DashboardError> {
        let raw = payload_value(&ev.payload).unwrap_or_default();
        let verdict: Verdict = raw
            .parse()
            .map_err(|_| DashboardError::InvalidPayload(format!("{raw:?} is not a verdict")))?;
        let field = |k: &str| ev.payload.get(k).and_then(Value::as_str);
        let id = field("measurement_id")
            .map(str::to_string)
            .or_else(|| self.state.measurement.clone())
            .ok_or_else(|| DashboardError::InvalidPayload("no measurement selected".into()))?;
        let annotation = Annotation {
            verdict,
            author: field("author").unwrap_or(&self.ctx.author).to_string(),
            note: field("note").unwrap_or_default().to_string(),
            created_at: (self.ctx.clock)(),
        };
        self.ctx.repo.write().annotate(&id, annotation)?;
        self.state.measurement = Some(id);
        self.render(tx)
    }
}

impl Dashboard for CleansingDashboard {
    type Filters = CleansingFilters;

    fn create(&mut self) -> Result<Document, DashboardError> {
        self.state = State::default();
        let sources = self.get_data(&CleansingFilters::default())?;
        let source_node = |id: &str| {
            let s = &sources[id];
            ModelNode::new(ModelKind::ColumnDataSource)
                .with("data", columns_value(&s.data))
                .with("selected_indices", json!([]))
                .with("warnings", json!(s.warnings))
        };

        let mut doc = Document::new();
        doc.add(
            TYPE_SELECT,
            ModelNode::new(ModelKind::SelectBox)
                .with("title", json!("Circuit type"))
                .with("options", json!(self.get_parameter("circuit_type")?))
                .with("value", json!(ALL_OPTION)),
        )?;
        doc.add(CIRCUITS_SOURCE, source_node(CIRCUITS_SOURCE))?;
        doc.add(
            CIRCUITS_TABLE,
            ModelNode::new(ModelKind::DataTable)
                .with("title", json!("Circuits"))
                .with("source", json!(CIRCUITS_SOURCE))
                .with("columns", json!(TABLE_COLUMNS)),
        )?;
        doc.add(M1_SOURCE, source_node(M1_SOURCE))?;
        doc.add(M2_SOURCE, source_node(M2_SOURCE))?;
        doc.add(
            CAPACITANCE_PLOT,
            ModelNode::new(ModelKind::ScatterPlot)
                .with("title", json!("Capacitance"))
                .with("sources", json!([M1_SOURCE, M2_SOURCE]))
                .with("legend", json!(["M1", "M2"]))
                .with("x", json!("performed_at"))
                .with("y", json!("capacitance_F"))
                .with("tapped", Value::Null),
        )?;
        doc.add(
            TAP_TOOL,
            ModelNode::new(ModelKind::TapTool)
                .with("target", json!(CAPACITANCE_PLOT))
                .with("url_template", json!(self.ctx.activity_url_template))
                .with("last_url", Value::Null),
        )?;
        doc.add(
            DETAIL_PANEL,
            ModelNode::new(ModelKind::DetailPanel)
                .with("title", json!("Details"))
                .with("fields", json!({})),
        )?;
        doc.add(
            VERDICT_SELECT,
            ModelNode::new(ModelKind::SelectBox)
                .with("title", json!("Verdict"))
                .with("options", json!(Verdict::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>()))
                .with("value", json!("")),
        )?;
        let m = |id: &str| LayoutNode::Model(id.to_string());
        doc.set_layout(vec![LayoutNode::Column(vec![
            m(TYPE_SELECT),
            LayoutNode::Row(vec![
                m(CIRCUITS_TABLE),
                LayoutNode::Column(vec![m(CAPACITANCE_PLOT), m(DETAIL_PANEL), m(VERDICT_SELECT)]),
            ]),
        ])]);
        Ok(doc)
    }

    fn setup_events(&self, registry: &mut CallbackRegistry<Self>) -> Result<(), DashboardError> {
        registry.register(TYPE_SELECT, EventKind::ValueChange, |d: &mut Self, tx, ev| d.on_type(tx, ev))?;
        registry.register(CIRCUITS_TABLE, EventKind::Select, |d: &mut Self, tx, ev| {
            d.on_table_select(tx, ev)
        })?;
        for source in [M1_SOURCE, M2_SOURCE] {
            registry.register(source, EventKind::Select, |d: &mut Self, tx, ev| d.on_point_select(tx, ev))?;
        }
        registry.register(CAPACITANCE_PLOT, EventKind::Tap, |d: &mut Self, tx, ev| d.on_tap(tx, ev))?;
        registry.register(VERDICT_SELECT, EventKind::ValueChange, |d: &mut Self, tx, ev| {
            d.on_verdict(tx, ev)
        })?;
        Ok(())
    }

    fn get_data(&self, filters: &CleansingFilters) -> Result<BTreeMap<String, SourceData>, DashboardError> {
        let repo = self.ctx.repo.read();
        let [m1, m2] = self.plot_data(&repo, filters.circuit_id.as_deref())?;
        Ok(BTreeMap::from([
            (
                CIRCUITS_SOURCE.to_string(),
                self.table_data(&repo, filters.circuit_type.as_deref()),
            ),
            (M1_SOURCE.to_string(), m1),
            (M2_SOURCE.to_string(), m2),
        ]))
    }

    fn get_parameter(&self, name: &str) -> Result<Vec<String>, DashboardError> {
        let field = match name {
            "circuit_type" => DistinctField::CircuitType,
            "sector" => DistinctField::Sector,
            "campaign" => DistinctField::CampaignId,
            other => return Err(DashboardError::UnknownParameter(other.to_string())),
        };
        let mut out = vec![ALL_OPTION.to_string()];
        out.extend(self.ctx.repo.read().distinct_values(field));
        Ok(out)
    }
}

pub type CleansingRuntime = DashboardRuntime<CleansingDashboard>;

/// Creates and wires a cleansing dashboard over the context's repository.
pub fn build_cleansing_dashboard(ctx: CleansingContext) -> Result<CleansingRuntime, DashboardError> {
    DashboardRuntime::new(CleansingDashboard::new(ctx))
}

/// Records a verdict on a measurement through the dashboard's verdict
/// widget, so the refreshed table and plot arrive in the returned patch.
pub fn apply_verdict(
    runtime: &mut CleansingRuntime,
    measurement_id: &str,
    verdict: Verdict,
    author: &str,
    note: &str,
) -> Result<Patch, DashboardError> {
    let payload = json!({
        "verdict": verdict.as_str(),
        "measurement_id": measurement_id,
        "author": author,
        "note": note,
    });
    runtime.input_change(&UiEvent::new(VERDICT_SELECT, EventKind::ValueChange, payload))
}

/// Adds the cleansing dashboard under [`DASHBOARD_NAME`].
pub fn register_cleansing(registry: &mut DashboardRegistry, ctx: CleansingContext) {
    registry.register(DASHBOARD_NAME, move || {
        Ok(Box::new(build_cleansing_dashboard(ctx.clone())?) as Box<_>)
    });
}
