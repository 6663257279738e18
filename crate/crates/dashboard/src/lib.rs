//! Server-side document model and the dashboard lifecycle.
//!
//! - [`document`]: the widget tree, its schema and patches
//! - [`event`]: client interactions
//! - [`runtime`]: lifecycle trait, callback dispatch, patch coalescing
//! - [`cleansing`]: the capacitance cleansing application

pub mod cleansing;
pub mod document;
pub mod event;
pub mod runtime;

pub use document::{apply_patch, ColumnMap, DocError, Document, LayoutNode, ModelKind, ModelNode, Patch, PatchOp};
pub use event::{EventKind, UiEvent};
pub use runtime::{
    CallbackRegistry, Dashboard, DashboardError, DashboardRegistry, DashboardRuntime, DocTx,
    LiveDashboard, SourceData, ALL_OPTION,
};
