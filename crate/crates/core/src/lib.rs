//! Data layer and analytics for electrical quality-assurance test data.
//!
//! * [`store`]: domain model, CSV ingestion and the in-memory repository.
//! * [`synth`]: seeded generator of synthetic datasets.
//! * [`preprocess`]: per-signal statistics and capacitance.
//! * [`miners`]: standardization, k-means and DBSCAN.

pub mod miners;
pub mod preprocess;
pub mod rng;
pub mod store;
pub mod synth;

pub use store::{Repository, StoreError};
