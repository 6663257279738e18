use std::collections::HashMap;

use chrono::{DateTime, Utc};
use elqa_core::preprocess::{basic_stats, capacitance, ols_fit, PreprocessError};
use elqa_core::store::{Measurement, MeasurementFilter, Repository, TestType, Variant, Verdict};
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::Serialize;

use crate::document::MEASUREMENT_PLACEHOLDER;
use crate::runtime::DashboardError;

const SECONDS_PER_DAY: f64 = 86_400.0;

// RFC 3986 unreserved characters stay as they are.
const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircuitRow {
    pub circuit_id: String,
    pub circuit_type: String,
    pub sector: String,
    pub n_measurements: usize,
    pub mean_capacitance_f: Option<f64>,
    pub std_capacitance_f: Option<f64>,
    pub latest_capacitance_f: Option<f64>,
    pub trend_slope_f_per_day: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub performed_at: DateTime<Utc>,
    pub capacitance_f: f64,
    pub measurement_id: String,
    pub suspect: bool,
}

/// Capacitance over time for one circuit, one series per variant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CapacitanceSeries {
    pub m1: Vec<SeriesPoint>,
    pub m2: Vec<SeriesPoint>,
    /// Measurements left out because capacitance could not be computed.
    pub failures: Vec<(String, PreprocessError)>,
}

impl CapacitanceSeries {
    pub fn series(&self, variant: Variant) -> &[SeriesPoint] {
        match variant {
            Variant::M1 => &self.m1,
            Variant::M2 => &self.m2,
        }
    }
}

/// Capacitance per measurement id, computed once. Samples never change after
/// ingestion, so entries stay valid across annotations.
#[derive(Debug, Clone, Default)]
pub struct CapacitanceCache {
    values: HashMap<String, Result<f64, PreprocessError>>,
}

impl CapacitanceCache {
    pub fn build(repo: &Repository) -> Self {
        let values = repo
            .measurements()
            .iter()
            .filter(|m| m.test_type == TestType::Hvq)
            .map(|m| (m.measurement_id.clone(), capacitance(m)))
            .collect();
        Self { values }
    }

    pub fn get(&self, m: &Measurement) -> Result<f64, PreprocessError> {
        match self.values.get(&m.measurement_id) {
            Some(r) => r.clone(),
            None => capacitance(m),
        }
    }
}

/// HVQ measurements of a circuit that count for cleansing, oldest first.
fn counted<'a>(repo: &'a Repository, circuit_id: &str) -> Vec<&'a Measurement> {
    let filter = MeasurementFilter::default()
        .circuit_id(circuit_id)
        .test_type(TestType::Hvq);
    repo.query_measurements(&filter)
        .into_iter()
        .filter(|m| m.verdict() != Some(Verdict::TestOnly))
        .collect()
}

fn sample_std(values: &[f64], mean: f64) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

fn row_for<F>(repo: &Repository, circuit_id: &str, cap: &F) -> Option<CircuitRow>
where
    F: Fn(&Measurement) -> Result<f64, PreprocessError>,
{
    let circuit = repo.circuit(circuit_id)?;
    let ms = counted(repo, circuit_id);
    let ok: Vec<(DateTime<Utc>, f64)> = ms
        .iter()
        .filter_map(|m| cap(m).ok().map(|c| (m.performed_at, c)))
        .collect();
    let values: Vec<f64> = ok.iter().map(|p| p.1).collect();
    let mean = basic_stats(&values).ok().map(|s| s.mean);
    let trend = if ok.len() >= 3 {
        let t0 = ok[0].0;
        let days: Vec<f64> = ok
            .iter()
            .map(|p| (p.0 - t0).num_milliseconds() as f64 / 1000.0 / SECONDS_PER_DAY)
            .collect();
        ols_fit(&days, &values).ok().map(|f| f.slope)
    } else {
        None
    };
    Some(CircuitRow {
        circuit_id: circuit.circuit_id.clone(),
        circuit_type: circuit.circuit_type.clone(),
        sector: circuit.sector.to_string(),
        n_measurements: ms.len(),
        mean_capacitance_f: mean,
        std_capacitance_f: mean.and_then(|m| sample_std(&values, m)),
        latest_capacitance_f: values.last().copied(),
        trend_slope_f_per_day: trend,
    })
}

/// One row per circuit of the given type (all circuits for `None`), sorted by
/// circuit id.
pub fn circuit_stats(repo: &Repository, circuit_type: Option<&str>) -> Vec<CircuitRow> {
    circuit_stats_with(repo, circuit_type, &capacitance)
}

pub fn circuit_stats_with<F>(repo: &Repository, circuit_type: Option<&str>, cap: &F) -> Vec<CircuitRow>
where
    F: Fn(&Measurement) -> Result<f64, PreprocessError>,
{
    let mut ids: Vec<&str> = repo
        .circuits()
        .iter()
        .filter(|c| circuit_type.is_none_or(|t| c.circuit_type == t))
        .map(|c| c.circuit_id.as_str())
        .collect();
    ids.sort_unstable();
    ids.into_iter().filter_map(|id| row_for(repo, id, cap)).collect()
}

/// Capacitance failures among the counted measurements of these circuits.
pub fn stats_failures<F>(repo: &Repository, rows: &[CircuitRow], cap: &F) -> Vec<(String, PreprocessError)>
where
    F: Fn(&Measurement) -> Result<f64, PreprocessError>,
{
    rows.iter()
        .flat_map(|r| counted(repo, &r.circuit_id))
        .filter_map(|m| cap(m).err().map(|e| (m.measurement_id.clone(), e)))
        .collect()
}

pub fn capacitance_series(repo: &Repository, circuit_id: &str) -> Result<CapacitanceSeries, DashboardError> {
    capacitance_series_with(repo, circuit_id, &capacitance)
}

pub fn capacitance_series_with<F>(
    repo: &Repository,
    circuit_id: &str,
    cap: &F,
) -> Result<CapacitanceSeries, DashboardError>
where
    F: Fn(&Measurement) -> Result<f64, PreprocessError>,
{
    if repo.circuit(circuit_id).is_none() {
        return Err(DashboardError::UnknownCircuit(circuit_id.to_string()));
    }
    let mut out = CapacitanceSeries::default();
    for m in counted(repo, circuit_id) {
        match cap(m) {
            Ok(c) => {
                let point = SeriesPoint {
                    performed_at: m.performed_at,
                    capacitance_f: c,
                    measurement_id: m.measurement_id.clone(),
                    suspect: m.verdict() == Some(Verdict::Suspect),
                };
                match m.variant {
                    Variant::M1 => out.m1.push(point),
                    Variant::M2 => out.m2.push(point),
                }
            }
            Err(e) => out.failures.push((m.measurement_id.clone(), e)),
        }
    }
    Ok(out)
}

/// Substitutes the percent-encoded id into every placeholder of `template`.
pub fn activity_link(measurement_id: &str, template: &str) -> Result<String, DashboardError> {
    if !template.contains(MEASUREMENT_PLACEHOLDER) {
        return Err(DashboardError::BadTemplate(template.to_string()));
    }
    let encoded = utf8_percent_encode(measurement_id, COMPONENT).to_string();
    Ok(template.replace(MEASUREMENT_PLACEHOLDER, &encoded))
}
