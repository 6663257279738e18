//! In-memory repository of circuits, campaigns and measurements.
//!
//! Data is loaded from a directory of CSV files (see [`ingest_csv`]) and held
//! in memory. The only mutation after loading is [`Repository::annotate`],
//! which can additionally append to a JSON-lines journal so verdicts survive a
//! restart.

mod csv_io;
mod model;

use std::collections::{BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use csv_io::write_bundle;
pub use csv_io::{format_time as format_timestamp, ingest_csv, CAMPAIGNS_FILE, CIRCUITS_FILE, MEASUREMENTS_FILE, SAMPLES_FILE};
pub use model::{
    Annotation, Campaign, Circuit, MachineState, Measurement, Sample, Sector, TestType, Variant,
    Verdict,
};

/// File name of the annotations journal inside a data directory.
pub const JOURNAL_FILE: &str = "annotations.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {reason}")]
    MalformedRow {
        file: String,
        line: u64,
        reason: String,
    },
    #[error("dangling reference to {0}")]
    DanglingReference(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("invalid {what} value {value:?}")]
    InvalidValue { what: &'static str, value: String },
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error("unknown measurement {0:?}")]
    UnknownMeasurement(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StoreError {
    /// Stable name of the error variant, used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::MissingFile(_) => "MissingFile",
            StoreError::MalformedRow { .. } => "MalformedRow",
            StoreError::DanglingReference(_) => "DanglingReference",
            StoreError::DuplicateId(_) => "DuplicateId",
            StoreError::InvalidValue { .. } => "InvalidValue",
            StoreError::UnknownField(_) => "UnknownField",
            StoreError::UnknownMeasurement(_) => "UnknownMeasurement",
            StoreError::Io(_) => "Io",
        }
    }
}

/// Conjunction of optional predicates over measurements.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MeasurementFilter {
    pub circuit_type: Option<String>,
    pub circuit_id: Option<String>,
    pub test_type: Option<TestType>,
    pub campaign_id: Option<String>,
}

impl MeasurementFilter {
    pub fn circuit_type(mut self, t: impl Into<String>) -> Self {
        self.circuit_type = Some(t.into());
        self
    }

    pub fn circuit_id(mut self, id: impl Into<String>) -> Self {
        self.circuit_id = Some(id.into());
        self
    }

    pub fn test_type(mut self, t: TestType) -> Self {
        self.test_type = Some(t);
        self
    }

    pub fn campaign_id(mut self, id: impl Into<String>) -> Self {
        self.campaign_id = Some(id.into());
        self
    }
}

/// Fields supported by [`Repository::distinct_values`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistinctField {
    CircuitType,
    Sector,
    TestType,
    CampaignId,
}

impl FromStr for DistinctField {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "circuit_type" => Ok(DistinctField::CircuitType),
            "sector" => Ok(DistinctField::Sector),
            "test_type" => Ok(DistinctField::TestType),
            "campaign_id" => Ok(DistinctField::CampaignId),
            other => Err(StoreError::UnknownField(other.to_string())),
        }
    }
}

/// One line of the annotations journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub measurement_id: String,
    pub verdict: Verdict,
    pub author: String,
    pub note: String,
    pub created_at: DateTime<Utc>,
}

impl JournalEntry {
    pub fn new(measurement_id: &str, annotation: &Annotation) -> Self {
        Self {
            measurement_id: measurement_id.to_string(),
            verdict: annotation.verdict,
            author: annotation.author.clone(),
            note: annotation.note.clone(),
            created_at: annotation.created_at,
        }
    }

    pub fn annotation(&self) -> Annotation {
        Annotation {
            verdict: self.verdict,
            author: self.author.clone(),
            note: self.note.clone(),
            created_at: self.created_at,
        }
    }
}

/// The in-memory store. Rows keep their insertion order; queries sort.
///
/// Readers share it freely (`&Repository`); `annotate` needs `&mut self`, so
/// the single-writer rule is enforced by the borrow checker or by whatever
/// lock the owner wraps it in.
#[derive(Debug, Clone, Default)]
pub struct Repository {
    circuits: Vec<Circuit>,
    circuit_index: HashMap<String, usize>,
    campaigns: Vec<Campaign>,
    campaign_index: HashMap<String, usize>,
    measurements: Vec<Measurement>,
    measurement_index: HashMap<String, usize>,
    journal: Option<PathBuf>,
}

impl Repository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_circuit(&mut self, circuit: Circuit) -> Result<(), StoreError> {
        if self.circuit_index.contains_key(&circuit.circuit_id) {
            return Err(StoreError::DuplicateId(circuit.circuit_id));
        }
        self.circuit_index
            .insert(circuit.circuit_id.clone(), self.circuits.len());
        self.circuits.push(circuit);
        Ok(())
    }

    pub fn insert_campaign(&mut self, campaign: Campaign) -> Result<(), StoreError> {
        if self.campaign_index.contains_key(&campaign.campaign_id) {
            return Err(StoreError::DuplicateId(campaign.campaign_id));
        }
        self.campaign_index
            .insert(campaign.campaign_id.clone(), self.campaigns.len());
        self.campaigns.push(campaign);
        Ok(())
    }

    /// Inserts a measurement after checking its references and sample times.
    pub fn insert_measurement(&mut self, measurement: Measurement) -> Result<(), StoreError> {
        if self.measurement_index.contains_key(&measurement.measurement_id) {
            return Err(StoreError::DuplicateId(measurement.measurement_id));
        }
        if !self.circuit_index.contains_key(&measurement.circuit_id) {
            return Err(StoreError::DanglingReference(measurement.circuit_id));
        }
        if !self.campaign_index.contains_key(&measurement.campaign_id) {
            return Err(StoreError::DanglingReference(measurement.campaign_id));
        }
        if let Err(reason) = measurement.check_samples() {
            return Err(StoreError::InvalidValue {
                what: "samples",
                value: format!("{}: {reason}", measurement.measurement_id),
            });
        }
        self.measurement_index
            .insert(measurement.measurement_id.clone(), self.measurements.len());
        self.measurements.push(measurement);
        Ok(())
    }

    pub fn circuits(&self) -> &[Circuit] {
        &self.circuits
    }

    pub fn campaigns(&self) -> &[Campaign] {
        &self.campaigns
    }

    /// All measurements in insertion order.
    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn circuit(&self, id: &str) -> Option<&Circuit> {
        self.circuit_index.get(id).map(|&i| &self.circuits[i])
    }

    pub fn campaign(&self, id: &str) -> Option<&Campaign> {
        self.campaign_index.get(id).map(|&i| &self.campaigns[i])
    }

    pub fn measurement(&self, id: &str) -> Option<&Measurement> {
        self.measurement_index.get(id).map(|&i| &self.measurements[i])
    }

    pub fn is_empty(&self) -> bool {
        self.circuits.is_empty() && self.campaigns.is_empty() && self.measurements.is_empty()
    }

    /// Measurements matching every supplied predicate, ordered by
    /// `performed_at` then `measurement_id`.
    pub fn query_measurements(&self, filter: &MeasurementFilter) -> Vec<&Measurement> {
        let mut out: Vec<&Measurement> = self
            .measurements
            .iter()
            .filter(|m| self.matches(m, filter))
            .collect();
        out.sort_by(|a, b| {
            a.performed_at
                .cmp(&b.performed_at)
                .then_with(|| a.measurement_id.cmp(&b.measurement_id))
        });
        out
    }

    fn matches(&self, m: &Measurement, filter: &MeasurementFilter) -> bool {
        if let Some(id) = &filter.circuit_id {
            if &m.circuit_id != id {
                return false;
            }
        }
        if let Some(t) = filter.test_type {
            if m.test_type != t {
                return false;
            }
        }
        if let Some(c) = &filter.campaign_id {
            if &m.campaign_id != c {
                return false;
            }
        }
        if let Some(ct) = &filter.circuit_type {
            // References are validated on insert.
            match self.circuit(&m.circuit_id) {
                Some(c) if &c.circuit_type == ct => {}
                _ => return false,
            }
        }
        true
    }

    /// Sorted, de-duplicated values of `field` over the rows that carry it.
    pub fn distinct_values(&self, field: DistinctField) -> Vec<String> {
        let set: BTreeSet<String> = match field {
            DistinctField::CircuitType => self
                .circuits
                .iter()
                .map(|c| c.circuit_type.clone())
                .collect(),
            DistinctField::Sector => self
                .circuits
                .iter()
                .map(|c| c.sector.to_string())
                .collect(),
            DistinctField::TestType => self
                .measurements
                .iter()
                .map(|m| m.test_type.to_string())
                .collect(),
            DistinctField::CampaignId => self
                .campaigns
                .iter()
                .map(|c| c.campaign_id.clone())
                .collect(),
        };
        set.into_iter().collect()
    }

    /// Same as [`Repository::distinct_values`] with the field given by name.
    pub fn distinct_values_by_name(&self, field: &str) -> Result<Vec<String>, StoreError> {
        Ok(self.distinct_values(field.parse()?))
    }

    /// Appends every subsequent annotation to `path` as one JSON object per line.
    pub fn set_journal(&mut self, path: impl Into<PathBuf>) {
        self.journal = Some(path.into());
    }

    pub fn journal(&self) -> Option<&Path> {
        self.journal.as_deref()
    }

    /// Replaces the annotation of a measurement. Last write wins.
    pub fn annotate(
        &mut self,
        measurement_id: &str,
        annotation: Annotation,
    ) -> Result<&Measurement, StoreError> {
        let idx = *self
            .measurement_index
            .get(measurement_id)
            .ok_or_else(|| StoreError::UnknownMeasurement(measurement_id.to_string()))?;
        if let Some(path) = &self.journal {
            let mut line = serde_json::to_string(&JournalEntry::new(measurement_id, &annotation))
                .map_err(std::io::Error::other)?;
            line.push('\n');
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            file.write_all(line.as_bytes())?;
        }
        self.measurements[idx].annotation = Some(annotation);
        Ok(&self.measurements[idx])
    }

    /// Applies every entry of a journal file in order, without re-appending.
    /// Returns the number of entries applied.
    pub fn replay_journal(&mut self, path: &Path) -> Result<usize, StoreError> {
        let file = std::fs::File::open(path)?;
        let journal = self.journal.take();
        let mut applied = 0;
        let result = (|| {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalEntry =
                    serde_json::from_str(&line).map_err(|e| StoreError::MalformedRow {
                        file: path.display().to_string(),
                        line: i as u64 + 1,
                        reason: e.to_string(),
                    })?;
                self.annotate(&entry.measurement_id, entry.annotation())?;
                applied += 1;
            }
            Ok(applied)
        })();
        self.journal = journal;
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(h: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2013, 3, 1, h, 0, 0).unwrap()
    }

    fn repo() -> Repository {
        let mut r = Repository::new();
        for (id, ty) in [("A", "RB"), ("B", "RQ"), ("C", "RB")] {
            r.insert_circuit(Circuit {
                circuit_id: id.into(),
                circuit_type: ty.into(),
                sector: Sector::S12,
                magnet_position: "A1".into(),
                manufacturer: "X".into(),
            })
            .unwrap();
        }
        r.insert_campaign(Campaign {
            campaign_id: "LS1".into(),
            label: "LS1".into(),
            machine_state: MachineState::Cold,
            started_at: ts(0),
        })
        .unwrap();
        for (id, c, h) in [("m3", "A", 2), ("m1", "B", 1), ("m2", "C", 2)] {
            r.insert_measurement(Measurement {
                measurement_id: id.into(),
                circuit_id: c.into(),
                campaign_id: "LS1".into(),
                test_type: TestType::Hvq,
                variant: Variant::M1,
                operator: "op".into(),
                performed_at: ts(h),
                tunnel_temperature_c: None,
                tunnel_humidity_pct: None,
                samples: vec![Sample::new(0.0, Some(1.0), None)],
                annotation: None,
            })
            .unwrap();
        }
        r
    }

    fn note(v: Verdict) -> Annotation {
        Annotation {
            verdict: v,
            author: "me".into(),
            note: String::new(),
            created_at: ts(5),
        }
    }

    #[test]
    fn empty_filter_returns_everything_in_order() {
        let r = repo();
        let ids: Vec<_> = r
            .query_measurements(&MeasurementFilter::default())
            .iter()
            .map(|m| m.measurement_id.as_str())
            .collect();
        assert_eq!(ids, ["m1", "m2", "m3"]);
    }

    #[test]
    fn circuit_type_filter() {
        let r = repo();
        let got = r.query_measurements(&MeasurementFilter::default().circuit_type("RB"));
        assert_eq!(got.len(), 2);
        assert!(got.iter().all(|m| m.circuit_id != "B"));
    }

    #[test]
    fn distinct_circuit_types() {
        let r = repo();
        assert_eq!(r.distinct_values(DistinctField::CircuitType), ["RB", "RQ"]);
        assert!(Repository::new()
            .distinct_values(DistinctField::Sector)
            .is_empty());
        assert!(matches!(
            r.distinct_values_by_name("operator"),
            Err(StoreError::UnknownField(_))
        ));
    }

    #[test]
    fn annotate_last_write_wins() {
        let mut r = repo();
        r.annotate("m1", note(Verdict::Suspect)).unwrap();
        r.annotate("m1", note(Verdict::TestOnly)).unwrap();
        assert_eq!(r.measurement("m1").unwrap().verdict(), Some(Verdict::TestOnly));
        assert!(matches!(
            r.annotate("nope", note(Verdict::Assured)),
            Err(StoreError::UnknownMeasurement(_))
        ));
    }

    #[test]
    fn dangling_and_duplicate_rejected() {
        let mut r = repo();
        let mut m = r.measurement("m1").unwrap().clone();
        m.measurement_id = "m9".into();
        m.circuit_id = "X9".into();
        assert!(matches!(
            r.insert_measurement(m),
            Err(StoreError::DanglingReference(id)) if id == "X9"
        ));
        let dup = r.circuits()[0].clone();
        assert!(matches!(r.insert_circuit(dup), Err(StoreError::DuplicateId(_))));
    }

    #[test]
    fn non_increasing_times_rejected() {
        let mut r = repo();
        let mut m = r.measurement("m1").unwrap().clone();
        m.measurement_id = "m9".into();
        m.samples = vec![Sample::new(1.0, None, None), Sample::new(1.0, None, None)];
        assert!(r.insert_measurement(m).is_err());
    }

    #[test]
    fn journal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(JOURNAL_FILE);
        let mut r = repo();
        r.set_journal(&path);
        r.annotate("m2", note(Verdict::Suspect)).unwrap();
        r.annotate("m2", note(Verdict::Assured)).unwrap();
        r.annotate("m3", note(Verdict::TestOnly)).unwrap();

        let mut fresh = repo();
        assert_eq!(fresh.replay_journal(&path).unwrap(), 3);
        for id in ["m1", "m2", "m3"] {
            assert_eq!(
                fresh.measurement(id).unwrap().annotation,
                r.measurement(id).unwrap().annotation
            );
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}
