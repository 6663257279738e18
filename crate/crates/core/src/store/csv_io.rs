//! Reading and writing the four-file CSV bundle.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use csv::StringRecord;

use super::{Campaign, Circuit, Measurement, Repository, Sample, StoreError};

pub const CIRCUITS_FILE: &str = "circuits.csv";
pub const CAMPAIGNS_FILE: &str = "campaigns.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const SAMPLES_FILE: &str = "samples.csv";

const CIRCUITS_HEADER: &[&str] = &[
    "circuit_id",
    "circuit_type",
    "sector",
    "magnet_position",
    "manufacturer",
];
const CAMPAIGNS_HEADER: &[&str] = &["campaign_id", "label", "machine_state", "started_at"];
const MEASUREMENTS_HEADER: &[&str] = &[
    "measurement_id",
    "circuit_id",
    "campaign_id",
    "test_type",
    "variant",
    "operator",
    "performed_at",
    "tunnel_temperature_C",
    "tunnel_humidity_pct",
];
const SAMPLES_HEADER: &[&str] = &["measurement_id", "t_s", "voltage_V", "current_A"];

struct Table {
    name: &'static str,
    rows: Vec<(u64, StringRecord)>,
}

impl Table {
    fn read(dir: &Path, name: &'static str, header: &[&str]) -> Result<Self, StoreError> {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(StoreError::MissingFile(path));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(&path)
            .map_err(|e| malformed(name, 1, e))?;
        let found = reader.headers().map_err(|e| malformed(name, 1, e))?;
        if found.iter().map(str::trim).ne(header.iter().copied()) {
            return Err(malformed(
                name,
                1,
                format!("expected header {:?}, found {:?}", header.join(","), found),
            ));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                malformed(name, line, e)
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != header.len() {
                return Err(malformed(
                    name,
                    line,
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            rows.push((line, record));
        }
        Ok(Table { name, rows })
    }

    fn err(&self, line: u64, reason: impl ToString) -> StoreError {
        malformed(self.name, line, reason)
    }
}

fn malformed(file: &str, line: u64, reason: impl ToString) -> StoreError {
    StoreError::MalformedRow {
        file: file.to_string(),
        line,
        reason: reason.to_string(),
    }
}

fn parse<T: FromStr>(table: &Table, line: u64, col: &str, raw: &str) -> Result<T, StoreError>
where
    T::Err: std::fmt::Display,
{
    raw.trim()
        .parse()
        .map_err(|e| table.err(line, format!("column {col}: {e}")))
}

fn parse_opt_f64(table: &Table, line: u64, col: &str, raw: &str) -> Result<Option<f64>, StoreError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = parse(table, line, col, raw)?;
    if !v.is_finite() {
        return Err(table.err(line, format!("column {col}: non-finite value")));
    }
    Ok(Some(v))
}

fn parse_time(table: &Table, line: u64, col: &str, raw: &str) -> Result<DateTime<Utc>, StoreError> {
    DateTime::parse_from_rfc3339(raw.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| table.err(line, format!("column {col}: {e}")))
}

/// Loads a CSV bundle into a fresh repository, validating references.
///
/// Rows keep file order, so identical input bytes give identical iteration
/// order.
pub fn ingest_csv(dir: &Path) -> Result<Repository, StoreError> {
    let circuits = Table::read(dir, CIRCUITS_FILE, CIRCUITS_HEADER)?;
    let campaigns = Table::read(dir, CAMPAIGNS_FILE, CAMPAIGNS_HEADER)?;
    let measurements = Table::read(dir, MEASUREMENTS_FILE, MEASUREMENTS_HEADER)?;
    let samples = Table::read(dir, SAMPLES_FILE, SAMPLES_HEADER)?;

    let mut repo = Repository::new();
    for (line, r) in &circuits.rows {
        let circuit = Circuit {
            circuit_id: r[0].trim().to_string(),
            circuit_type: r[1].trim().to_string(),
            sector: parse(&circuits, *line, "sector", &r[2])?,
            magnet_position: r[3].trim().to_string(),
            manufacturer: r[4].trim().to_string(),
        };
        if circuit.circuit_id.is_empty() {
            return Err(circuits.err(*line, "empty circuit_id"));
        }
        repo.insert_circuit(circuit)?;
    }
    for (line, r) in &campaigns.rows {
        let campaign = Campaign {
            campaign_id: r[0].trim().to_string(),
            label: r[1].trim().to_string(),
            machine_state: parse(&campaigns, *line, "machine_state", &r[2])?,
            started_at: parse_time(&campaigns, *line, "started_at", &r[3])?,
        };
        if campaign.campaign_id.is_empty() {
            return Err(campaigns.err(*line, "empty campaign_id"));
        }
        repo.insert_campaign(campaign)?;
    }

    // Samples are grouped first so each measurement is inserted complete.
    let mut grouped: HashMap<String, Vec<(u64, Sample)>> = HashMap::new();
    for (line, r) in &samples.rows {
        let t_s: f64 = parse(&samples, *line, "t_s", &r[1])?;
        if !t_s.is_finite() || t_s < 0.0 {
            return Err(samples.err(*line, "t_s must be finite and non-negative"));
        }
        let sample = Sample::new(
            t_s,
            parse_opt_f64(&samples, *line, "voltage_V", &r[2])?,
            parse_opt_f64(&samples, *line, "current_A", &r[3])?,
        );
        let group = grouped.entry(r[0].trim().to_string()).or_default();
        if let Some((_, prev)) = group.last() {
            if t_s <= prev.t_s {
                return Err(samples.err(*line, "sample times must be strictly increasing"));
            }
        }
        group.push((*line, sample));
    }

    for (line, r) in &measurements.rows {
        let id = r[0].trim().to_string();
        if id.is_empty() {
            return Err(measurements.err(*line, "empty measurement_id"));
        }
        let samples = grouped
            .remove(&id)
            .unwrap_or_default()
            .into_iter()
            .map(|(_, s)| s)
            .collect();
        let m = Measurement {
            measurement_id: id,
            circuit_id: r[1].trim().to_string(),
            campaign_id: r[2].trim().to_string(),
            test_type: parse(&measurements, *line, "test_type", &r[3])?,
            variant: parse(&measurements, *line, "variant", &r[4])?,
            operator: r[5].trim().to_string(),
            performed_at: parse_time(&measurements, *line, "performed_at", &r[6])?,
            tunnel_temperature_c: parse_opt_f64(&measurements, *line, "tunnel_temperature_C", &r[7])?,
            tunnel_humidity_pct: parse_opt_f64(&measurements, *line, "tunnel_humidity_pct", &r[8])?,
            samples,
            annotation: None,
        };
        repo.insert_measurement(m)?;
    }
    if let Some(orphan) = grouped.keys().min() {
        return Err(StoreError::DanglingReference(orphan.clone()));
    }
    Ok(repo)
}

pub fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the repository as a CSV bundle. Returns row counts per file.
pub(crate) fn write_bundle(repo: &Repository, dir: &Path) -> Result<[usize; 4], StoreError> {
    std::fs::create_dir_all(dir)?;
    let open = |name: &str, header: &[&str]| -> Result<csv::Writer<File>, StoreError> {
        let mut w = csv::Writer::from_path(dir.join(name)).map_err(csv_io_err)?;
        w.write_record(header).map_err(csv_io_err)?;
        Ok(w)
    };

    let mut w = open(CIRCUITS_FILE, CIRCUITS_HEADER)?;
    for c in repo.circuits() {
        w.write_record([
            c.circuit_id.as_str(),
            &c.circuit_type,
            c.sector.as_str(),
            &c.magnet_position,
            &c.manufacturer,
        ])
        .map_err(csv_io_err)?;
    }
    w.flush()?;

    let mut w = open(CAMPAIGNS_FILE, CAMPAIGNS_HEADER)?;
    for c in repo.campaigns() {
        w.write_record([
            c.campaign_id.as_str(),
            &c.label,
            c.machine_state.as_str(),
            &format_time(&c.started_at),
        ])
        .map_err(csv_io_err)?;
    }
    w.flush()?;

    let mut w = open(MEASUREMENTS_FILE, MEASUREMENTS_HEADER)?;
    let mut n_samples = 0;
    for m in repo.measurements() {
        w.write_record([
            m.measurement_id.as_str(),
            &m.circuit_id,
            &m.campaign_id,
            m.test_type.as_str(),
            m.variant.as_str(),
            &m.operator,
            &format_time(&m.performed_at),
            &opt(m.tunnel_temperature_c),
            &opt(m.tunnel_humidity_pct),
        ])
        .map_err(csv_io_err)?;
        n_samples += m.samples.len();
    }
    w.flush()?;

    let mut w = open(SAMPLES_FILE, SAMPLES_HEADER)?;
    for m in repo.measurements() {
        for s in &m.samples {
            w.write_record([
                m.measurement_id.as_str(),
                &s.t_s.to_string(),
                &opt(s.voltage_v),
                &opt(s.current_a),
            ])
            .map_err(csv_io_err)?;
        }
    }
    w.flush()?;
    let mut inner = w.into_inner().map_err(|e| StoreError::Io(e.into_error()))?;
    inner.flush()?;

    Ok([
        repo.circuits().len(),
        repo.campaigns().len(),
        repo.measurements().len(),
        n_samples,
    ])
}

fn csv_io_err(e: csv::Error) -> StoreError {
    StoreError::Io(std::io::Error::other(e))
}
