//! Seeded generator of synthetic test-campaign datasets.
//!
//! Every circuit gets a drawn capacitance `C`. For each campaign it is measured
//! twice (variants M1 and M2, both HVQ). Each measurement is a linear voltage
//! ramp from 0 V to the campaign's test voltage, driven by a constant current
//! `I = C * dV/dt`, so integrating the current over the ramp and dividing by
//! the voltage rise gives back `C`.
//!
//! Anomalies are added on top: a fixed fraction of sample values is blanked
//! per channel, and a fixed fraction of measurements carries additive uniform
//! noise on the voltage channel.
//!
//! Arbitrary constants (not taken from any real installation): test voltage
//! 1900 V cold, 1000 V while cooling down or warming up, 500 V warm; sample
//! spacing 0.1 s; tunnel temperature 15-25 C and humidity 30-60 %, each absent
//! for roughly one measurement in ten.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamRng;
use crate::store::{
    Campaign, Circuit, MachineState, Measurement, Repository, Sample, Sector, StoreError,
    TestType, Variant, CAMPAIGNS_FILE, CIRCUITS_FILE, MEASUREMENTS_FILE, SAMPLES_FILE,
};

const SAMPLE_SPACING_S: f64 = 0.1;
const CIRCUIT_TYPES: &[&str] = &["RB", "RQ"];
const MANUFACTURERS: &[&str] = &["ALSTOM", "ANSALDO", "NOELL"];
const OPERATORS: &[&str] = &["op-a", "op-b", "op-c", "op-d"];

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<StoreError> for GenError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(io) => GenError::Io(io),
            other => GenError::InvalidConfig(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_circuits: usize,
    pub campaigns: Vec<(String, MachineState)>,
    pub samples_per_measurement: usize,
    pub nominal_capacitance_f: f64,
    pub capacitance_jitter_rel: f64,
    pub missing_rate: f64,
    pub tp4_noise_rate: f64,
    pub tp4_noise_amplitude_rel: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_circuits: 12,
            campaigns: vec![
                ("LS1 cold".to_string(), MachineState::Cold),
                ("LS1 warm".to_string(), MachineState::Warm),
                ("LS2 cold".to_string(), MachineState::Cold),
            ],
            samples_per_measurement: 200,
            nominal_capacitance_f: 100e-9,
            capacitance_jitter_rel: 0.05,
            missing_rate: 0.02,
            tp4_noise_rate: 0.05,
            tp4_noise_amplitude_rel: 0.05,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |msg: String| Err(GenError::InvalidConfig(msg));
        if self.n_circuits < 1 {
            return bad("n_circuits must be at least 1".into());
        }
        if self.campaigns.is_empty() {
            return bad("at least one campaign is required".into());
        }
        if self.samples_per_measurement < 1 {
            return bad("samples_per_measurement must be at least 1".into());
        }
        if !(self.nominal_capacitance_f > 0.0 && self.nominal_capacitance_f.is_finite()) {
            return bad("nominal_capacitance_f must be positive".into());
        }
        for (name, v) in [
            ("capacitance_jitter_rel", self.capacitance_jitter_rel),
            ("missing_rate", self.missing_rate),
            ("tp4_noise_rate", self.tp4_noise_rate),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.tp4_noise_amplitude_rel >= 0.0 && self.tp4_noise_amplitude_rel.is_finite()) {
            return bad("tp4_noise_amplitude_rel must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    /// Data rows written per file.
    pub counts: BTreeMap<String, usize>,
    /// Measurements that received additive noise, sorted.
    pub anomalous_ids: Vec<String>,
}

/// Result of an in-memory generation run.
#[derive(Debug, Clone)]
pub struct Generated {
    pub repository: Repository,
    /// Drawn capacitance per circuit id.
    pub capacitances: BTreeMap<String, f64>,
    pub anomalous_ids: Vec<String>,
}

fn test_voltage(state: MachineState) -> f64 {
    match state {
        MachineState::Cold => 1900.0,
        MachineState::CoolingDown | MachineState::WarmingUp => 1000.0,
        MachineState::Warm => 500.0,
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Builds the dataset in memory.
pub fn build(config: &GenConfig) -> Result<Generated, GenError> {
    config.validate()?;
    let mut rng = StreamRng::new(config.seed);
    let mut repo = Repository::new();
    let mut capacitances = BTreeMap::new();

    for i in 0..config.n_circuits {
        let circuit_type = CIRCUIT_TYPES[i % CIRCUIT_TYPES.len()];
        let sector = Sector::ALL[i % Sector::ALL.len()];
        let circuit_id = format!("{circuit_type}.{}.{:03}", sector.as_str(), i + 1);
        let manufacturer = MANUFACTURERS[rng.below(MANUFACTURERS.len())];
        let magnet_position = format!("{}.{:02}", sector.as_str(), 1 + rng.below(34));
        let jitter = config.capacitance_jitter_rel * rng.uniform(-1.0, 1.0);
        capacitances.insert(
            circuit_id.clone(),
            config.nominal_capacitance_f * (1.0 + jitter),
        );
        repo.insert_circuit(Circuit {
            circuit_id,
            circuit_type: circuit_type.to_string(),
            sector,
            magnet_position,
            manufacturer: manufacturer.to_string(),
        })?;
    }

    let epoch = Utc.with_ymd_and_hms(2013, 2, 14, 0, 0, 0).unwrap();
    for (j, (label, state)) in config.campaigns.iter().enumerate() {
        repo.insert_campaign(Campaign {
            campaign_id: format!("C{:02}", j + 1),
            label: label.clone(),
            machine_state: *state,
            started_at: epoch + Duration::days(90 * j as i64),
        })?;
    }

    let n = config.samples_per_measurement;
    let times: Vec<f64> = (0..n).map(|i| i as f64 * SAMPLE_SPACING_S).collect();
    let duration = times.last().copied().unwrap_or(0.0);

    let campaigns = repo.campaigns().to_vec();
    let circuits = repo.circuits().to_vec();
    let mut measurements = Vec::new();
    for campaign in &campaigns {
        let v_test = test_voltage(campaign.machine_state);
        let ramp_rate = if duration > 0.0 { v_test / duration } else { v_test };
        for (ci, circuit) in circuits.iter().enumerate() {
            let cap = capacitances[&circuit.circuit_id];
            let current = cap * ramp_rate;
            for (vi, variant) in [Variant::M1, Variant::M2].into_iter().enumerate() {
                let slot = (ci * 2 + vi) as i64;
                let performed_at = campaign.started_at
                    + Duration::minutes(30 * slot + rng.below(20) as i64);
                let temperature = (rng.next_f64() >= 0.1).then(|| round1(rng.uniform(15.0, 25.0)));
                let humidity = (rng.next_f64() >= 0.1).then(|| round1(rng.uniform(30.0, 60.0)));
                let operator = OPERATORS[rng.below(OPERATORS.len())];
                let samples = times
                    .iter()
                    .map(|&t| Sample::new(t, Some(ramp_rate * t), Some(current)))
                    .collect();
                measurements.push(Measurement {
                    measurement_id: format!("m-{:04}", measurements.len() + 1),
                    circuit_id: circuit.circuit_id.clone(),
                    campaign_id: campaign.campaign_id.clone(),
                    test_type: TestType::Hvq,
                    variant,
                    operator: operator.to_string(),
                    performed_at,
                    tunnel_temperature_c: temperature,
                    tunnel_humidity_pct: humidity,
                    samples,
                    annotation: None,
                });
            }
        }
    }

    let total = measurements.len();
    let n_noisy = (config.tp4_noise_rate * total as f64).round() as usize;
    let noisy = rng.choose_indices(total, n_noisy);
    for &idx in &noisy {
        let m = &mut measurements[idx];
        let (lo, hi) = m
            .samples
            .iter()
            .filter_map(|s| s.voltage_v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        let amplitude = config.tp4_noise_amplitude_rel * (hi - lo);
        for s in &mut m.samples {
            if let Some(v) = s.voltage_v.as_mut() {
                *v += rng.uniform(-amplitude, amplitude);
            }
        }
    }

    let n_missing = (config.missing_rate * n as f64).round() as usize;
    if n_missing > 0 {
        for m in &mut measurements {
            for idx in rng.choose_indices(n, n_missing) {
                m.samples[idx].voltage_v = None;
            }
            for idx in rng.choose_indices(n, n_missing) {
                m.samples[idx].current_a = None;
            }
        }
    }

    let anomalous_ids = noisy
        .iter()
        .map(|&i| measurements[i].measurement_id.clone())
        .collect();
    for m in measurements {
        repo.insert_measurement(m)?;
    }
    Ok(Generated {
        repository: repo,
        capacitances,
        anomalous_ids,
    })
}

/// Generates a dataset and writes it as a CSV bundle into `out_dir`.
pub fn generate(config: &GenConfig, out_dir: &Path) -> Result<GenReport, GenError> {
    let generated = build(config)?;
    let counts = crate::store::write_bundle(&generated.repository, out_dir)?;
    let counts = [CIRCUITS_FILE, CAMPAIGNS_FILE, MEASUREMENTS_FILE, SAMPLES_FILE]
        .iter()
        .map(|f| f.to_string())
        .zip(counts)
        .collect();
    Ok(GenReport {
        counts,
        anomalous_ids: generated.anomalous_ids,
    })
}
