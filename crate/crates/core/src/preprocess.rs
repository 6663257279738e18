//! Per-signal feature extraction.
//!
//! Moments are population (biased) moments, `m_k = (1/n) Σ (x - x̄)^k`;
//! skewness is `m3 / m2^1.5` and kurtosis is reported as excess kurtosis,
//! `m4 / m2² - 3`. Gaps in a channel are filled by linear interpolation before
//! any statistic is computed; a channel with more than 30 % of its values
//! missing is rejected rather than smoothed over.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{Measurement, Sample};

/// Largest tolerated fraction of absent values in a channel.
pub const MAX_MISSING_FRACTION: f64 = 0.30;
/// Smallest voltage rise over the charge window accepted for capacitance.
pub const MIN_VOLTAGE_RISE_V: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("zero variance")]
    DegenerateVariance,
    #[error("all sample times are equal")]
    DegenerateTimes,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{channel} channel has {fraction:.3} of its values missing")]
    MissingDataExcessive { channel: Channel, fraction: f64 },
    #[error("{0} channel has no values")]
    AllMissing(Channel),
    #[error("voltage rise {0} V is below the threshold")]
    FlatVoltage(f64),
    #[error("non-finite input value")]
    NonFinite,
}

impl PreprocessError {
    pub fn code(&self) -> &'static str {
        match self {
            PreprocessError::EmptyInput => "EmptyInput",
            PreprocessError::TooFewValues { .. } => "TooFewValues",
            PreprocessError::DegenerateVariance => "DegenerateVariance",
            PreprocessError::DegenerateTimes => "DegenerateTimes",
            PreprocessError::LengthMismatch(..) => "LengthMismatch",
            PreprocessError::MissingDataExcessive { .. } => "MissingDataExcessive",
            PreprocessError::AllMissing(_) => "AllMissing",
            PreprocessError::FlatVoltage(_) => "FlatVoltage",
            PreprocessError::NonFinite => "NonFinite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Voltage,
    Current,
}

impl Channel {
    fn read(self, s: &Sample) -> Option<f64> {
        match self {
            Channel::Voltage => s.voltage_v,
            Channel::Current => s.current_a,
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Channel::Voltage => "voltage",
            Channel::Current => "current",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub measurement_id: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub skewness: f64,
    pub kurtosis_excess: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub capacitance_f: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

fn check_finite(values: &[f64]) -> Result<(), PreprocessError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PreprocessError::NonFinite)
    }
}

/// Mean (compensated summation), minimum and maximum.
pub fn basic_stats(values: &[f64]) -> Result<BasicStats, PreprocessError> {
    if values.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    check_finite(values)?;
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
        min = min.min(v);
        max = max.max(v);
    }
    let mean = ((sum + comp) / values.len() as f64).clamp(min, max);
    Ok(BasicStats { mean, min, max })
}

/// Streaming central-moment accumulator (one pass, numerically stable).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        let n1 = self.n;
        self.n += 1.0;
        let n = self.n;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    fn of(values: &[f64], needed: usize) -> Result<Self, PreprocessError> {
        if values.is_empty() {
            return Err(PreprocessError::EmptyInput);
        }
        if values.len() < needed {
            return Err(PreprocessError::TooFewValues {
                needed,
                got: values.len(),
            });
        }
        check_finite(values)?;
        let mut acc = Moments::default();
        values.iter().for_each(|&v| acc.push(v));
        if acc.m2 <= 0.0 {
            return Err(PreprocessError::DegenerateVariance);
        }
        Ok(acc)
    }
}

/// Sample skewness `g1` from population moments. Needs three values.
pub fn skewness(values: &[f64]) -> Result<f64, PreprocessError> {
    let m = Moments::of(values, 3)?;
    Ok(m.n.sqrt() * m.m3 / m.m2.powf(1.5))
}

/// Excess kurtosis `g2` from population moments. Needs four values.
pub fn kurtosis_excess(values: &[f64]) -> Result<f64, PreprocessError> {
    let m = Moments::of(values, 4)?;
    Ok(m.n * m.m4 / (m.m2 * m.m2) - 3.0)
}

/// Ordinary least squares of `values` against `times`.
///
/// The slope standard error is `sqrt((Σr²/(n-2)) / Σ(t-t̄)²)`.
pub fn ols_fit(times: &[f64], values: &[f64]) -> Result<LinearFit, PreprocessError> {
    if times.len() != values.len() {
        return Err(PreprocessError::LengthMismatch(times.len(), values.len()));
    }
    if times.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    if times.len() < 3 {
        return Err(PreprocessError::TooFewValues {
            needed: 3,
            got: times.len(),
        });
    }
    check_finite(times)?;
    check_finite(values)?;
    let n = times.len() as f64;
    let t_mean = times.iter().sum::<f64>() / n;
    let v_mean = values.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&t, &v) in times.iter().zip(values) {
        let dt = t - t_mean;
        sxx += dt * dt;
        sxy += dt * (v - v_mean);
    }
    if sxx == 0.0 {
        return Err(PreprocessError::DegenerateTimes);
    }
    let slope = sxy / sxx;
    let intercept = v_mean - slope * t_mean;
    let sse: f64 = times
        .iter()
        .zip(values)
        .map(|(&t, &v)| {
            let r = v - (intercept + slope * t);
            r * r
        })
        .sum();
    let slope_stderr = ((sse / (n - 2.0)) / sxx).sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr,
    })
}

/// Fills the gaps of one channel by linear interpolation in time.
///
/// Leading and trailing gaps take the nearest present value.
pub fn interpolate_missing(samples: &[Sample], channel: Channel) -> Result<Vec<f64>, PreprocessError> {
    if samples.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let present: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| channel.read(s).is_some())
        .map(|(i, _)| i)
        .collect();
    if present.is_empty() {
        return Err(PreprocessError::AllMissing(channel));
    }
    let fraction = (samples.len() - present.len()) as f64 / samples.len() as f64;
    if fraction > MAX_MISSING_FRACTION {
        return Err(PreprocessError::MissingDataExcessive { channel, fraction });
    }
    if present.len() < 2 {
        return Err(PreprocessError::TooFewValues {
            needed: 2,
            got: present.len(),
        });
    }

    let value = |i: usize| channel.read(&samples[i]).expect("present index");
    let mut out = Vec::with_capacity(samples.len());
    let mut next = 0; // index into `present` of the first present sample >= i
    for (i, s) in samples.iter().enumerate() {
        while next < present.len() && present[next] < i {
            next += 1;
        }
        let v = match channel.read(s) {
            Some(v) => v,
            None if next == 0 => value(present[0]),
            None if next == present.len() => value(present[present.len() - 1]),
            None => {
                let (a, b) = (present[next - 1], present[next]);
                let (ta, tb) = (samples[a].t_s, samples[b].t_s);
                let (va, vb) = (value(a), value(b));
                va + (vb - va) * (s.t_s - ta) / (tb - ta)
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Capacitance as charge over voltage rise across the charge window.
///
/// The window runs from the first sample to the (earliest) voltage maximum.
/// Charge is the trapezoidal integral of the interpolated current over it.
pub fn capacitance(m: &Measurement) -> Result<f64, PreprocessError> {
    let voltage = interpolate_missing(&m.samples, Channel::Voltage)?;
    let current = interpolate_missing(&m.samples, Channel::Current)?;
    let peak = voltage
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > voltage[best] { i } else { best });
    let rise = voltage[peak] - voltage[0];
    if !(rise > MIN_VOLTAGE_RISE_V) {
        return Err(PreprocessError::FlatVoltage(rise));
    }
    let charge: f64 = (1..=peak)
        .map(|i| {
            let dt = m.samples[i].t_s - m.samples[i - 1].t_s;
            0.5 * (current[i] + current[i - 1]) * dt
        })
        .sum();
    Ok(charge / rise)
}

/// Extracts the full feature vector of one measurement.
pub fn extract_features(m: &Measurement) -> Result<FeatureVector, PreprocessError> {
    if m.samples.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let present = m.samples.iter().filter(|s| s.voltage_v.is_some()).count();
    if present < 3 {
        return Err(PreprocessError::TooFewValues {
            needed: 3,
            got: present,
        });
    }
    let voltage = interpolate_missing(&m.samples, Channel::Voltage)?;
    let times: Vec<f64> = m.samples.iter().map(|s| s.t_s).collect();
    let stats = basic_stats(&voltage)?;
    let fit = ols_fit(&times, &voltage)?;
    let has_current = m.samples.iter().any(|s| s.current_a.is_some());
    Ok(FeatureVector {
        measurement_id: m.measurement_id.clone(),
        mean: stats.mean,
        min: stats.min,
        max: stats.max,
        skewness: skewness(&voltage)?,
        kurtosis_excess: kurtosis_excess(&voltage)?,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        capacitance_f: if has_current { capacitance(m).ok() } else { None },
    })
}

/// Root-mean-square deviation between a series and a reference.
pub fn rmse_deviation(series: &[f64], reference: &[f64]) -> Result<f64, PreprocessError> {
    if series.len() != reference.len() {
        return Err(PreprocessError::LengthMismatch(series.len(), reference.len()));
    }
    if series.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    check_finite(series)?;
    check_finite(reference)?;
    let ss: f64 = series
        .iter()
        .zip(reference)
        .map(|(s, r)| (s - r) * (s - r))
        .sum();
    Ok((ss / series.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{TestType, Variant};
    use chrono::{TimeZone, Utc};

    fn measurement(samples: Vec<Sample>) -> Measurement {
        Measurement {
            measurement_id: "m".into(),
            circuit_id: "c".into(),
            campaign_id: "k".into(),
            test_type: TestType::Hvq,
            variant: Variant::M1,
            operator: "op".into(),
            performed_at: Utc.with_ymd_and_hms(2014, 1, 1, 0, 0, 0).unwrap(),
            tunnel_temperature_c: None,
            tunnel_humidity_pct: None,
            samples,
            annotation: None,
        }
    }

    fn ramp(n: usize, duration: f64, v_end: f64, current: f64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let t = duration * i as f64 / (n - 1) as f64;
                Sample::new(t, Some(v_end * t / duration), Some(current))
            })
            .collect()
    }

    #[test]
    fn basic_stats_fixed() {
        let s = basic_stats(&[5.0]).unwrap();
        assert_eq!((s.mean, s.min, s.max), (5.0, 5.0, 5.0));
        let s = basic_stats(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.min, s.max), (1.0, 0.0, 2.0));
        assert_eq!(basic_stats(&[]), Err(PreprocessError::EmptyInput));
    }

    #[test]
    fn skewness_fixed() {
        assert!(skewness(&[1.0, 2.0, 3.0]).unwrap().abs() < 1e-15);
        let g1 = skewness(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((g1 - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(skewness(&[7.0, 7.0, 7.0]), Err(PreprocessError::DegenerateVariance));
        assert_eq!(skewness(&[]), Err(PreprocessError::EmptyInput));
        assert!(matches!(skewness(&[1.0, 2.0]), Err(PreprocessError::TooFewValues { .. })));
    }

    #[test]
    fn kurtosis_fixed() {
        let g2 = kurtosis_excess(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert!((g2 + 2.0).abs() < 1e-12);
        assert_eq!(
            kurtosis_excess(&[3.0, 3.0, 3.0, 3.0]),
            Err(PreprocessError::DegenerateVariance)
        );
    }

    #[test]
    fn ols_fixed() {
        let f = ols_fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!((f.slope, f.intercept, f.slope_stderr), (1.0, 0.0, 0.0));
        let f = ols_fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.0]).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-15);
        assert!((f.intercept - 1.0 / 6.0).abs() < 1e-15);
        assert!((f.slope_stderr - (1.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(
            ols_fit(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]),
            Err(PreprocessError::DegenerateTimes)
        );
        assert_eq!(
            ols_fit(&[1.0, 2.0], &[0.0, 1.0, 2.0]),
            Err(PreprocessError::LengthMismatch(2, 3))
        );
    }

    #[test]
    fn interpolation() {
        let full = vec![
            Sample::new(0.0, Some(1.0), None),
            Sample::new(1.0, Some(2.0), None),
        ];
        assert_eq!(interpolate_missing(&full, Channel::Voltage).unwrap(), [1.0, 2.0]);

        let gap = vec![
            Sample::new(0.0, Some(0.0), None),
            Sample::new(1.0, None, None),
            Sample::new(2.0, Some(10.0), None),
            Sample::new(3.0, Some(10.0), None),
        ];
        assert_eq!(
            interpolate_missing(&gap, Channel::Voltage).unwrap(),
            [0.0, 5.0, 10.0, 10.0]
        );
        assert_eq!(
            interpolate_missing(&gap, Channel::Current),
            Err(PreprocessError::AllMissing(Channel::Current))
        );
    }

    #[test]
    fn interpolation_edges_extend() {
        let s = vec![
            Sample::new(0.0, None, None),
            Sample::new(1.0, Some(3.0), None),
            Sample::new(2.0, Some(4.0), None),
            Sample::new(3.0, Some(5.0), None),
            Sample::new(4.0, Some(5.0), None),
            Sample::new(5.0, Some(5.0), None),
            Sample::new(6.0, None, None),
        ];
        assert_eq!(
            interpolate_missing(&s, Channel::Voltage).unwrap(),
            [3.0, 3.0, 4.0, 5.0, 5.0, 5.0, 5.0]
        );
    }

    #[test]
    fn missing_threshold() {
        let mk = |missing: usize| -> Vec<Sample> {
            (0..100)
                .map(|i| Sample::new(i as f64, (i >= missing).then_some(i as f64), None))
                .collect()
        };
        assert!(interpolate_missing(&mk(30), Channel::Voltage).is_ok());
        assert!(matches!(
            interpolate_missing(&mk(31), Channel::Voltage),
            Err(PreprocessError::MissingDataExcessive { .. })
        ));
    }

    #[test]
    fn capacitance_of_ramp() {
        // 0 -> 100 V over 10 s at 1 uA: Q = 1e-5 C, C = 100 nF.
        let m = measurement(ramp(101, 10.0, 100.0, 1e-6));
        let c = capacitance(&m).unwrap();
        assert!((c - 1e-7).abs() / 1e-7 < 1e-12);
    }

    #[test]
    fn capacitance_uses_earliest_peak() {
        let samples = vec![
            Sample::new(0.0, Some(0.0), Some(1.0)),
            Sample::new(1.0, Some(2.0), Some(1.0)),
            Sample::new(2.0, Some(2.0), Some(1.0)),
            Sample::new(3.0, Some(1.0), Some(1.0)),
        ];
        // Window [0, 1]: Q = 1, dV = 2.
        assert_eq!(capacitance(&measurement(samples)).unwrap(), 0.5);
    }

    #[test]
    fn flat_voltage() {
        let samples = (0..10)
            .map(|i| Sample::new(i as f64, Some(5.0), Some(1.0)))
            .collect();
        assert!(matches!(
            capacitance(&measurement(samples)),
            Err(PreprocessError::FlatVoltage(_))
        ));
    }

    #[test]
    fn features_without_current() {
        let samples = (0..5)
            .map(|i| Sample::new(i as f64, Some(2.0 * i as f64 + 1.0), None))
            .collect();
        let f = extract_features(&measurement(samples)).unwrap();
        assert_eq!(f.slope, 2.0);
        assert_eq!(f.slope_stderr, 0.0);
        assert_eq!(f.capacitance_f, None);
        assert!(f.min <= f.mean && f.mean <= f.max);
    }

    #[test]
    fn rmse_fixed() {
        assert_eq!(rmse_deviation(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = rmse_deviation(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse_deviation(&[], &[]), Err(PreprocessError::EmptyInput));
        assert_eq!(
            rmse_deviation(&[1.0], &[1.0, 2.0]),
            Err(PreprocessError::LengthMismatch(1, 2))
        );
    }
}
