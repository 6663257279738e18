//! Domain types for circuits, campaigns, measurements and cleansing verdicts.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::StoreError;

macro_rules! string_enum {
    (
        $(#[$meta:meta])*
        $name:ident, $what:literal { $($variant:ident => $text:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(
                #[serde(rename = $text)]
                $variant,
            )+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text,)+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = StoreError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(StoreError::InvalidValue {
                        what: $what,
                        value: other.to_string(),
                    }),
                }
            }
        }
    };
}

string_enum! {
    /// One of the eight arcs of the ring.
    Sector, "sector" {
        S12 => "S12",
        S23 => "S23",
        S34 => "S34",
        S45 => "S45",
        S56 => "S56",
        S67 => "S67",
        S78 => "S78",
        S81 => "S81",
    }
}

string_enum! {
    /// Temperature state of the machine while a campaign ran.
    MachineState, "machine_state" {
        Cold => "cold",
        Warm => "warm",
        CoolingDown => "cooling_down",
        WarmingUp => "warming_up",
    }
}

string_enum! {
    TestType, "test_type" {
        Tp4 => "TP4",
        Doc => "DOC",
        Mic => "MIC",
        Hvq => "HVQ",
    }
}

string_enum! {
    /// Each circuit is measured twice per campaign; the variants tell the two apart.
    Variant, "variant" {
        M1 => "M1",
        M2 => "M2",
    }
}

string_enum! {
    Verdict, "verdict" {
        Assured => "assured",
        TestOnly => "test_only",
        Suspect => "suspect",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub circuit_id: String,
    pub circuit_type: String,
    pub sector: Sector,
    pub magnet_position: String,
    pub manufacturer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub campaign_id: String,
    pub label: String,
    pub machine_state: MachineState,
    pub started_at: DateTime<Utc>,
}

/// One acquired sample. Absent channels are `None`, never a sentinel number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_s: f64,
    pub voltage_v: Option<f64>,
    pub current_a: Option<f64>,
}

impl Sample {
    pub fn new(t_s: f64, voltage_v: Option<f64>, current_a: Option<f64>) -> Self {
        Self {
            t_s,
            voltage_v,
            current_a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub verdict: Verdict,
    pub author: String,
    pub note: String,
    pub created_at: DateTime<Utc>,
}

/// A single test run on a circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub measurement_id: String,
    pub circuit_id: String,
    pub campaign_id: String,
    pub test_type: TestType,
    pub variant: Variant,
    pub operator: String,
    pub performed_at: DateTime<Utc>,
    pub tunnel_temperature_c: Option<f64>,
    pub tunnel_humidity_pct: Option<f64>,
    pub samples: Vec<Sample>,
    pub annotation: Option<Annotation>,
}

impl Measurement {
    pub fn verdict(&self) -> Option<Verdict> {
        self.annotation.as_ref().map(|a| a.verdict)
    }

    /// Checks that sample times are finite, non-negative and strictly increasing.
    pub fn check_samples(&self) -> Result<(), String> {
        let mut prev: Option<f64> = None;
        for (i, s) in self.samples.iter().enumerate() {
            if !s.t_s.is_finite() || s.t_s < 0.0 {
                return Err(format!("sample {i} has invalid time {}", s.t_s));
            }
            if let Some(p) = prev {
                if s.t_s <= p {
                    return Err(format!("sample {i} time {} not after {p}", s.t_s));
                }
            }
            for v in [s.voltage_v, s.current_a].into_iter().flatten() {
                if !v.is_finite() {
                    return Err(format!("sample {i} has non-finite value"));
                }
            }
            prev = Some(s.t_s);
        }
        Ok(())
    }
}
