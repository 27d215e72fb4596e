//! Instance-sampling ranges and physical constants for the case problems.
//!
//! Every constant the samplers and objectives use lives here so a run can
//! override them from a config file and datasets can record them in their
//! headers. Out-of-domain (OOD) draws shift selected features beyond the
//! in-domain ranges by 20-100%.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether an instance is drawn from the training ranges or the shifted
/// out-of-domain ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    In,
    Ood,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::In => write!(f, "in"),
            Domain::Ood => write!(f, "ood"),
        }
    }
}

/// Computation-offloading constants (3 users, one edge server).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoRanges {
    /// Task size draw, bytes.
    pub task_bytes: (f64, f64),
    /// OOD task size draw (mean shifted from 2.5e5 to 3e5 bytes).
    pub task_bytes_ood: (f64, f64),
    /// Channel gain draw (dimensionless).
    pub gain: (f64, f64),
    /// Local CPU draw, cycles/s.
    pub local_cpu_hz: (f64, f64),
    /// OOD local CPU draw (upper end x1.5).
    pub local_cpu_hz_ood: (f64, f64),
    /// Edge server CPU, cycles/s.
    pub edge_cpu_hz: f64,
    /// Per-user OMA bandwidth, Hz.
    pub bandwidth_hz: f64,
    /// Uplink transmit power, W.
    pub tx_power_w: f64,
    /// Noise power, W.
    pub noise_w: f64,
    /// Task intensity, cycles/byte.
    pub cycles_per_byte: f64,
    /// Chip energy coefficient kappa, J/(cycle (cycles/s)^2).
    pub energy_coef: f64,
    /// Latency weight (energy weight is its complement).
    pub latency_weight: f64,
}

impl Default for CoRanges {
    fn default() -> Self {
        // Calibrated so the optimal offloading set genuinely varies across
        // instances: per-cycle local cost (latency + chip energy) overlaps
        // per-cycle edge cost (transmission + contended server CPU). Wide
        // task sizes put sqrt-rule allocations on both sides of the 0.1
        // decision threshold, and a small edge CPU makes server sharing
        // expensive, so picking the wrong offloading set carries a real
        // price. Task-size means stay at 2.5e5 bytes in-domain and 3e5
        // out-of-domain; the OOD local-CPU ceiling doubles.
        CoRanges {
            task_bytes: (5e3, 4.95e5),
            task_bytes_ood: (6e3, 5.94e5),
            gain: (2e-10, 2e-8),
            local_cpu_hz: (0.5e9, 1.5e9),
            local_cpu_hz_ood: (0.5e9, 3.0e9),
            edge_cpu_hz: 1e9,
            bandwidth_hz: 2e7,
            tx_power_w: 0.5,
            noise_w: 1e-10,
            cycles_per_byte: 100.0,
            energy_coef: 3e-27,
            latency_weight: 0.5,
        }
    }
}

/// Sum-rate maximization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsrRanges {
    /// Per-channel gain draw.
    pub gain: (f64, f64),
    /// OOD gain draw (range upper end x1.5).
    pub gain_ood: (f64, f64),
    /// Total power, W (fixed in-domain).
    pub power_w: f64,
    /// OOD total power draw, W (20-100% above in-domain).
    pub power_ood_w: (f64, f64),
    /// Noise power, W.
    pub noise_w: f64,
}

impl Default for MsrRanges {
    fn default() -> Self {
        MsrRanges {
            gain: (0.1, 2.0),
            gain_ood: (0.1, 3.0),
            power_w: 10.0,
            power_ood_w: (12.0, 20.0),
            noise_w: 1.0,
        }
    }
}

/// NOMA-UAV placement constants (3 ground terminals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuRanges {
    /// Region extent, meters (width, length); terminals and the UAV live in
    /// `[0, w] x [0, l]`.
    pub region: (f64, f64),
    /// UAV altitude, m.
    pub altitude_m: f64,
    /// Reference channel gain at 1 m.
    pub ref_gain: f64,
    /// Noise power, W.
    pub noise_w: f64,
    /// Total communication power, W (fixed in-domain).
    pub power_w: f64,
    /// OOD power draw, W (20-100% above in-domain).
    pub power_ood_w: (f64, f64),
    /// Per-user minimum rate, bits/s/Hz.
    pub min_rate: f64,
}

impl Default for NuRanges {
    fn default() -> Self {
        NuRanges {
            region: (100.0, 100.0),
            altitude_m: 30.0,
            ref_gain: 1e-3,
            noise_w: 1e-9,
            power_w: 1.0,
            power_ood_w: (1.2, 2.0),
            min_rate: 0.5,
        }
    }
}

/// All problem constants; the unit recorded in dataset headers and override
/// files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemRanges {
    pub co: CoRanges,
    pub msr: MsrRanges,
    pub nu: NuRanges,
}

impl ProblemRanges {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid_argument(format!("{name} must be positive, got {v}")))
            }
        };
        let span = |(lo, hi): (f64, f64), name: &str| {
            if lo > 0.0 && hi >= lo && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid_argument(format!("{name} range ({lo}, {hi}) invalid")))
            }
        };
        span(self.co.task_bytes, "co.task_bytes")?;
        span(self.co.task_bytes_ood, "co.task_bytes_ood")?;
        span(self.co.gain, "co.gain")?;
        span(self.co.local_cpu_hz, "co.local_cpu_hz")?;
        span(self.co.local_cpu_hz_ood, "co.local_cpu_hz_ood")?;
        pos(self.co.edge_cpu_hz, "co.edge_cpu_hz")?;
        pos(self.co.bandwidth_hz, "co.bandwidth_hz")?;
        pos(self.co.tx_power_w, "co.tx_power_w")?;
        pos(self.co.noise_w, "co.noise_w")?;
        pos(self.co.cycles_per_byte, "co.cycles_per_byte")?;
        pos(self.co.energy_coef, "co.energy_coef")?;
        if !(0.0..=1.0).contains(&self.co.latency_weight) {
            return Err(Error::invalid_argument("co.latency_weight outside [0, 1]"));
        }
        span(self.msr.gain, "msr.gain")?;
        span(self.msr.gain_ood, "msr.gain_ood")?;
        pos(self.msr.power_w, "msr.power_w")?;
        span(self.msr.power_ood_w, "msr.power_ood_w")?;
        pos(self.msr.noise_w, "msr.noise_w")?;
        pos(self.nu.region.0, "nu.region width")?;
        pos(self.nu.region.1, "nu.region length")?;
        pos(self.nu.altitude_m, "nu.altitude_m")?;
        pos(self.nu.ref_gain, "nu.ref_gain")?;
        pos(self.nu.noise_w, "nu.noise_w")?;
        pos(self.nu.power_w, "nu.power_w")?;
        span(self.nu.power_ood_w, "nu.power_ood_w")?;
        if self.nu.min_rate < 0.0 {
            return Err(Error::invalid_argument("nu.min_rate must be >= 0"));
        }
        Ok(())
    }
}
