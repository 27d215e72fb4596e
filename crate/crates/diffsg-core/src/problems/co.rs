//! Computation offloading: three users decide between local execution and
//! offloading to one edge server whose CPU they share.
//!
//! The solution vector holds edge-resource fractions `y in [0,1]^3`; user
//! `i` offloads iff `y_i >= 0.1`, and the offloaded fractions must sum to
//! one (the server is fully used whenever anyone offloads). The objective
//! is the weighted sum of latency and energy across users, to minimize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ranges::{CoRanges, Domain};
use crate::rng::Rng;

/// Offloading decision threshold: allocations below it mean "run locally".
pub const DECISION_THRESHOLD: f64 = 0.1;

const FEAS_TOL: f64 = 1e-9;

/// One problem instance (the condition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoInstance {
    /// Task sizes, bytes.
    pub task_bytes: [f64; 3],
    /// Channel gains.
    pub gain: [f64; 3],
    /// Local CPU speeds, cycles/s.
    pub local_cpu_hz: [f64; 3],
    /// Edge CPU speed, cycles/s.
    pub edge_cpu_hz: f64,
    /// Per-user OMA bandwidth, Hz.
    pub bandwidth_hz: f64,
    /// Uplink transmit power, W.
    pub tx_power_w: f64,
    /// Noise power, W.
    pub noise_w: f64,
    /// Task intensity, cycles/byte.
    pub cycles_per_byte: f64,
    /// Chip energy coefficient.
    pub energy_coef: f64,
    /// Latency weight; energy weight is `1 -` this.
    pub latency_weight: f64,
}

impl CoInstance {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .task_bytes
            .iter()
            .chain(self.gain.iter())
            .chain(self.local_cpu_hz.iter())
            .chain([
                &self.edge_cpu_hz,
                &self.bandwidth_hz,
                &self.tx_power_w,
                &self.noise_w,
                &self.cycles_per_byte,
                &self.energy_coef,
            ]);
        for v in all {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::invalid_argument(format!("co instance field {v} not positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.latency_weight) {
            return Err(Error::invalid_argument("co latency weight outside [0, 1]"));
        }
        Ok(())
    }

    pub fn sample(ranges: &CoRanges, domain: Domain, rng: &mut Rng) -> Self {
        let (d_lo, d_hi) = match domain {
            Domain::In => ranges.task_bytes,
            Domain::Ood => ranges.task_bytes_ood,
        };
        let (f_lo, f_hi) = match domain {
            Domain::In => ranges.local_cpu_hz,
            Domain::Ood => ranges.local_cpu_hz_ood,
        };
        let draw3 = |lo: f64, hi: f64, rng: &mut Rng| {
            [rng.uniform_in(lo, hi), rng.uniform_in(lo, hi), rng.uniform_in(lo, hi)]
        };
        CoInstance {
            task_bytes: draw3(d_lo, d_hi, rng),
            gain: draw3(ranges.gain.0, ranges.gain.1, rng),
            local_cpu_hz: draw3(f_lo, f_hi, rng),
            edge_cpu_hz: ranges.edge_cpu_hz,
            bandwidth_hz: ranges.bandwidth_hz,
            tx_power_w: ranges.tx_power_w,
            noise_w: ranges.noise_w,
            cycles_per_byte: ranges.cycles_per_byte,
            energy_coef: ranges.energy_coef,
            latency_weight: ranges.latency_weight,
        }
    }

    /// Condition features: task sizes, gains, local CPU speeds.
    pub fn condition(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(9);
        out.extend_from_slice(&self.task_bytes);
        out.extend_from_slice(&self.gain);
        out.extend_from_slice(&self.local_cpu_hz);
        out
    }

    fn cycles(&self, i: usize) -> f64 {
        self.cycles_per_byte * self.task_bytes[i]
    }

    /// Uplink rate of user `i`, bits/s.
    fn rate(&self, i: usize) -> f64 {
        self.bandwidth_hz * (1.0 + self.gain[i] * self.tx_power_w / self.noise_w).log2()
    }

    /// Weighted local-execution cost of user `i`.
    fn local_cost(&self, i: usize) -> f64 {
        let c = self.cycles(i);
        let f = self.local_cpu_hz[i];
        let latency = c / f;
        let energy = self.energy_coef * f * f * c;
        self.latency_weight * latency + (1.0 - self.latency_weight) * energy
    }

    /// Weighted offloading cost of user `i` given edge fraction `y_i > 0`.
    fn edge_cost(&self, i: usize, y_i: f64) -> f64 {
        let bits = 8.0 * self.task_bytes[i];
        let tx_time = bits / self.rate(i);
        let exec_time = self.cycles(i) / (y_i * self.edge_cpu_hz);
        let energy = self.tx_power_w * tx_time;
        self.latency_weight * (tx_time + exec_time) + (1.0 - self.latency_weight) * energy
    }
}

/// Offloading decisions derived from an allocation vector.
pub fn decisions(y: &[f64; 3]) -> [bool; 3] {
    [
        y[0] >= DECISION_THRESHOLD,
        y[1] >= DECISION_THRESHOLD,
        y[2] >= DECISION_THRESHOLD,
    ]
}

fn check_feasible(y: &[f64; 3]) -> Result<()> {
    let a = decisions(y);
    let mut offloaded_sum = 0.0;
    let mut any = false;
    for i in 0..3 {
        if !y[i].is_finite() || y[i] < 0.0 || y[i] > 1.0 + FEAS_TOL {
            return Err(Error::Infeasible(format!("co allocation y[{i}] = {} outside [0,1]", y[i])));
        }
        if a[i] {
            if y[i] <= 0.0 {
                return Err(Error::Infeasible(format!("co user {i} offloads with zero allocation")));
            }
            offloaded_sum += y[i];
            any = true;
        } else if y[i] != 0.0 {
            return Err(Error::Infeasible(format!(
                "co allocation y[{i}] = {} below the {DECISION_THRESHOLD} threshold must be 0",
                y[i]
            )));
        }
    }
    if any && (offloaded_sum - 1.0).abs() > 1e-6 {
        return Err(Error::Infeasible(format!(
            "co offloaded allocations sum to {offloaded_sum}, expected 1"
        )));
    }
    Ok(())
}

/// Total weighted latency+energy cost (lower is better).
pub fn objective(x: &CoInstance, y: &[f64; 3]) -> Result<f64> {
    check_feasible(y)?;
    let a = decisions(y);
    let mut cost = 0.0;
    for i in 0..3 {
        cost += if a[i] { x.edge_cost(i, y[i]) } else { x.local_cost(i) };
    }
    Ok(cost)
}

/// Clamps into `[0,1]`, zeroes entries below the decision threshold, and
/// renormalizes the offloading set to sum one, iterating until the
/// threshold rule and the sum constraint agree (at most three passes).
/// Total and exactly idempotent: a sum already within 1e-9 of one is kept
/// bit-for-bit instead of being rescaled by `1 +/- ulp`.
pub fn project(raw: &[f64]) -> [f64; 3] {
    let mut y = [0.0; 3];
    for i in 0..3 {
        let v = raw.get(i).copied().unwrap_or(0.0);
        y[i] = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    }
    loop {
        let mut sum = 0.0;
        for v in y.iter_mut() {
            if *v < DECISION_THRESHOLD {
                *v = 0.0;
            } else {
                sum += *v;
            }
        }
        if sum == 0.0 {
            return y;
        }
        if (sum - 1.0).abs() <= 1e-9 {
            return y;
        }
        for v in y.iter_mut() {
            *v /= sum;
        }
        if y.iter().all(|&v| v == 0.0 || v >= DECISION_THRESHOLD) {
            return y;
        }
    }
}

/// Exact solver: enumerates all 2^3 offloading decisions; within a decision
/// the cost separates and the optimal split of the edge CPU over the
/// offloading set S is `y_i = sqrt(C_i) / sum_{j in S} sqrt(C_j)`
/// (stationarity of `sum C_i / y_i` on the simplex). Candidates whose
/// allocation drops below the decision threshold are discarded as
/// inconsistent with the threshold rule.
pub fn oracle(x: &CoInstance) -> Result<[f64; 3]> {
    x.validate()?;
    let mut best: Option<(f64, [f64; 3])> = None;
    for mask in 0..8u8 {
        let mut y = [0.0; 3];
        if mask != 0 {
            let mut sqrt_sum = 0.0;
            for i in 0..3 {
                if mask & (1 << i) != 0 {
                    sqrt_sum += x.cycles(i).sqrt();
                }
            }
            let mut valid = true;
            for i in 0..3 {
                if mask & (1 << i) != 0 {
                    y[i] = x.cycles(i).sqrt() / sqrt_sum;
                    if y[i] < DECISION_THRESHOLD {
                        valid = false;
                    }
                }
            }
            if !valid {
                continue;
            }
        }
        let cost = objective(x, &y)?;
        if best.map_or(true, |(c, _)| cost < c) {
            best = Some((cost, y));
        }
    }
    // The all-local candidate is always valid, so a best always exists.
    Ok(best.expect("all-local candidate exists").1)
}
