//! NOMA-UAV placement: position a UAV over three ground terminals and
//! split its transmit power across their channels to maximize the NOMA
//! sum rate under a per-user minimum-rate constraint.
//!
//! Channel gains follow free-space path loss from the UAV position;
//! superposition coding with successive interference cancellation decodes
//! users in ascending gain order, so user `k` sees interference only from
//! stronger-channel users. Unconstrained sum-rate maximization would dump
//! all power on the strongest channel; the per-user rate floor keeps the
//! allocation nontrivial.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ranges::{Domain, NuRanges};
use crate::rng::Rng;

const SUM_TOL: f64 = 1e-6;
/// Slack when checking the rate floor, so oracle solutions sitting exactly
/// on the constraint do not flip infeasible through rounding.
const RATE_TOL: f64 = 1e-9;

/// Objective value reported for allocations violating the rate floor.
pub const INFEASIBLE_SENTINEL: f64 = f64::NEG_INFINITY;

/// One problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuInstance {
    /// Ground terminal coordinates, meters.
    pub terminals: [[f64; 2]; 3],
    /// UAV altitude, m.
    pub altitude_m: f64,
    /// Total communication power, W.
    pub total_power_w: f64,
    /// Noise power, W.
    pub noise_w: f64,
    /// Reference gain at 1 m.
    pub ref_gain: f64,
    /// Region extent `[width, length]`; positions live in `[0,w] x [0,l]`.
    pub region: [f64; 2],
    /// Per-user minimum rate, bits/s/Hz.
    pub min_rate: f64,
}

/// A candidate placement-and-allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuSolution {
    pub position: [f64; 2],
    pub power: [f64; 3],
}

impl NuInstance {
    pub fn validate(&self) -> Result<()> {
        for u in &self.terminals {
            if !(0.0..=self.region[0]).contains(&u[0]) || !(0.0..=self.region[1]).contains(&u[1]) {
                return Err(Error::invalid_argument(format!(
                    "terminal {u:?} outside region {:?}",
                    self.region
                )));
            }
        }
        for v in [self.altitude_m, self.total_power_w, self.noise_w, self.ref_gain] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid_argument(format!("nu field {v} not positive")));
            }
        }
        if self.min_rate < 0.0 {
            return Err(Error::invalid_argument("nu min_rate must be >= 0"));
        }
        Ok(())
    }

    pub fn sample(ranges: &NuRanges, domain: Domain, rng: &mut Rng) -> Self {
        let mut terminals = [[0.0; 2]; 3];
        for t in terminals.iter_mut() {
            t[0] = rng.uniform_in(0.0, ranges.region.0);
            t[1] = rng.uniform_in(0.0, ranges.region.1);
        }
        let total_power_w = match domain {
            Domain::In => ranges.power_w,
            Domain::Ood => rng.uniform_in(ranges.power_ood_w.0, ranges.power_ood_w.1),
        };
        NuInstance {
            terminals,
            altitude_m: ranges.altitude_m,
            total_power_w,
            noise_w: ranges.noise_w,
            ref_gain: ranges.ref_gain,
            region: [ranges.region.0, ranges.region.1],
            min_rate: ranges.min_rate,
        }
    }

    /// Condition features: terminal coordinates, then the power budget.
    pub fn condition(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(7);
        for u in &self.terminals {
            out.extend_from_slice(u);
        }
        out.push(self.total_power_w);
        out
    }

    /// Channel gain of terminal `i` from position `q`.
    pub fn gamma(&self, q: &[f64; 2], i: usize) -> f64 {
        let dx = q[0] - self.terminals[i][0];
        let dy = q[1] - self.terminals[i][1];
        self.ref_gain / (self.altitude_m * self.altitude_m + dx * dx + dy * dy)
    }

    fn in_region(&self, q: &[f64; 2]) -> bool {
        (0.0..=self.region[0]).contains(&q[0]) && (0.0..=self.region[1]).contains(&q[1])
    }
}

/// Per-user rates in the supplied user order given SIC decoding in
/// ascending-gain order. `order` must list user indices weakest first.
fn rates_ordered(x: &NuInstance, gammas: &[f64; 3], order: &[usize; 3], p: &[f64; 3]) -> [f64; 3] {
    let mut rates = [0.0; 3];
    for rank in 0..3 {
        let user = order[rank];
        let interference: f64 = (rank + 1..3).map(|r| p[order[r]]).sum();
        let g = gammas[user];
        let sinr = g * p[user] / (g * interference + x.noise_w);
        rates[user] = (1.0 + sinr).log2();
    }
    rates
}

/// Users sorted weakest-channel first (ties broken by index).
fn sic_order(gammas: &[f64; 3]) -> [usize; 3] {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| gammas[a].partial_cmp(&gammas[b]).unwrap().then(a.cmp(&b)));
    order
}

/// NOMA sum rate, or [`INFEASIBLE_SENTINEL`] when any user falls below the
/// rate floor. Errors when the position leaves the region or the powers
/// are not a valid budget split.
pub fn objective(x: &NuInstance, sol: &NuSolution) -> Result<f64> {
    if !x.in_region(&sol.position) {
        return Err(Error::Infeasible(format!(
            "uav position {:?} outside region {:?}",
            sol.position, x.region
        )));
    }
    let mut sum = 0.0;
    for v in &sol.power {
        if !v.is_finite() || *v < -SUM_TOL {
            return Err(Error::Infeasible(format!("nu power {v} negative")));
        }
        sum += v.max(0.0);
    }
    if (sum - x.total_power_w).abs() > SUM_TOL * x.total_power_w.max(1.0) {
        return Err(Error::Infeasible(format!(
            "nu powers sum to {sum}, budget {}",
            x.total_power_w
        )));
    }
    let gammas = [
        x.gamma(&sol.position, 0),
        x.gamma(&sol.position, 1),
        x.gamma(&sol.position, 2),
    ];
    let order = sic_order(&gammas);
    let rates = rates_ordered(x, &gammas, &order, &sol.power);
    if rates.iter().any(|&r| r < x.min_rate - RATE_TOL) {
        return Ok(INFEASIBLE_SENTINEL);
    }
    Ok(rates.iter().sum())
}

/// Clamps the position into the region and projects the powers onto the
/// budget simplex (uniform on degenerate input). Total and idempotent.
/// The rate floor is not repaired here; infeasible allocations score the
/// sentinel in [`objective`].
pub fn project(x: &NuInstance, raw: &[f64]) -> NuSolution {
    let get = |i: usize| raw.get(i).copied().filter(|v| v.is_finite()).unwrap_or(0.0);
    let position = [
        get(0).clamp(0.0, x.region[0]),
        get(1).clamp(0.0, x.region[1]),
    ];
    let mut power = [get(2).max(0.0), get(3).max(0.0), get(4).max(0.0)];
    let sum: f64 = power.iter().sum();
    if sum <= 0.0 {
        let uniform = x.total_power_w / 3.0;
        power = [uniform; 3];
    } else if (sum - x.total_power_w).abs() > 1e-9 * x.total_power_w {
        let scale = x.total_power_w / sum;
        for v in power.iter_mut() {
            *v *= scale;
        }
    }
    NuSolution { position, power }
}

/// Minimum-power QoS allocation at a fixed position: walking weakest to
/// strongest, each of the two weaker users gets exactly the power meeting
/// the rate floor given the interference from all stronger users, and the
/// strongest user keeps the remainder. Returns `None` when the remainder
/// cannot satisfy the strongest user's own floor.
pub fn inner_allocation(x: &NuInstance, q: &[f64; 2]) -> Option<[f64; 3]> {
    let gammas = [x.gamma(q, 0), x.gamma(q, 1), x.gamma(q, 2)];
    let order = sic_order(&gammas);
    let c = (2f64).powf(x.min_rate) - 1.0;
    let p_total = x.total_power_w;
    let mut p = [0.0; 3];
    let mut assigned = 0.0;
    for rank in 0..2 {
        let user = order[rank];
        // rate = log2(1 + g p / (g I + noise)) with I = P - assigned - p,
        // so the floor binds at p = c (P - assigned + noise/g) / (1 + c).
        let need = c * (p_total - assigned + x.noise_w / gammas[user]) / (1.0 + c);
        p[user] = need;
        assigned += need;
    }
    let strongest = order[2];
    let rest = p_total - assigned;
    if rest < 0.0 {
        return None;
    }
    p[strongest] = rest;
    let r_strong = (1.0 + gammas[strongest] * rest / x.noise_w).log2();
    if r_strong < x.min_rate - RATE_TOL {
        return None;
    }
    Some(p)
}

/// Grid resolution of the outer position search.
const GRID: usize = 60;
/// Pattern-search refinement iterations.
const REFINE_ITERS: usize = 20;

/// Near-exact solver: evaluates the closed-form inner allocation on a
/// 60x60 position grid, then refines the best cell with a compass pattern
/// search (step halving from one grid spacing). Errors when no grid
/// position admits a feasible allocation.
pub fn oracle(x: &NuInstance) -> Result<NuSolution> {
    x.validate()?;
    let eval = |q: &[f64; 2]| -> Option<f64> {
        let p = inner_allocation(x, q)?;
        let sol = NuSolution { position: *q, power: p };
        match objective(x, &sol) {
            Ok(v) if v > INFEASIBLE_SENTINEL => Some(v),
            _ => None,
        }
    };

    let mut best: Option<([f64; 2], f64)> = None;
    for i in 0..GRID {
        for j in 0..GRID {
            let q = [
                x.region[0] * i as f64 / (GRID - 1) as f64,
                x.region[1] * j as f64 / (GRID - 1) as f64,
            ];
            if let Some(v) = eval(&q) {
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((q, v));
                }
            }
        }
    }
    let (mut q, mut value) = best.ok_or_else(|| {
        Error::InfeasibleInstance("no uav position satisfies the rate floor".into())
    })?;

    let mut step = x.region[0].max(x.region[1]) / (GRID - 1) as f64;
    for _ in 0..REFINE_ITERS {
        let mut improved = false;
        for (dx, dy) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let cand = [
                (q[0] + dx).clamp(0.0, x.region[0]),
                (q[1] + dy).clamp(0.0, x.region[1]),
            ];
            if let Some(v) = eval(&cand) {
                if v > value {
                    q = cand;
                    value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    let power = inner_allocation(x, &q)
        .expect("refined position was feasible during search");
    Ok(NuSolution { position: q, power })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_instance(seed: u64) -> NuInstance {
        NuInstance::sample(&NuRanges::default(), Domain::In, &mut Rng::new(seed))
    }

    #[test]
    fn single_power_with_zero_floor() {
        let mut x = test_instance(1);
        x.min_rate = 0.0;
        let q = [50.0, 50.0];
        let gammas = [x.gamma(&q, 0), x.gamma(&q, 1), x.gamma(&q, 2)];
        let order = sic_order(&gammas);
        let strongest = order[2];
        let mut power = [0.0; 3];
        power[strongest] = x.total_power_w;
        let sol = NuSolution { position: q, power };
        let got = objective(&x, &sol).unwrap();
        let expected = (1.0 + gammas[strongest] * x.total_power_w / x.noise_w).log2();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn gain_is_maximal_directly_overhead() {
        let x = test_instance(2);
        let above = x.terminals[1];
        let g_above = x.gamma(&above, 1);
        assert!((g_above - x.ref_gain / (x.altitude_m * x.altitude_m)).abs() < 1e-15);
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let q = [rng.uniform_in(0.0, 100.0), rng.uniform_in(0.0, 100.0)];
            assert!(x.gamma(&q, 1) <= g_above + 1e-15);
        }
    }

    #[test]
    fn objective_rejects_out_of_region_or_bad_budget() {
        let x = test_instance(4);
        let bad_pos = NuSolution { position: [-1.0, 5.0], power: [x.total_power_w, 0.0, 0.0] };
        assert!(objective(&x, &bad_pos).is_err());
        let bad_budget = NuSolution { position: [5.0, 5.0], power: [0.1, 0.1, 0.1] };
        assert!(objective(&x, &bad_budget).is_err());
    }

    #[test]
    fn starving_a_user_hits_the_sentinel() {
        let x = test_instance(5);
        let sol = NuSolution { position: [50.0, 50.0], power: [x.total_power_w, 0.0, 0.0] };
        let v = objective(&x, &sol).unwrap();
        assert_eq!(v, INFEASIBLE_SENTINEL);
    }

    #[test]
    fn projection_is_idempotent_and_feasible() {
        let mut rng = Rng::new(6);
        for _ in 0..200 {
            let x = test_instance(rng.next_u64() % 1000);
            let raw: Vec<f64> = (0..5).map(|_| rng.normal() * 60.0).collect();
            let once = project(&x, &raw);
            let flat = [once.position[0], once.position[1], once.power[0], once.power[1], once.power[2]];
            let twice = project(&x, &flat);
            assert_eq!(once, twice);
            // objective() accepts it (possibly as the sentinel).
            objective(&x, &once).unwrap();
        }
    }

    #[test]
    fn inner_allocation_meets_floors_exactly() {
        let mut rng = Rng::new(7);
        for seed in 0..100 {
            let x = test_instance(seed);
            let q = [rng.uniform_in(0.0, 100.0), rng.uniform_in(0.0, 100.0)];
            let Some(p) = inner_allocation(&x, &q) else { continue };
            let gammas = [x.gamma(&q, 0), x.gamma(&q, 1), x.gamma(&q, 2)];
            let order = sic_order(&gammas);
            let rates = rates_ordered(&x, &gammas, &order, &p);
            // The two weaker users sit exactly on the floor.
            for rank in 0..2 {
                assert!(
                    (rates[order[rank]] - x.min_rate).abs() < 1e-9,
                    "rank {rank} rate {} floor {}",
                    rates[order[rank]],
                    x.min_rate
                );
            }
            assert!(rates[order[2]] >= x.min_rate);
            let sum: f64 = p.iter().sum();
            assert!((sum - x.total_power_w).abs() < 1e-9);
        }
    }

    #[test]
    fn inner_allocation_zero_floor_gives_strongest_everything() {
        let mut x = test_instance(8);
        x.min_rate = 0.0;
        let q = [20.0, 70.0];
        let p = inner_allocation(&x, &q).unwrap();
        let gammas = [x.gamma(&q, 0), x.gamma(&q, 1), x.gamma(&q, 2)];
        let order = sic_order(&gammas);
        assert_eq!(p[order[0]], 0.0);
        assert_eq!(p[order[1]], 0.0);
        assert!((p[order[2]] - x.total_power_w).abs() < 1e-12);
    }

    /// Brute force over the power simplex with the given step count.
    pub(crate) fn simplex_grid_best(x: &NuInstance, q: &[f64; 2], steps: usize) -> f64 {
        let mut best = INFEASIBLE_SENTINEL;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let a = x.total_power_w * i as f64 / steps as f64;
                let b = x.total_power_w * j as f64 / steps as f64;
                let c = (x.total_power_w - a - b).max(0.0);
                let sol = NuSolution { position: *q, power: [a, b, c] };
                if let Ok(v) = objective(x, &sol) {
                    if v > best {
                        best = v;
                    }
                }
            }
        }
        best
    }

    #[test]
    fn inner_allocation_dominates_simplex_grid() {
        let mut rng = Rng::new(9);
        let mut checked = 0;
        for seed in 0..50 {
            let x = test_instance(400 + seed);
            let q = [rng.uniform_in(0.0, 100.0), rng.uniform_in(0.0, 100.0)];
            let Some(p) = inner_allocation(&x, &q) else { continue };
            let closed = objective(&x, &NuSolution { position: q, power: p }).unwrap();
            let grid = simplex_grid_best(&x, &q, 200);
            assert!(
                closed >= grid - 1e-3,
                "closed form {closed} below simplex grid {grid} (seed {seed})"
            );
            checked += 1;
        }
        assert!(checked >= 40, "only {checked} feasible pairs checked");
    }

    #[test]
    fn oracle_zero_floor_sits_over_best_terminal() {
        let mut x = test_instance(10);
        x.min_rate = 0.0;
        let sol = oracle(&x).unwrap();
        // All power on one user, position at (essentially) that terminal.
        let dist = x
            .terminals
            .iter()
            .map(|u| {
                let dx = sol.position[0] - u[0];
                let dy = sol.position[1] - u[1];
                (dx * dx + dy * dy).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(dist < 2.0, "oracle position {:?} not near any terminal", sol.position);
    }

    #[test]
    fn oracle_symmetric_terminals_prefers_vertex_over_centroid() {
        let mut x = test_instance(11);
        x.min_rate = 0.0;
        // Equilateral triangle centred in the region.
        x.terminals = [[50.0, 20.0], [20.0, 72.0], [80.0, 72.0]];
        let sol = oracle(&x).unwrap();
        let at_vertex = objective(&x, &sol).unwrap();
        let centroid = [50.0, 54.66];
        let p_c = inner_allocation(&x, &centroid).unwrap();
        let at_centroid =
            objective(&x, &NuSolution { position: centroid, power: p_c }).unwrap();
        assert!(
            at_vertex > at_centroid,
            "vertex {at_vertex} not better than centroid {at_centroid}"
        );
    }

    #[test]
    fn oracle_beats_random_feasible_points() {
        let mut rng = Rng::new(12);
        for seed in 0..3 {
            let x = test_instance(500 + seed);
            let star = objective(&x, &oracle(&x).unwrap()).unwrap();
            for _ in 0..10_000 {
                let raw = [
                    rng.uniform_in(0.0, 100.0),
                    rng.uniform_in(0.0, 100.0),
                    rng.uniform(),
                    rng.uniform(),
                    rng.uniform(),
                ];
                let sol = project(&x, &raw);
                let v = objective(&x, &sol).unwrap();
                assert!(star >= v - 1e-6, "random point beat oracle: {v} vs {star}");
            }
        }
    }

    #[test]
    fn infeasible_instance_is_reported() {
        let mut x = test_instance(13);
        x.min_rate = 50.0; // unreachable floor
        assert!(matches!(oracle(&x), Err(Error::InfeasibleInstance(_))));
    }
}
