//! Sum-rate maximization: split a power budget over K orthogonal channels
//! to maximize the total Shannon rate. Convex; solved exactly by
//! water-filling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ranges::{Domain, MsrRanges};
use crate::rng::Rng;

const SUM_TOL: f64 = 1e-6;

/// One problem instance: per-channel gains plus the power budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsrInstance {
    pub gain: Vec<f64>,
    pub total_power_w: f64,
    pub noise_w: f64,
}

impl MsrInstance {
    pub fn validate(&self) -> Result<()> {
        if self.gain.is_empty() {
            return Err(Error::invalid_argument("msr instance needs at least one channel"));
        }
        for g in &self.gain {
            if !(g.is_finite() && *g > 0.0) {
                return Err(Error::invalid_argument(format!("msr gain {g} not positive")));
            }
        }
        if !(self.total_power_w > 0.0 && self.noise_w > 0.0) {
            return Err(Error::invalid_argument("msr power and noise must be positive"));
        }
        Ok(())
    }

    pub fn sample(channels: usize, ranges: &MsrRanges, domain: Domain, rng: &mut Rng) -> Self {
        let (g_lo, g_hi) = match domain {
            Domain::In => ranges.gain,
            Domain::Ood => ranges.gain_ood,
        };
        let gain = (0..channels).map(|_| rng.uniform_in(g_lo, g_hi)).collect();
        let total_power_w = match domain {
            Domain::In => ranges.power_w,
            Domain::Ood => rng.uniform_in(ranges.power_ood_w.0, ranges.power_ood_w.1),
        };
        MsrInstance { gain, total_power_w, noise_w: ranges.noise_w }
    }

    /// Condition features: gains followed by the power budget.
    pub fn condition(&self) -> Vec<f64> {
        let mut out = self.gain.clone();
        out.push(self.total_power_w);
        out
    }
}

fn check_feasible(x: &MsrInstance, p: &[f64]) -> Result<()> {
    if p.len() != x.gain.len() {
        return Err(Error::Infeasible(format!(
            "msr allocation has {} entries for {} channels",
            p.len(),
            x.gain.len()
        )));
    }
    let mut sum = 0.0;
    for v in p {
        if !v.is_finite() || *v < -SUM_TOL {
            return Err(Error::Infeasible(format!("msr power {v} negative")));
        }
        sum += v.max(0.0);
    }
    if (sum - x.total_power_w).abs() > SUM_TOL * x.total_power_w.max(1.0) {
        return Err(Error::Infeasible(format!(
            "msr powers sum to {sum}, budget {}",
            x.total_power_w
        )));
    }
    Ok(())
}

/// Total rate `sum_i log2(1 + g_i p_i / noise)` in bits/s/Hz (higher is
/// better).
pub fn objective(x: &MsrInstance, p: &[f64]) -> Result<f64> {
    check_feasible(x, p)?;
    Ok(p.iter()
        .zip(x.gain.iter())
        .map(|(p_i, g_i)| (1.0 + g_i * p_i.max(0.0) / x.noise_w).log2())
        .sum())
}

/// Clamps negatives to zero and rescales to the power budget (uniform
/// split when everything clamps to zero). Total and exactly idempotent:
/// a sum already within 1e-9 of the budget is kept bit-for-bit instead of
/// being rescaled by `1 +/- ulp`.
pub fn project(x: &MsrInstance, raw: &[f64]) -> Vec<f64> {
    let k = x.gain.len();
    let mut p: Vec<f64> = (0..k)
        .map(|i| {
            let v = raw.get(i).copied().unwrap_or(0.0);
            if v.is_finite() {
                v.max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let sum: f64 = p.iter().sum();
    if sum <= 0.0 {
        let uniform = x.total_power_w / k as f64;
        return vec![uniform; k];
    }
    if (sum - x.total_power_w).abs() <= 1e-9 * x.total_power_w {
        return p;
    }
    let scale = x.total_power_w / sum;
    for v in p.iter_mut() {
        *v *= scale;
    }
    p
}

/// Exact water-filling: `p_i = max(0, mu - noise/g_i)` with the level
/// `mu` found by bisection until the budget matches to `1e-9 * P`.
pub fn oracle(x: &MsrInstance) -> Result<Vec<f64>> {
    x.validate()?;
    let inv = |g: f64| x.noise_w / g;
    let allocated = |mu: f64| -> f64 { x.gain.iter().map(|&g| (mu - inv(g)).max(0.0)).sum() };
    let mut lo = x.gain.iter().map(|&g| inv(g)).fold(f64::INFINITY, f64::min);
    let mut hi = x.gain.iter().map(|&g| inv(g)).fold(0.0f64, f64::max) + x.total_power_w;
    let target = x.total_power_w;
    let tol = 1e-9 * target;
    let mut converged = false;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let got = allocated(mid);
        if (got - target).abs() <= tol {
            lo = mid;
            hi = mid;
            converged = true;
            break;
        }
        if got < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric("water-filling bisection did not converge".into()));
    }
    let mu = 0.5 * (lo + hi);
    let mut p: Vec<f64> = x.gain.iter().map(|&g| (mu - inv(g)).max(0.0)).collect();
    // Exact rescale removes the residual bisection error.
    let sum: f64 = p.iter().sum();
    if sum > 0.0 {
        let scale = target / sum;
        for v in p.iter_mut() {
            *v *= scale;
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(gain: Vec<f64>, power: f64) -> MsrInstance {
        MsrInstance { gain, total_power_w: power, noise_w: 1.0 }
    }

    #[test]
    fn objective_examples() {
        let x = instance(vec![1.0, 1.0], 2.0);
        assert!((objective(&x, &[1.0, 1.0]).unwrap() - 2.0).abs() < 1e-12);
        let x = instance(vec![0.7, 0.3, 0.5], 10.0);
        let r = objective(&x, &[10.0, 0.0, 0.0]).unwrap();
        assert!((r - (1.0f64 + 7.0).log2()).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_duplicate_formula() {
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let x = MsrInstance::sample(3, &MsrRanges::default(), Domain::In, &mut rng);
            let raw: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
            let p = project(&x, &raw);
            let got = objective(&x, &p).unwrap();
            let expected: f64 = (0..3)
                .map(|i| (1.0 + x.gain[i] * p[i] / x.noise_w).ln() / std::f64::consts::LN_2)
                .sum();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_rejects_negative_and_offbudget() {
        let x = instance(vec![1.0, 1.0], 2.0);
        assert!(objective(&x, &[-0.5, 2.5]).is_err());
        assert!(objective(&x, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn projection_examples() {
        let x = instance(vec![1.0, 1.0], 10.0);
        assert_eq!(project(&x, &[2.0, 2.0]), vec![5.0, 5.0]);
        let p = project(&x, &[-1.0, 0.0]);
        assert_eq!(p, vec![5.0, 5.0]); // all-zero after clamping -> uniform
        let q = project(&x, &[3.0, 7.0]);
        assert_eq!(q, vec![3.0, 7.0]); // already feasible -> unchanged
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let x = MsrInstance::sample(4, &MsrRanges::default(), Domain::In, &mut rng);
            let raw: Vec<f64> = (0..4).map(|_| rng.normal() * 3.0).collect();
            let once = project(&x, &raw);
            let twice = project(&x, &once);
            for (a, b) in once.iter().zip(twice.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            check_feasible(&x, &once).unwrap();
        }
    }

    #[test]
    fn oracle_equal_gains_splits_evenly() {
        let x = instance(vec![0.8; 4], 10.0);
        let p = oracle(&x).unwrap();
        for v in &p {
            assert!((v - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_starves_hopeless_channel() {
        let x = instance(vec![1.0, 1e-9], 0.5);
        let p = oracle(&x).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9, "{p:?}");
        assert!(p[1] < 1e-12);
    }

    /// Simplex grid over three channels with the given step count.
    pub(crate) fn grid_best(x: &MsrInstance, steps: usize) -> f64 {
        assert_eq!(x.gain.len(), 3);
        let p_total = x.total_power_w;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let a = p_total * i as f64 / steps as f64;
                let b = p_total * j as f64 / steps as f64;
                let c = (p_total - a - b).max(0.0);
                let r = objective(x, &[a, b, c]).unwrap();
                if r > best {
                    best = r;
                }
            }
        }
        best
    }

    #[test]
    fn oracle_dominates_grid_and_random_points() {
        let mut rng = Rng::new(6);
        for _ in 0..20 {
            let x = MsrInstance::sample(3, &MsrRanges::default(), Domain::In, &mut rng);
            let star = objective(&x, &oracle(&x).unwrap()).unwrap();
            let grid = grid_best(&x, 200);
            assert!(star >= grid - 1e-6, "oracle {star} below grid {grid}");
            for _ in 0..500 {
                let raw: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
                let r = objective(&x, &project(&x, &raw)).unwrap();
                assert!(star >= r - 1e-6);
            }
        }
    }

    #[test]
    fn oracle_satisfies_kkt() {
        // Active channels share one marginal value g/(noise + g p); inactive
        // channels have a smaller marginal at p = 0.
        let mut rng = Rng::new(7);
        for _ in 0..50 {
            let mut x = MsrInstance::sample(3, &MsrRanges::default(), Domain::In, &mut rng);
            // Widen the gain spread so some channels go inactive.
            x.gain[0] *= 0.01;
            x.total_power_w = 0.5;
            let p = oracle(&x).unwrap();
            let marginals: Vec<f64> = (0..3)
                .map(|i| x.gain[i] / (x.noise_w + x.gain[i] * p[i]))
                .collect();
            let active: Vec<f64> =
                (0..3).filter(|&i| p[i] > 1e-9).map(|i| marginals[i]).collect();
            assert!(!active.is_empty());
            let level = active[0];
            for m in &active {
                assert!((m - level).abs() < 1e-6 * level, "marginals {marginals:?}");
            }
            for i in 0..3 {
                if p[i] <= 1e-9 {
                    assert!(marginals[i] <= level + 1e-6 * level);
                }
            }
        }
    }

    #[test]
    fn oracle_scales_to_eighty_channels() {
        let mut rng = Rng::new(8);
        let x = MsrInstance::sample(80, &MsrRanges::default(), Domain::In, &mut rng);
        let p = oracle(&x).unwrap();
        assert_eq!(p.len(), 80);
        let sum: f64 = p.iter().sum();
        assert!((sum - x.total_power_w).abs() < 1e-9 * x.total_power_w);
        // Better channels never get less power.
        let mut order: Vec<usize> = (0..80).collect();
        order.sort_by(|&a, &b| x.gain[a].partial_cmp(&x.gain[b]).unwrap());
        for w in order.windows(2) {
            assert!(p[w[0]] <= p[w[1]] + 1e-9);
        }
    }
}
