//! The case optimization problems: objectives, feasibility projections,
//! instance samplers, and exact/brute-force oracles.
//!
//! Three problem families, four configurations:
//! - `co`: computation offloading, 3 users (mixed-integer, minimize cost)
//! - `msr3` / `msr80`: sum-rate power allocation over 3 or 80 channels
//!   (convex, maximize rate)
//! - `nu`: NOMA-UAV placement plus power allocation (hierarchical
//!   non-convex, maximize rate)

pub mod co;
pub mod msr;
pub mod nu;
pub mod ranges;

use serde::{Deserialize, Serialize};

pub use co::CoInstance;
pub use msr::MsrInstance;
pub use nu::{NuInstance, NuSolution};
pub use ranges::{Domain, ProblemRanges};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Problem configuration selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Co,
    Msr3,
    Msr80,
    Nu,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] =
        [ProblemKind::Co, ProblemKind::Msr3, ProblemKind::Msr80, ProblemKind::Nu];

    /// Decision-vector dimension N.
    pub fn solution_dim(&self) -> usize {
        match self {
            ProblemKind::Co => 3,
            ProblemKind::Msr3 => 3,
            ProblemKind::Msr80 => 80,
            ProblemKind::Nu => 5,
        }
    }

    /// Condition-vector dimension C.
    pub fn condition_dim(&self) -> usize {
        match self {
            ProblemKind::Co => 9,
            ProblemKind::Msr3 => 4,
            ProblemKind::Msr80 => 81,
            ProblemKind::Nu => 7,
        }
    }

    pub fn sense(&self) -> Sense {
        match self {
            ProblemKind::Co => Sense::Minimize,
            _ => Sense::Maximize,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "co" => Ok(ProblemKind::Co),
            "msr3" => Ok(ProblemKind::Msr3),
            "msr80" => Ok(ProblemKind::Msr80),
            "nu" => Ok(ProblemKind::Nu),
            other => Err(Error::invalid_argument(format!(
                "unknown problem kind {other:?} (expected co|msr3|msr80|nu)"
            ))),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ProblemKind::Co => "co",
            ProblemKind::Msr3 => "msr3",
            ProblemKind::Msr80 => "msr80",
            ProblemKind::Nu => "nu",
        };
        write!(f, "{s}")
    }
}

/// Optimization direction of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// True when `a` is at least as good as `b` under this sense.
    pub fn at_least_as_good(&self, a: f64, b: f64) -> bool {
        match self {
            Sense::Minimize => a <= b,
            Sense::Maximize => a >= b,
        }
    }
}

/// The condition vector of any case problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemInstance {
    Co(CoInstance),
    Msr(MsrInstance),
    Nu(NuInstance),
}

impl ProblemInstance {
    pub fn kind(&self) -> ProblemKind {
        match self {
            ProblemInstance::Co(_) => ProblemKind::Co,
            ProblemInstance::Msr(x) if x.gain.len() == 3 => ProblemKind::Msr3,
            ProblemInstance::Msr(_) => ProblemKind::Msr80,
            ProblemInstance::Nu(_) => ProblemKind::Nu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ProblemInstance::Co(x) => x.validate(),
            ProblemInstance::Msr(x) => x.validate(),
            ProblemInstance::Nu(x) => x.validate(),
        }
    }

    /// Condition features in problem-native units.
    pub fn condition(&self) -> Vec<f64> {
        match self {
            ProblemInstance::Co(x) => x.condition(),
            ProblemInstance::Msr(x) => x.condition(),
            ProblemInstance::Nu(x) => x.condition(),
        }
    }

    /// Per-dimension feasible box `(lo, hi)` of the solution vector, used
    /// to build normalization maps.
    pub fn solution_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ProblemInstance::Co(_) => (vec![0.0; 3], vec![1.0; 3]),
            ProblemInstance::Msr(x) => {
                let k = x.gain.len();
                (vec![0.0; k], vec![x.total_power_w; k])
            }
            ProblemInstance::Nu(x) => (
                vec![0.0; 5],
                vec![x.region[0], x.region[1], x.total_power_w, x.total_power_w, x.total_power_w],
            ),
        }
    }
}

/// A decision vector in problem-native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SolutionVec {
    /// Edge-resource fractions; user `i` offloads iff `y[i] >= 0.1`.
    Co { y: [f64; 3] },
    /// Per-channel powers summing to the budget.
    Msr { p: Vec<f64> },
    /// UAV position and per-terminal powers summing to the budget.
    Nu { q: [f64; 2], p: [f64; 3] },
}

impl SolutionVec {
    /// Flattened problem-native coordinates (the denoiser's output layout).
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            SolutionVec::Co { y } => y.to_vec(),
            SolutionVec::Msr { p } => p.clone(),
            SolutionVec::Nu { q, p } => {
                let mut out = Vec::with_capacity(5);
                out.extend_from_slice(q);
                out.extend_from_slice(p);
                out
            }
        }
    }
}

/// Objective value of a feasible solution; sense depends on the kind.
/// NU returns [`nu::INFEASIBLE_SENTINEL`] for rate-floor violations.
pub fn objective(x: &ProblemInstance, y: &SolutionVec) -> Result<f64> {
    match (x, y) {
        (ProblemInstance::Co(x), SolutionVec::Co { y }) => co::objective(x, y),
        (ProblemInstance::Msr(x), SolutionVec::Msr { p }) => msr::objective(x, p),
        (ProblemInstance::Nu(x), SolutionVec::Nu { q, p }) => {
            nu::objective(x, &NuSolution { position: *q, power: *p })
        }
        _ => Err(Error::invalid_argument("solution kind does not match instance kind")),
    }
}

/// Maps raw problem-native coordinates onto the feasible set. Total: any
/// finite (or non-finite) input yields a feasible solution.
pub fn project_feasible(x: &ProblemInstance, raw: &[f64]) -> SolutionVec {
    match x {
        ProblemInstance::Co(_) => SolutionVec::Co { y: co::project(raw) },
        ProblemInstance::Msr(m) => SolutionVec::Msr { p: msr::project(m, raw) },
        ProblemInstance::Nu(n) => {
            let sol = nu::project(n, raw);
            SolutionVec::Nu { q: sol.position, p: sol.power }
        }
    }
}

/// Ground-truth solver dispatch.
pub fn oracle(x: &ProblemInstance) -> Result<SolutionVec> {
    match x {
        ProblemInstance::Co(x) => Ok(SolutionVec::Co { y: co::oracle(x)? }),
        ProblemInstance::Msr(x) => Ok(SolutionVec::Msr { p: msr::oracle(x)? }),
        ProblemInstance::Nu(x) => {
            let sol = nu::oracle(x)?;
            Ok(SolutionVec::Nu { q: sol.position, p: sol.power })
        }
    }
}

/// Draws one instance of `kind` from the configured ranges.
pub fn sample_instance(
    kind: ProblemKind,
    domain: Domain,
    ranges: &ProblemRanges,
    rng: &mut Rng,
) -> ProblemInstance {
    match kind {
        ProblemKind::Co => ProblemInstance::Co(CoInstance::sample(&ranges.co, domain, rng)),
        ProblemKind::Msr3 => ProblemInstance::Msr(MsrInstance::sample(3, &ranges.msr, domain, rng)),
        ProblemKind::Msr80 => {
            ProblemInstance::Msr(MsrInstance::sample(80, &ranges.msr, domain, rng))
        }
        ProblemKind::Nu => ProblemInstance::Nu(NuInstance::sample(&ranges.nu, domain, rng)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_instances_validate_and_match_dims() {
        let ranges = ProblemRanges::default();
        let mut rng = Rng::new(1);
        for kind in ProblemKind::ALL {
            for domain in [Domain::In, Domain::Ood] {
                for _ in 0..50 {
                    let x = sample_instance(kind, domain, &ranges, &mut rng);
                    x.validate().unwrap();
                    assert_eq!(x.kind(), kind);
                    assert_eq!(x.condition().len(), kind.condition_dim());
                    let (lo, hi) = x.solution_box();
                    assert_eq!(lo.len(), kind.solution_dim());
                    assert!(lo.iter().zip(hi.iter()).all(|(a, b)| a < b));
                }
            }
        }
    }

    #[test]
    fn co_mean_task_size_matches_target() {
        // In-domain task sizes average 2.5e5 bytes (1% tolerance over 1e5
        // draws); the OOD shift moves the mean to 3e5.
        let ranges = ProblemRanges::default();
        let mut rng = Rng::new(2);
        let mut mean_in = 0.0;
        let mut mean_ood = 0.0;
        let draws = 100_000;
        for _ in 0..draws {
            let x = CoInstance::sample(&ranges.co, Domain::In, &mut rng);
            mean_in += x.task_bytes.iter().sum::<f64>() / 3.0;
            let x = CoInstance::sample(&ranges.co, Domain::Ood, &mut rng);
            mean_ood += x.task_bytes.iter().sum::<f64>() / 3.0;
        }
        mean_in /= draws as f64;
        mean_ood /= draws as f64;
        assert!((mean_in - 2.5e5).abs() < 0.01 * 2.5e5, "in-domain mean {mean_in}");
        assert!((mean_ood - 3.0e5).abs() < 0.01 * 3.0e5, "ood mean {mean_ood}");
    }

    #[test]
    fn ood_msr_power_reaches_twenty_watts() {
        let ranges = ProblemRanges::default();
        let mut rng = Rng::new(3);
        let mut max_p = 0.0f64;
        for _ in 0..10_000 {
            let x = MsrInstance::sample(3, &ranges.msr, Domain::Ood, &mut rng);
            max_p = max_p.max(x.total_power_w);
            assert!(x.total_power_w > ranges.msr.power_w);
        }
        assert!(max_p > 19.9, "ood power never approached 20 W: max {max_p}");
    }

    #[test]
    fn ood_ranges_strictly_exceed_in_ranges_on_shifted_features() {
        let ranges = ProblemRanges::default();
        let mut rng = Rng::new(4);
        let mut max_in = [0.0f64; 3]; // co task, co cpu, msr gain
        let mut max_ood = [0.0f64; 3];
        for _ in 0..20_000 {
            let co_in = CoInstance::sample(&ranges.co, Domain::In, &mut rng);
            let co_ood = CoInstance::sample(&ranges.co, Domain::Ood, &mut rng);
            let m_in = MsrInstance::sample(3, &ranges.msr, Domain::In, &mut rng);
            let m_ood = MsrInstance::sample(3, &ranges.msr, Domain::Ood, &mut rng);
            max_in[0] = max_in[0].max(co_in.task_bytes[0]);
            max_ood[0] = max_ood[0].max(co_ood.task_bytes[0]);
            max_in[1] = max_in[1].max(co_in.local_cpu_hz[0]);
            max_ood[1] = max_ood[1].max(co_ood.local_cpu_hz[0]);
            max_in[2] = max_in[2].max(m_in.gain[0]);
            max_ood[2] = max_ood[2].max(m_ood.gain[0]);
        }
        for i in 0..3 {
            assert!(max_ood[i] > max_in[i], "feature {i}: ood {} <= in {}", max_ood[i], max_in[i]);
        }
    }

    #[test]
    fn oracle_dispatch_produces_feasible_optima() {
        let ranges = ProblemRanges::default();
        let mut rng = Rng::new(5);
        for kind in ProblemKind::ALL {
            let x = sample_instance(kind, Domain::In, &ranges, &mut rng);
            let y = oracle(&x).unwrap();
            let v = objective(&x, &y).unwrap();
            assert!(v.is_finite(), "{kind}: oracle objective {v}");
            // Projection leaves the oracle solution unchanged.
            let again = project_feasible(&x, &y.to_flat());
            let v2 = objective(&x, &again).unwrap();
            assert!((v - v2).abs() < 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn serde_instance_roundtrip() {
        let ranges = ProblemRanges::default();
        let mut rng = Rng::new(6);
        for kind in ProblemKind::ALL {
            let x = sample_instance(kind, Domain::In, &ranges, &mut rng);
            let json = serde_json::to_string(&x).unwrap();
            let back: ProblemInstance = serde_json::from_str(&json).unwrap();
            assert_eq!(x, back);
            let y = oracle(&x).unwrap();
            let json = serde_json::to_string(&y).unwrap();
            let back: SolutionVec = serde_json::from_str(&json).unwrap();
            assert_eq!(y, back);
        }
    }
}
