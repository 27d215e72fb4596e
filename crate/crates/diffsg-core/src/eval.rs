//! Scoring, best-of-K evaluation, and denoising-trajectory export.
//!
//! `exceed_ratio = f(x, y_pred) / f(x, y*)`: 1.0 is optimal, above 1 is
//! worse for minimization problems, below 1 is worse for maximization.
//! Evaluation draws K samples per instance, projects each onto the
//! feasible set, keeps the best by objective value, and averages the
//! ratios over the dataset. A prediction that violates the NU rate floor
//! even after best-of-K scores 0 (the maximization worst case).
//!
//! Reports split into deterministic fields (written to the report file)
//! and wall-clock timing (kept separate so re-runs reproduce report files
//! bit-for-bit).

use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{gd_solve, mtfnn_solve, GdConfig, MtfnnParams};
use crate::data::{Dataset, NormStats};
use crate::denoiser::DenoiserParams;
use crate::diffusion::{sample, GuidanceConfig, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::problems::{self, nu, Domain, ProblemKind, Sense, SolutionVec};
use crate::rng::Rng;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// A solver under evaluation.
pub enum Method<'a> {
    Diffsg {
        params: &'a DenoiserParams,
        schedule: &'a NoiseSchedule,
        guidance: GuidanceConfig,
        sampler: SamplerConfig,
    },
    Gd {
        config: GdConfig,
    },
    Mtfnn {
        params: &'a MtfnnParams,
    },
    /// Scores the stored labels against themselves (harness sanity check).
    OracleRef,
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Diffsg { .. } => "diffsg",
            Method::Gd { .. } => "gd",
            Method::Mtfnn { .. } => "mtfnn",
            Method::OracleRef => "oracle",
        }
    }
}

/// Evaluation outcome over one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub kind: ProblemKind,
    pub method: String,
    pub domain: Domain,
    pub k: usize,
    pub seed: u64,
    pub instances: usize,
    pub mean_exceed_ratio: f64,
    pub median_exceed_ratio: f64,
    /// Fraction of instances with |ratio - 1| <= 0.01.
    pub frac_within_1pct: f64,
    /// Mean sampler wall clock per generated sample, milliseconds.
    /// Excluded from the deterministic report file.
    #[serde(skip)]
    pub mean_sample_wall_ms: f64,
}

/// `f(x, y_pred) / f(x, y_star)`. Errors when the reference value is zero.
pub fn exceed_ratio(
    x: &problems::ProblemInstance,
    y_pred: &SolutionVec,
    y_star: &SolutionVec,
) -> Result<f64> {
    let f_star = problems::objective(x, y_star)?;
    if f_star == 0.0 || !f_star.is_finite() {
        return Err(Error::Numeric(format!(
            "exceed_ratio undefined: reference objective {f_star}"
        )));
    }
    let f_pred = problems::objective(x, y_pred)?;
    if f_pred == nu::INFEASIBLE_SENTINEL {
        return Ok(0.0);
    }
    Ok(f_pred / f_star)
}

/// Evaluates `method` over every pair of `dataset` with best-of-`k`
/// sampling (k is only meaningful for the diffusion solver; baselines are
/// deterministic single-shot). Instance `i` owns the derived stream
/// `derive(seed, i)`, so reports do not depend on thread count, and sample
/// sets are nested in `k`.
pub fn evaluate(
    method: &Method<'_>,
    dataset: &Dataset,
    stats: &NormStats,
    k: usize,
    seed: u64,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::invalid_argument("k must be >= 1"));
    }
    if dataset.pairs.is_empty() {
        return Err(Error::invalid_argument("evaluation dataset is empty"));
    }
    let sense = dataset.kind.sense();
    let results: Result<Vec<(f64, f64)>> = dataset
        .pairs
        .par_iter()
        .enumerate()
        .map(|(i, (x, y_star))| {
            solve_one(method, dataset.kind, x, y_star, stats, k, seed, i)
                .map_err(|e| Error::Numeric(format!("instance {i}: {e}")))
        })
        .collect();
    let results = results?;

    let mut ratios: Vec<f64> = results.iter().map(|(r, _)| *r).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if ratios.len() % 2 == 1 {
        ratios[ratios.len() / 2]
    } else {
        0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2])
    };
    let within = ratios.iter().filter(|r| (**r - 1.0).abs() <= 0.01).count();
    let mean_wall = results.iter().map(|(_, w)| *w).sum::<f64>() / results.len() as f64;
    let _ = sense;

    Ok(EvalReport {
        format_version: REPORT_FORMAT_VERSION,
        kind: dataset.kind,
        method: method.name().into(),
        domain: dataset.domain,
        k: if matches!(method, Method::Diffsg { .. }) { k } else { 1 },
        seed,
        instances: results.len(),
        mean_exceed_ratio: mean,
        median_exceed_ratio: median,
        frac_within_1pct: within as f64 / results.len() as f64,
        mean_sample_wall_ms: mean_wall,
    })
}

#[allow(clippy::too_many_arguments)]
fn solve_one(
    method: &Method<'_>,
    kind: ProblemKind,
    x: &problems::ProblemInstance,
    y_star: &SolutionVec,
    stats: &NormStats,
    k: usize,
    seed: u64,
    index: usize,
) -> Result<(f64, f64)> {
    let sense = kind.sense();
    let (best, wall_ms) = match method {
        Method::Diffsg { params, schedule, guidance, sampler } => {
            let cond = stats.normalize_condition(&x.condition());
            let mut rng = Rng::derive(seed, index as u64);
            let start = Instant::now();
            let chains =
                sample(params, &cond, schedule, guidance, sampler, &mut rng, k, &mut |_, _, _| {})?;
            let wall = start.elapsed().as_secs_f64() * 1e3 / k as f64;
            let mut best: Option<(f64, SolutionVec)> = None;
            for chain in chains {
                let native = stats.denormalize_solution(&chain);
                let y = problems::project_feasible(x, &native);
                let v = problems::objective(x, &y)?;
                let better = match &best {
                    None => true,
                    Some((bv, _)) => match sense {
                        Sense::Minimize => v < *bv,
                        Sense::Maximize => v > *bv,
                    },
                };
                if better {
                    best = Some((v, y));
                }
            }
            (best.expect("k >= 1").1, wall)
        }
        Method::Gd { config } => {
            let start = Instant::now();
            let result = gd_solve(x, config)?;
            (result.solution, start.elapsed().as_secs_f64() * 1e3)
        }
        Method::Mtfnn { params } => {
            let start = Instant::now();
            let y = mtfnn_solve(params, x, stats)?;
            (y, start.elapsed().as_secs_f64() * 1e3)
        }
        Method::OracleRef => (y_star.clone(), 0.0),
    };
    Ok((exceed_ratio(x, &best, y_star)?, wall_ms))
}

impl EvalReport {
    /// One machine-readable JSON line (deterministic fields only).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }

    /// Human-readable block, including the volatile timing.
    pub fn to_text(&self) -> String {
        format!(
            "{} / {} / {} (K={}, seed={}, n={})\n  mean exceed_ratio   {:.4}\n  median exceed_ratio {:.4}\n  within 1% of oracle {:.1}%\n  sampler wall clock  {:.2} ms/sample\n",
            self.kind,
            self.method,
            self.domain,
            self.k,
            self.seed,
            self.instances,
            self.mean_exceed_ratio,
            self.median_exceed_ratio,
            100.0 * self.frac_within_1pct,
            self.mean_sample_wall_ms
        )
    }
}

/// Appends reports to a machine-readable `.jsonl` file and a human-readable
/// `.txt` file. Timing goes only to the text file.
pub fn write_reports(reports: &[EvalReport], jsonl_path: &Path, text_path: &Path) -> Result<()> {
    let mut jf = BufWriter::new(std::fs::File::create(jsonl_path)?);
    for r in reports {
        jf.write_all(r.to_json_line().as_bytes())?;
        jf.write_all(b"\n")?;
    }
    jf.flush()?;
    let mut tf = BufWriter::new(std::fs::File::create(text_path)?);
    for r in reports {
        tf.write_all(r.to_text().as_bytes())?;
        tf.write_all(b"\n")?;
    }
    tf.flush()?;
    Ok(())
}

/// Lattice resolution for trace export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Lattice points per axis (>= 2).
    pub resolution: usize,
}

/// One denoising-chain step in a trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_index: usize,
    /// Diffusion step reached after this update (max_step for the initial
    /// noise record, 0 for the final sample).
    pub t: usize,
    /// Normalized solution coordinates.
    pub y_norm: Vec<f64>,
    /// The same point in problem-native units (not projected).
    pub y_native: Vec<f64>,
}

/// One objective sample on a feasible-slice lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticePoint {
    /// Which lattice this point belongs to: "simplex" (CO/MSR power plane),
    /// "position" (NU region at the final powers), or "power" (NU power
    /// simplex at the final position).
    pub lattice: String,
    /// Problem-native coordinates of the full solution evaluated.
    pub coords: Vec<f64>,
    /// Objective value; `None` marks rate-floor violations.
    pub value: Option<f64>,
}

/// A trajectory plus objective lattices for offline plotting.
#[derive(Debug, Clone)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub lattice: Vec<LatticePoint>,
    /// The sampler's returned solution, normalized (equals the last step).
    pub final_norm: Vec<f64>,
}

/// Runs one denoising chain and records every intermediate solution plus
/// an objective lattice over the feasible slice. Only 3-dimensional
/// simplex problems and NU have a plottable slice; `msr80` is rejected.
#[allow(clippy::too_many_arguments)]
pub fn export_trace(
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    guidance: &GuidanceConfig,
    sampler: &SamplerConfig,
    x: &problems::ProblemInstance,
    stats: &NormStats,
    grid: GridSpec,
    seed: u64,
) -> Result<Trace> {
    let kind = x.kind();
    if grid.resolution < 2 {
        return Err(Error::invalid_argument("grid resolution must be >= 2"));
    }
    if kind == ProblemKind::Msr80 {
        return Err(Error::invalid_argument(
            "trace lattice needs a 2-D feasible slice; msr80's 80-dim simplex has none",
        ));
    }
    let cond = stats.normalize_condition(&x.condition());
    let mut rng = Rng::derive(seed, 0x7472_6163);
    let mut steps: Vec<TraceStep> = Vec::new();
    let chains = sample(params, &cond, schedule, guidance, sampler, &mut rng, 1, &mut |idx,
                                                                                       t,
                                                                                       y| {
        steps.push(TraceStep {
            step_index: idx,
            t,
            y_norm: y.to_vec(),
            y_native: stats.denormalize_solution(y),
        });
    })?;
    let final_norm = chains.into_iter().next().expect("one chain");

    let mut lattice = Vec::new();
    let res = grid.resolution;
    match x {
        problems::ProblemInstance::Co(_) | problems::ProblemInstance::Msr(_) => {
            let budget = match x {
                problems::ProblemInstance::Msr(m) => m.total_power_w,
                _ => 1.0,
            };
            for i in 0..=res {
                for j in 0..=(res - i) {
                    let a = budget * i as f64 / res as f64;
                    let b = budget * j as f64 / res as f64;
                    let c = budget * (res - i - j) as f64 / res as f64;
                    let y = problems::project_feasible(x, &[a, b, c]);
                    let v = problems::objective(x, &y)?;
                    lattice.push(LatticePoint {
                        lattice: "simplex".into(),
                        coords: vec![a, b, c],
                        value: finite_or_none(v),
                    });
                }
            }
        }
        problems::ProblemInstance::Nu(n) => {
            let last = stats.denormalize_solution(&final_norm);
            let final_sol = problems::project_feasible(x, &last);
            let SolutionVec::Nu { q, p } = &final_sol else { unreachable!() };
            for i in 0..res {
                for j in 0..res {
                    let qx = n.region[0] * i as f64 / (res - 1) as f64;
                    let qy = n.region[1] * j as f64 / (res - 1) as f64;
                    let sol = SolutionVec::Nu { q: [qx, qy], p: *p };
                    let v = problems::objective(x, &sol)?;
                    lattice.push(LatticePoint {
                        lattice: "position".into(),
                        coords: vec![qx, qy, p[0], p[1], p[2]],
                        value: finite_or_none(v),
                    });
                }
            }
            for i in 0..=res {
                for j in 0..=(res - i) {
                    let a = n.total_power_w * i as f64 / res as f64;
                    let b = n.total_power_w * j as f64 / res as f64;
                    let c = n.total_power_w * (res - i - j) as f64 / res as f64;
                    let sol = SolutionVec::Nu { q: *q, p: [a, b, c] };
                    let v = problems::objective(x, &sol)?;
                    lattice.push(LatticePoint {
                        lattice: "power".into(),
                        coords: vec![q[0], q[1], a, b, c],
                        value: finite_or_none(v),
                    });
                }
            }
        }
    }
    Ok(Trace { steps, lattice, final_norm })
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Trace {
    /// Writes the chain to `steps_path` and the lattices to `lattice_path`
    /// as line-delimited JSON.
    pub fn write(&self, steps_path: &Path, lattice_path: &Path) -> Result<()> {
        let mut sf = BufWriter::new(std::fs::File::create(steps_path)?);
        for s in &self.steps {
            serde_json::to_writer(&mut sf, s).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            sf.write_all(b"\n")?;
        }
        sf.flush()?;
        let mut lf = BufWriter::new(std::fs::File::create(lattice_path)?);
        for p in &self.lattice {
            serde_json::to_writer(&mut lf, p).map_err(|e| Error::Io(std::io::Error::other(e)))?;
            lf.write_all(b"\n")?;
        }
        lf.flush()?;
        Ok(())
    }
}
