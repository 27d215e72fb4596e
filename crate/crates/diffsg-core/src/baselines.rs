//! Comparison methods: penalty-based gradient descent and a feedforward
//! regression network, run through the same datasets, projection, and
//! scoring as the diffusion solver.

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::diffusion::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{silu, silu_backward, AdamState, DenseGrad, DenseLayer};
use crate::problems::{self, ProblemInstance, SolutionVec};
use crate::rng::Rng;

/// Settings for the gradient-descent baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub steps: usize,
    pub lr: f64,
    /// Initial constraint multiplier.
    pub multiplier_init: f64,
    /// Multiplier growth factor, applied every `multiplier_every` steps.
    pub multiplier_factor: f64,
    pub multiplier_every: usize,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            steps: 500,
            lr: 0.01,
            multiplier_init: 1.0,
            multiplier_factor: 2.0,
            multiplier_every: 100,
        }
    }
}

/// Output of [`gd_solve`]: the projected solution plus a divergence flag
/// (set when the iterate norm exploded and the last finite point was used).
#[derive(Debug, Clone)]
pub struct GdResult {
    pub solution: SolutionVec,
    pub diverged: bool,
}

/// Penalty-form gradient descent on a differentiable surrogate of the
/// objective, with the constraints folded in as quadratic penalties whose
/// multiplier doubles on a fixed schedule. Descends in box-normalized
/// coordinates (so one learning rate serves meters, watts, and fractions)
/// with central-difference gradients, and projects the final iterate onto
/// the feasible set.
pub fn gd_solve(x: &ProblemInstance, config: &GdConfig) -> Result<GdResult> {
    x.validate()?;
    let (lo, hi) = x.solution_box();
    let dim = lo.len();
    let to_native = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(i, z)| lo[i] + 0.5 * (z + 1.0) * (hi[i] - lo[i]))
            .collect()
    };

    // Start from the center of the feasible box.
    let mut v = vec![0.0; dim];
    let mut multiplier = config.multiplier_init;
    let mut diverged = false;
    let h = 1e-6;

    let mut grad = vec![0.0; dim];
    for step in 0..config.steps {
        if step > 0 && step % config.multiplier_every == 0 {
            multiplier *= config.multiplier_factor;
        }
        for i in 0..dim {
            let orig = v[i];
            v[i] = orig + h;
            let up = surrogate(x, &to_native(&v), multiplier);
            v[i] = orig - h;
            let down = surrogate(x, &to_native(&v), multiplier);
            v[i] = orig;
            grad[i] = (up - down) / (2.0 * h);
        }
        for i in 0..dim {
            v[i] -= config.lr * grad[i];
        }
        let norm = v.iter().map(|z| z * z).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > 1e6 {
            diverged = true;
            for z in v.iter_mut() {
                if !z.is_finite() {
                    *z = 0.0;
                }
            }
            break;
        }
    }
    let solution = problems::project_feasible(x, &to_native(&v));
    Ok(GdResult { solution, diverged })
}

/// Penalized surrogate in native coordinates (to minimize).
fn surrogate(x: &ProblemInstance, v: &[f64], multiplier: f64) -> f64 {
    match x {
        ProblemInstance::Msr(m) => {
            let mut rate = 0.0;
            let mut penalty = 0.0;
            let mut sum = 0.0;
            for (i, &p) in v.iter().enumerate() {
                rate += (1.0 + m.gain[i] * p.max(0.0) / m.noise_w).log2();
                penalty += p.min(0.0).powi(2);
                sum += p;
            }
            let budget = (sum - m.total_power_w).powi(2);
            -rate + multiplier * (penalty + budget / m.total_power_w.powi(2))
        }
        ProblemInstance::Co(c) => {
            // Split weighting: the continuous allocation weighs the
            // offloading cost, its complement the local cost.
            let mut cost = 0.0;
            let mut penalty = 0.0;
            let mut sum = 0.0;
            for i in 0..3 {
                let w = v[i].clamp(0.0, 1.0);
                let y_safe = v[i].clamp(1e-3, 1.0);
                let cycles = c.cycles_per_byte * c.task_bytes[i];
                let r = c.bandwidth_hz * (1.0 + c.gain[i] * c.tx_power_w / c.noise_w).log2();
                let bits = 8.0 * c.task_bytes[i];
                let edge = c.latency_weight * (bits / r + cycles / (y_safe * c.edge_cpu_hz))
                    + (1.0 - c.latency_weight) * c.tx_power_w * bits / r;
                let local = c.latency_weight * cycles / c.local_cpu_hz[i]
                    + (1.0 - c.latency_weight)
                        * c.energy_coef
                        * c.local_cpu_hz[i]
                        * c.local_cpu_hz[i]
                        * cycles;
                cost += w * edge + (1.0 - w) * local;
                penalty += v[i].min(0.0).powi(2) + (v[i] - 1.0).max(0.0).powi(2);
                sum += v[i].clamp(0.0, 1.0);
            }
            cost + multiplier * (penalty + (sum - 1.0).powi(2))
        }
        ProblemInstance::Nu(n) => {
            let q = [v[0].clamp(0.0, n.region[0]), v[1].clamp(0.0, n.region[1])];
            let p = [v[2], v[3], v[4]];
            let mut penalty = (v[0] - q[0]).powi(2) + (v[1] - q[1]).powi(2);
            let mut sum = 0.0;
            for &pw in &p {
                penalty += pw.min(0.0).powi(2);
                sum += pw;
            }
            penalty += ((sum - n.total_power_w) / n.total_power_w).powi(2);
            let gammas = [n.gamma(&q, 0), n.gamma(&q, 1), n.gamma(&q, 2)];
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| gammas[a].partial_cmp(&gammas[b]).unwrap());
            let mut rate_sum = 0.0;
            for rank in 0..3 {
                let user = order[rank];
                let interference: f64 =
                    (rank + 1..3).map(|r| p[order[r]].max(0.0)).sum();
                let g = gammas[user];
                let sinr = g * p[user].max(0.0) / (g * interference + n.noise_w);
                let rate = (1.0 + sinr).log2();
                rate_sum += rate;
                penalty += (n.min_rate - rate).max(0.0).powi(2);
            }
            -rate_sum + multiplier * penalty
        }
    }
}

/// Regression-network shape: condition in, solution out, fixed-width
/// hidden stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MtfnnConfig {
    pub condition_dim: usize,
    pub solution_dim: usize,
    pub hidden: usize,
    pub depth: usize,
}

impl MtfnnConfig {
    /// Matched-substrate default: width 64, three hidden layers.
    pub fn standard(condition_dim: usize, solution_dim: usize) -> Self {
        MtfnnConfig { condition_dim, solution_dim, hidden: 64, depth: 3 }
    }
}

/// The discriminative baseline: a plain feedforward regressor trained with
/// MSE against the oracle solutions in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MtfnnParams {
    config: MtfnnConfig,
    layers: Vec<DenseLayer>,
}

impl MtfnnParams {
    pub fn init(config: MtfnnConfig, rng: &mut Rng) -> Result<Self> {
        if config.depth == 0 || config.hidden == 0 {
            return Err(Error::invalid_argument("mtfnn needs depth and hidden >= 1"));
        }
        let mut layers = Vec::with_capacity(config.depth + 1);
        let mut in_dim = config.condition_dim;
        for _ in 0..config.depth {
            layers.push(DenseLayer::init(in_dim, config.hidden, rng)?);
            in_dim = config.hidden;
        }
        layers.push(DenseLayer::init(in_dim, config.solution_dim, rng)?);
        Ok(MtfnnParams { config, layers })
    }

    pub fn config(&self) -> &MtfnnConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Deterministic prediction in normalized coordinates.
    pub fn predict(&self, x_norm: &[f64]) -> Result<Vec<f64>> {
        let mut cur = x_norm.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(&cur)?;
            if i + 1 < self.layers.len() {
                let mut act = vec![0.0; out.len()];
                silu(&out, &mut act);
                out = act;
            }
            cur = out;
        }
        Ok(cur)
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer.{i}.weight"), vec![l.out_dim(), l.in_dim()], &l.weight));
            out.push((format!("layer.{i}.bias"), vec![l.out_dim()], &l.bias));
        }
        out
    }

    pub fn from_named_arrays(
        config: MtfnnConfig,
        mut lookup: impl FnMut(&str) -> Option<Vec<f64>>,
    ) -> Result<Self> {
        let mut params = MtfnnParams::init(config, &mut Rng::new(0))?;
        let names: Vec<(String, usize)> =
            params.named_arrays().iter().map(|(n, _, d)| (n.clone(), d.len())).collect();
        let mut blocks = params.blocks_mut();
        for (idx, (name, want)) in names.iter().enumerate() {
            let data = lookup(name)
                .ok_or_else(|| Error::invalid_argument(format!("checkpoint missing {name}")))?;
            if data.len() != *want {
                return Err(Error::invalid_argument(format!(
                    "checkpoint array {name} has {} values, expected {want}",
                    data.len()
                )));
            }
            blocks[idx].copy_from_slice(&data);
        }
        drop(blocks);
        Ok(params)
    }
}

/// Trains the regressor with the same optimizer settings and epoch budget
/// as the diffusion model. Returns per-epoch mean MSE.
pub fn mtfnn_train(
    params: &mut MtfnnParams,
    pairs: &[(Vec<f64>, Vec<f64>)],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::invalid_argument("mtfnn training set is empty"));
    }
    let mut rng = Rng::derive(config.seed, 0x6d74_666e);
    let mut adam = AdamState::new(params.param_count(), config.adam);
    let depth = params.layers.len();
    let mut grads: Vec<DenseGrad> = params.layers.iter().map(DenseGrad::zeros_like).collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            for g in grads.iter_mut() {
                g.fill_zero();
            }
            let inv = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &idx in chunk {
                let (x, target) = &pairs[idx];
                // Forward with caches.
                let mut pre: Vec<Vec<f64>> = Vec::with_capacity(depth);
                let mut post: Vec<Vec<f64>> = Vec::with_capacity(depth);
                let mut cur = x.clone();
                for (i, layer) in params.layers.iter().enumerate() {
                    let z = layer.forward(&cur)?;
                    if i + 1 < depth {
                        let mut act = vec![0.0; z.len()];
                        silu(&z, &mut act);
                        pre.push(z);
                        post.push(act.clone());
                        cur = act;
                    } else {
                        pre.push(z.clone());
                        post.push(z.clone());
                        cur = z;
                    }
                }
                let mut upstream: Vec<f64> = cur
                    .iter()
                    .zip(target.iter())
                    .map(|(o, t)| 2.0 * (o - t) * inv)
                    .collect();
                loss += cur
                    .iter()
                    .zip(target.iter())
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum::<f64>()
                    * inv;
                // Backward.
                for i in (0..depth).rev() {
                    let input = if i == 0 { x } else { &post[i - 1] };
                    if i + 1 < depth {
                        let mut dz = vec![0.0; upstream.len()];
                        silu_backward(&pre[i], &upstream, &mut dz);
                        upstream = dz;
                    }
                    let mut d_input = vec![0.0; params.layers[i].in_dim()];
                    params.layers[i].backward_into(input, &upstream, &mut grads[i], &mut d_input)?;
                    upstream = d_input;
                }
            }
            let grad_blocks: Vec<&[f64]> = grads
                .iter()
                .flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
                .collect();
            adam.step_blocks(&mut params.blocks_mut(), &grad_blocks)?;
            epoch_loss += loss;
            batches += 1;
        }
        log.push(epoch_loss / batches as f64);
    }
    Ok(log)
}

/// Convenience: predict, denormalize, and project one instance.
pub fn mtfnn_solve(
    params: &MtfnnParams,
    x: &ProblemInstance,
    stats: &NormStats,
) -> Result<SolutionVec> {
    let x_norm = stats.normalize_condition(&x.condition());
    let y_norm = params.predict(&x_norm)?;
    let y_native = stats.denormalize_solution(&y_norm);
    Ok(problems::project_feasible(x, &y_native))
}
