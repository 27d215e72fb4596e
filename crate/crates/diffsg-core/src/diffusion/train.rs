//! Forward noising and the denoising training objective.

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserGrads, DenoiserParams, Workspace};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::rng::Rng;

/// Classifier-free guidance settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Condition strength at sampling time.
    pub omega: f64,
    /// Probability of dropping the condition during training.
    pub p_uncond: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { omega: 500.0, p_uncond: 0.1 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::invalid_argument(format!("omega {} must be >= 0", self.omega)));
        }
        if !(0.0..1.0).contains(&self.p_uncond) {
            return Err(Error::invalid_argument(format!(
                "p_uncond {} outside [0, 1)",
                self.p_uncond
            )));
        }
        Ok(())
    }
}

/// Forward noising: `y_t = sqrt(alpha_bar_t) y0 + sqrt(1 - alpha_bar_t) eps`.
pub fn q_sample(y0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if !schedule.contains_step(t) {
        return Err(Error::invalid_argument(format!(
            "q_sample step {t} outside [1, {}]",
            schedule.max_step()
        )));
    }
    if y0.len() != eps.len() {
        return Err(Error::invalid_argument("q_sample: y0 and eps lengths differ"));
    }
    let ab = schedule.alpha_bar(t);
    let signal = ab.sqrt();
    let noise = (1.0 - ab).sqrt();
    Ok(y0.iter().zip(eps.iter()).map(|(y, e)| signal * y + noise * e).collect())
}

/// One training batch: draws a timestep and noise per sample, drops the
/// condition with probability `p_uncond`, and accumulates gradients of
/// `mean_i ||eps_i - eps_theta(y_t_i, t_i, x_i)||^2` into `grads`
/// (zeroed first). Returns the batch loss.
pub fn training_step(
    params: &DenoiserParams,
    batch: &[(&[f64], &[f64])],
    schedule: &NoiseSchedule,
    p_uncond: f64,
    rng: &mut Rng,
    ws: &mut Workspace,
    grads: &mut DenoiserGrads,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid_argument("training batch is empty"));
    }
    let n = params.config().solution_dim;
    let t_max = schedule.max_step();
    grads.fill_zero();
    let mut eps = vec![0.0; n];
    let mut upstream = vec![0.0; n];
    let inv_batch = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (cond, y0) in batch {
        let t = 1 + rng.below(t_max as u64) as usize;
        rng.fill_normal(&mut eps);
        let drop_cond = rng.uniform() < p_uncond;
        let y_t = q_sample(y0, t, &eps, schedule)?;
        let cond_opt = if drop_cond { None } else { Some(*cond) };
        params.forward_cached(&y_t, t, cond_opt, ws)?;
        let mut sample_loss = 0.0;
        for i in 0..n {
            let r = ws.eps_hat[i] - eps[i];
            sample_loss += r * r;
            upstream[i] = 2.0 * r * inv_batch;
        }
        loss += sample_loss * inv_batch;
        params.backward(ws, &upstream, grads)?;
    }
    Ok(loss)
}

/// Training settings for the denoiser (and the regression baseline, which
/// reuses them for a matched budget).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub p_uncond: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 100,
            p_uncond: 0.1,
            seed: 0,
        }
    }
}

/// Mean training loss of one epoch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

/// Trains `params` in place over `(condition, target)` pairs (both in
/// normalized coordinates). Single-threaded and fully determined by
/// `config.seed`. Every optimizer step asserts all parameters stay finite.
pub fn fit_denoiser(
    params: &mut DenoiserParams,
    pairs: &[(Vec<f64>, Vec<f64>)],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    if pairs.is_empty() {
        return Err(Error::invalid_argument("training set is empty"));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::invalid_argument("batch_size and epochs must be >= 1"));
    }
    let mut rng = Rng::derive(config.seed, 0x7261_696e);
    let mut ws = Workspace::new(params.config());
    let mut grads = DenoiserGrads::zeros_like(params);
    let mut adam = AdamState::new(params.param_count(), config.adam);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], &[f64])> =
                chunk.iter().map(|&i| (pairs[i].0.as_slice(), pairs[i].1.as_slice())).collect();
            let loss =
                training_step(params, &batch, schedule, config.p_uncond, &mut rng, &mut ws, &mut grads)?;
            adam.step_blocks(&mut params.blocks_mut(), &grads.blocks())?;
            if !params.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite parameter after optimizer step {} (epoch {epoch})",
                    adam.step_count()
                )));
            }
            epoch_loss += loss;
            batches += 1;
        }
        log.push(EpochLoss { epoch, loss: epoch_loss / batches as f64 });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::diffusion::ddpm_sample;

    #[test]
    fn q_sample_zero_noise_scales_signal() {
        let schedule = NoiseSchedule::cosine(20).unwrap();
        let y0 = [1.0, -2.0];
        let y_t = q_sample(&y0, 5, &[0.0, 0.0], &schedule).unwrap();
        let s = schedule.alpha_bar(5).sqrt();
        assert!((y_t[0] - s).abs() < 1e-15);
        assert!((y_t[1] + 2.0 * s).abs() < 1e-15);
    }

    #[test]
    fn q_sample_terminal_step_is_nearly_pure_noise() {
        let schedule = NoiseSchedule::cosine(20).unwrap();
        let eps = [0.7, -1.3];
        let y_t = q_sample(&[0.0, 0.0], 20, &eps, &schedule).unwrap();
        for i in 0..2 {
            assert!((y_t[i] - eps[i]).abs() < 0.01, "y_T {} vs eps {}", y_t[i], eps[i]);
        }
    }

    #[test]
    fn q_sample_rejects_bad_step() {
        let schedule = NoiseSchedule::cosine(20).unwrap();
        assert!(q_sample(&[0.0], 0, &[0.0], &schedule).is_err());
        assert!(q_sample(&[0.0], 21, &[0.0], &schedule).is_err());
    }

    #[test]
    fn q_sample_second_moment() {
        // E||y_t||^2 = ab * ||y0||^2 + (1 - ab) * N over many noise draws.
        let schedule = NoiseSchedule::cosine(20).unwrap();
        let y0 = [0.8, -0.5, 0.3];
        let t = 10;
        let mut rng = Rng::new(31);
        let mut total = 0.0;
        let draws = 10_000;
        let mut eps = [0.0; 3];
        for _ in 0..draws {
            rng.fill_normal(&mut eps);
            let y_t = q_sample(&y0, t, &eps, &schedule).unwrap();
            total += y_t.iter().map(|v| v * v).sum::<f64>();
        }
        let got = total / draws as f64;
        let ab = schedule.alpha_bar(t);
        let expected = ab * y0.iter().map(|v| v * v).sum::<f64>() + (1.0 - ab) * 3.0;
        assert!(
            (got - expected).abs() < 0.05 * expected,
            "moment {got} vs expected {expected}"
        );
    }

    #[test]
    fn q_sample_roundtrip_recovers_y0() {
        // Reconstructing y0_hat from y_t with the true eps inverts q_sample.
        let schedule = NoiseSchedule::cosine(20).unwrap();
        let mut rng = Rng::new(8);
        for t in 1..=20 {
            let y0: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let eps: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let y_t = q_sample(&y0, t, &eps, &schedule).unwrap();
            let ab = schedule.alpha_bar(t);
            for i in 0..3 {
                let y0_hat = (y_t[i] - (1.0 - ab).sqrt() * eps[i]) / ab.sqrt();
                assert!((y0_hat - y0[i]).abs() < 1e-10, "t={t}");
            }
        }
    }

    fn tiny_params(n: usize, c: usize) -> DenoiserParams {
        let config = DenoiserConfig {
            solution_dim: n,
            condition_dim: c,
            hidden: 8,
            depth: 2,
            max_step: 20,
        };
        DenoiserParams::init(config, &mut Rng::new(2)).unwrap()
    }

    #[test]
    fn loss_of_zero_predictor_is_about_dimension() {
        // With eps_theta == 0, loss = mean ||eps||^2 which concentrates at N.
        let mut params = tiny_params(3, 1);
        for b in params.blocks_mut() {
            b.fill(0.0);
        }
        let schedule = NoiseSchedule::cosine(20).unwrap();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> =
            (0..512).map(|i| (vec![i as f64 / 512.0], vec![0.1, -0.2, 0.3])).collect();
        let batch: Vec<(&[f64], &[f64])> =
            pairs.iter().map(|(c, y)| (c.as_slice(), y.as_slice())).collect();
        let mut ws = Workspace::new(params.config());
        let mut grads = DenoiserGrads::zeros_like(&params);
        let loss =
            training_step(&params, &batch, &schedule, 0.1, &mut Rng::new(6), &mut ws, &mut grads)
                .unwrap();
        assert!((loss - 3.0).abs() < 0.4, "loss {loss} not near N=3");
    }

    #[test]
    fn loss_decreases_on_synthetic_problem() {
        // 1-D synthetic: y* = x with x ~ U[-1, 1]; loss must drop >= 10x
        // over 2000 steps.
        let config = DenoiserConfig {
            solution_dim: 1,
            condition_dim: 1,
            hidden: 8,
            depth: 2,
            max_step: 20,
        };
        let mut params = DenoiserParams::init(config, &mut Rng::new(3)).unwrap();
        let schedule = NoiseSchedule::cosine(20).unwrap();
        let mut data_rng = Rng::new(10);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..512)
            .map(|_| {
                let x = data_rng.uniform_in(-1.0, 1.0);
                (vec![x], vec![x])
            })
            .collect();

        let mut rng = Rng::new(11);
        let mut ws = Workspace::new(&config);
        let mut grads = DenoiserGrads::zeros_like(&params);
        let mut adam = AdamState::new(params.param_count(), AdamConfig::default());
        let mut first = 0.0;
        let mut last = 0.0;
        let window = 100;
        for step in 0..2000 {
            let batch: Vec<(&[f64], &[f64])> = (0..16)
                .map(|_| {
                    let i = rng.below(pairs.len() as u64) as usize;
                    (pairs[i].0.as_slice(), pairs[i].1.as_slice())
                })
                .collect();
            let loss =
                training_step(&params, &batch, &schedule, 0.1, &mut rng, &mut ws, &mut grads)
                    .unwrap();
            adam.step_blocks(&mut params.blocks_mut(), &grads.blocks()).unwrap();
            if step < window {
                first += loss;
            }
            if step >= 2000 - window {
                last += loss;
            }
        }
        assert!(
            last * 10.0 <= first,
            "loss did not drop 10x: first {first:.4} last {last:.4}"
        );
    }

    #[test]
    fn overfit_single_pair_samples_near_target() {
        // Point-mass target: heavy overfit on one pair, then samples land
        // within L-inf 0.05 of the target in normalized coordinates.
        let config = DenoiserConfig {
            solution_dim: 3,
            condition_dim: 2,
            hidden: 16,
            depth: 2,
            max_step: 20,
        };
        let mut params = DenoiserParams::init(config, &mut Rng::new(5)).unwrap();
        let schedule = NoiseSchedule::cosine(20).unwrap();
        let target = vec![0.4, -0.3, 0.1];
        let cond = vec![0.7, -0.2];
        let pairs = vec![(cond.clone(), target.clone())];
        let tc = TrainConfig {
            batch_size: 8,
            epochs: 4000,
            p_uncond: 0.2,
            seed: 1,
            ..TrainConfig::default()
        };
        // One pair per epoch with batch 8 repeats it; fit via the loop below
        // to keep the budget explicit.
        let mut rng = Rng::new(12);
        let mut ws = Workspace::new(&config);
        let mut grads = DenoiserGrads::zeros_like(&params);
        let mut adam = AdamState::new(params.param_count(), tc.adam);
        for _ in 0..4000 {
            let batch: Vec<(&[f64], &[f64])> =
                (0..8).map(|_| (pairs[0].0.as_slice(), pairs[0].1.as_slice())).collect();
            training_step(&params, &batch, &schedule, tc.p_uncond, &mut rng, &mut ws, &mut grads)
                .unwrap();
            adam.step_blocks(&mut params.blocks_mut(), &grads.blocks()).unwrap();
        }
        let guidance = GuidanceConfig { omega: 1.0, p_uncond: 0.2 };
        let samples =
            ddpm_sample(&params, &cond, &schedule, &guidance, &mut Rng::new(40), 8).unwrap();
        let mut best_linf = f64::INFINITY;
        for s in &samples {
            let linf = s
                .iter()
                .zip(target.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            best_linf = best_linf.min(linf);
        }
        assert!(best_linf <= 0.05, "best L-inf distance {best_linf}");
    }

    #[test]
    fn fit_denoiser_is_deterministic() {
        let config = DenoiserConfig {
            solution_dim: 2,
            condition_dim: 1,
            hidden: 8,
            depth: 2,
            max_step: 20,
        };
        let schedule = NoiseSchedule::cosine(20).unwrap();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> =
            (0..64).map(|i| (vec![i as f64 / 64.0], vec![0.3, -0.3])).collect();
        let tc = TrainConfig { epochs: 3, batch_size: 16, ..TrainConfig::default() };
        let mut p1 = DenoiserParams::init(config, &mut Rng::new(1)).unwrap();
        let mut p2 = DenoiserParams::init(config, &mut Rng::new(1)).unwrap();
        let l1 = fit_denoiser(&mut p1, &pairs, &schedule, &tc).unwrap();
        let l2 = fit_denoiser(&mut p2, &pairs, &schedule, &tc).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(l1.len(), l2.len());
        for (a, b) in l1.iter().zip(l2.iter()) {
            assert_eq!(a.loss, b.loss);
        }
    }
}
