//! Cosine noise schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step `alpha_t` and cumulative `alpha_bar_t` for `t = 1..=max_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    max_step: usize,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule: `alpha_bar_t = f(t)/f(0)` with
    /// `f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2)`, `s = 0.008`, and
    /// `alpha_t = alpha_bar_t / alpha_bar_{t-1}` clipped to
    /// `[0.001, 0.9999]`. `alpha_bar` is rebuilt from the clipped alphas so
    /// the cumulative-product identity holds exactly.
    pub fn cosine(max_step: usize) -> Result<Self> {
        if max_step == 0 {
            return Err(Error::invalid_argument("noise schedule needs max_step >= 1"));
        }
        const S: f64 = 0.008;
        let f = |t: f64| {
            let angle = ((t / max_step as f64 + S) / (1.0 + S)) * std::f64::consts::FRAC_PI_2;
            angle.cos().powi(2)
        };
        let f0 = f(0.0);
        let mut alpha = Vec::with_capacity(max_step);
        let mut alpha_bar = Vec::with_capacity(max_step);
        let mut prev_raw = 1.0;
        let mut running = 1.0;
        for t in 1..=max_step {
            let raw = f(t as f64) / f0;
            let a = (raw / prev_raw).clamp(0.001, 0.9999);
            prev_raw = raw;
            running *= a;
            alpha.push(a);
            alpha_bar.push(running);
        }
        let schedule = NoiseSchedule { max_step, alpha, alpha_bar };
        schedule.validate()?;
        Ok(schedule)
    }

    fn validate(&self) -> Result<()> {
        let mut prev = 1.0;
        let mut product = 1.0;
        for t in 1..=self.max_step {
            let a = self.alpha(t);
            let ab = self.alpha_bar(t);
            if !(0.0 < a && a < 1.0) {
                return Err(Error::Numeric(format!("alpha_{t} = {a} outside (0,1)")));
            }
            if ab >= prev {
                return Err(Error::Numeric(format!("alpha_bar not strictly decreasing at t={t}")));
            }
            product *= a;
            if (product - ab).abs() > 1e-12 {
                return Err(Error::Numeric(format!(
                    "alpha_bar_{t} = {ab} differs from running product {product}"
                )));
            }
            prev = ab;
        }
        Ok(())
    }

    pub fn max_step(&self) -> usize {
        self.max_step
    }

    /// `alpha_t`, `t` in `1..=max_step`.
    pub fn alpha(&self, t: usize) -> f64 {
        assert!((1..=self.max_step).contains(&t), "alpha({t}) out of range");
        self.alpha[t - 1]
    }

    /// `alpha_bar_t`, `t` in `0..=max_step` with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.max_step, "alpha_bar({t}) out of range");
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn contains_step(&self, t: usize) -> bool {
        (1..=self.max_step).contains(&t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_steps() {
        assert!(NoiseSchedule::cosine(0).is_err());
    }

    #[test]
    fn alpha_bar_strictly_decreasing_at_default_t() {
        let s = NoiseSchedule::cosine(20).unwrap();
        let mut prev = 1.0;
        for t in 1..=20 {
            assert!(s.alpha_bar(t) < prev);
            prev = s.alpha_bar(t);
        }
    }

    #[test]
    fn endpoint_envelope_at_default_t() {
        // Evaluating the closed form at T=20: the terminal signal level is
        // tiny and the first step keeps most of the signal.
        let s = NoiseSchedule::cosine(20).unwrap();
        assert!(s.alpha_bar(20) < 0.05, "alpha_bar(T) = {}", s.alpha_bar(20));
        assert!(s.alpha_bar(1) > 0.9, "alpha_bar(1) = {}", s.alpha_bar(1));
    }

    #[test]
    fn alphas_in_open_unit_interval() {
        for t_max in [5, 20, 40, 100] {
            let s = NoiseSchedule::cosine(t_max).unwrap();
            for t in 1..=t_max {
                assert!(s.alpha(t) > 0.0 && s.alpha(t) < 1.0);
            }
        }
    }

    #[test]
    fn alpha_bar_is_cumulative_product() {
        let s = NoiseSchedule::cosine(20).unwrap();
        let mut product = 1.0;
        for t in 1..=20 {
            product *= s.alpha(t);
            assert!((s.alpha_bar(t) - product).abs() < 1e-12);
        }
        assert_eq!(s.alpha_bar(0), 1.0);
    }
}
