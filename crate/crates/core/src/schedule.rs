//! Diffusion noise schedule.
//!
//! `1 - alpha_bar_t` grows linearly from `scale * min` to `scale * max` over
//! `t = 1..=T`. Per-step `alpha_t` is recovered as the ratio of consecutive
//! cumulative products, with `alpha_bar_0 = 1`.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// The four numbers that determine a schedule; this is what checkpoints store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub noise_scale: f64,
    pub noise_min: f64,
    pub noise_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    // Index 0 holds t = 1.
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    sigma2: Vec<f64>,
}

/// Coefficients of the true reverse posterior mean
/// `mu = c0 * x0 + ct * x_t` and its variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefficients {
    pub c0: f64,
    pub ct: f64,
    pub var: f64,
}

impl NoiseSchedule {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        let ScheduleParams {
            steps,
            noise_scale,
            noise_min,
            noise_max,
        } = params;
        ensure!(steps >= 1, Config, "diffusion steps must be at least 1");
        ensure!(
            noise_scale > 0.0 && noise_min > 0.0 && noise_min <= noise_max,
            Config,
            "need noise_scale > 0 and 0 < noise_min <= noise_max, got scale={noise_scale} min={noise_min} max={noise_max}"
        );
        ensure!(
            noise_scale * noise_max < 1.0,
            Config,
            "noise_scale * noise_max = {} leaves alpha_bar <= 0",
            noise_scale * noise_max
        );

        let alpha_bar: Vec<f64> = (1..=steps)
            .map(|t| {
                let frac = if steps == 1 {
                    0.0
                } else {
                    (t - 1) as f64 / (steps - 1) as f64
                };
                1.0 - noise_scale * (noise_min + frac * (noise_max - noise_min))
            })
            .collect();
        ensure!(
            steps == 1 || alpha_bar.windows(2).all(|w| w[1] < w[0]),
            Config,
            "alpha_bar must be strictly decreasing; use noise_min < noise_max when steps > 1"
        );

        let mut alpha = Vec::with_capacity(steps);
        let mut sigma2 = Vec::with_capacity(steps);
        let mut prev = 1.0;
        for &ab in &alpha_bar {
            let a = ab / prev;
            alpha.push(a);
            sigma2.push((1.0 - a) * (1.0 - prev) / (1.0 - ab));
            prev = ab;
        }
        let beta = alpha.iter().map(|a| 1.0 - a).collect();
        Ok(Self {
            params,
            alpha_bar,
            alpha,
            beta,
            sigma2,
        })
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn steps(&self) -> usize {
        self.params.steps
    }

    fn check(&self, t: usize) {
        assert!(
            (1..=self.steps()).contains(&t),
            "diffusion step {t} outside 1..={}",
            self.steps()
        );
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            return 1.0;
        }
        self.check(t);
        self.alpha_bar[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.check(t);
        self.alpha[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check(t);
        self.beta[t - 1]
    }

    pub fn sigma2(&self, t: usize) -> f64 {
        self.check(t);
        self.sigma2[t - 1]
    }

    pub fn posterior_coefficients(&self, t: usize) -> PosteriorCoefficients {
        self.check(t);
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        PosteriorCoefficients {
            c0: ab_prev.sqrt() * self.beta(t) / (1.0 - ab),
            ct: self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab),
            var: self.sigma2(t),
        }
    }

    /// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise`.
    ///
    /// # Panics
    /// If `t` is outside `1..=T` or the vector lengths differ.
    pub fn q_sample(&self, x0: ArrayView1<'_, f64>, t: usize, noise: ArrayView1<'_, f64>) -> Array1<f64> {
        assert_eq!(x0.len(), noise.len(), "x0 and noise lengths differ");
        self.check(t);
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.iter().zip(noise.iter()).map(|(&x, &e)| a * x + b * e).collect()
    }
}
