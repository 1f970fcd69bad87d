use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Linear β endpoints for a 1000-step chain.
pub const BASE_BETA_START: f64 = 1e-4;
pub const BASE_BETA_END: f64 = 0.02;

/// Parameters that fully determine a schedule; stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleSpec {
    /// The 1000-step endpoints rescaled by `1000 / steps`, capped at 0.999.
    pub fn scaled_linear(steps: usize) -> Self {
        let s = 1000.0 / steps.max(1) as f64;
        Self {
            steps,
            beta_start: (BASE_BETA_START * s).min(0.999),
            beta_end: (BASE_BETA_END * s).min(0.999),
        }
    }

    pub fn build(&self) -> Result<VarianceSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Tables indexed by step `t` in `1..=T`; `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigma2: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<VarianceSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta range ({beta_start}, {beta_end}) must satisfy 0 < start <= end < 1"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    for b in &betas {
        let prev = *alpha_bars.last().unwrap();
        alpha_bars.push(prev * (1.0 - b));
    }
    let sigma2 = (1..=steps)
        .map(|t| (1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]) * betas[t - 1])
        .collect();
    Ok(VarianceSchedule {
        spec: ScheduleSpec {
            steps,
            beta_start,
            beta_end,
        },
        betas,
        alpha_bars,
        sigma2,
    })
}

impl VarianceSchedule {
    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Reverse-step variance; zero at `t = 1`.
    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2[t - 1]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

/// Closed-form draw of `z^t` given `z^0`; returns `(z^t, eps)`.
pub fn forward_sample(schedule: &VarianceSchedule, z0: &[f64], t: usize, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    schedule.check_step(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let eps = rng.normal_vec(z0.len());
    let zt = z0.iter().zip(&eps).map(|(z, e)| a * z + b * e).collect();
    Ok((zt, eps))
}

/// One forward transition `q(z^t | z^{t-1})`.
pub fn forward_step(schedule: &VarianceSchedule, z_prev: &[f64], t: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    let beta = schedule.beta(t);
    let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
    Ok(z_prev.iter().map(|z| a * z + b * rng.normal()).collect())
}

/// Sinusoidal embedding of step `t`: pairs `(sin(t w_k), cos(t w_k))` with
/// `w_k = 10000^(-2k/width)`.
pub fn time_embedding(t: usize, width: usize) -> Result<Vec<f64>> {
    if width == 0 || width % 2 != 0 {
        return Err(Error::InvalidArgument(format!("time embedding width {width} must be even and positive")));
    }
    let mut out = Vec::with_capacity(width);
    for k in 0..width / 2 {
        let w = 10000f64.powf(-2.0 * k as f64 / width as f64);
        let x = t as f64 * w;
        out.push(x.sin());
        out.push(x.cos());
    }
    Ok(out)
}
