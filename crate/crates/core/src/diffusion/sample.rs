use super::denoiser::{Denoiser, NoiseTarget};
use super::schedule::VarianceSchedule;
use crate::autodecoder::ShapeLatent;
use crate::error::{shape_err, Error, Result};
use crate::numerics::Rng;

/// Posterior mean of `z^{t-1}` given `z^t` and a network prediction.
pub fn reverse_mean(schedule: &VarianceSchedule, z_t: &[f64], t: usize, pred: &[f64], target: NoiseTarget) -> Vec<f64> {
    let (alpha, ab, ab_prev, beta) = (
        schedule.alpha(t),
        schedule.alpha_bar(t),
        schedule.alpha_bar(t - 1),
        schedule.beta(t),
    );
    match target {
        NoiseTarget::Epsilon => {
            let c = (1.0 - alpha) / (1.0 - ab).sqrt();
            let s = 1.0 / alpha.sqrt();
            z_t.iter().zip(pred).map(|(z, e)| s * (z - c * e)).collect()
        }
        NoiseTarget::TotalNoise => {
            // z^0 estimate is z^t minus the predicted displacement.
            let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
            let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            z_t.iter().zip(pred).map(|(z, d)| c0 * (z - d) + ct * z).collect()
        }
    }
}

/// `z^{t-1} = mean + sigma_t xi`; no noise is drawn when `sigma_t = 0`.
pub fn reverse_step_with(
    schedule: &VarianceSchedule,
    z_t: &[f64],
    t: usize,
    pred: &[f64],
    target: NoiseTarget,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::InvalidArgument(format!("step {t} outside 1..={}", schedule.steps())));
    }
    if pred.len() != z_t.len() {
        return Err(shape_err("noise prediction", z_t.len(), pred.len()));
    }
    let mut z = reverse_mean(schedule, z_t, t, pred, target);
    let sigma2 = schedule.sigma2(t);
    if sigma2 > 0.0 {
        let sigma = sigma2.sqrt();
        z.iter_mut().for_each(|x| *x += sigma * rng.normal());
    }
    Ok(z)
}

/// One learned reverse transition in diffusion space.
pub fn reverse_step(
    model: &Denoiser,
    schedule: &VarianceSchedule,
    z_t: &[f64],
    t: usize,
    cond: Option<&[f64]>,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let pred = model.denoiser_eval(z_t, t, cond)?;
    reverse_step_with(schedule, z_t, t, &pred, model.config.target, rng)
}

/// Runs every chain in `states` from step `t_start` down to 1. Chain `i`
/// draws its noise from `rngs[i]` only; network calls are batched.
pub fn denoise_chains(
    model: &Denoiser,
    schedule: &VarianceSchedule,
    states: &mut [Vec<f64>],
    t_start: usize,
    cond: Option<&[f64]>,
    rngs: &mut [Rng],
) -> Result<()> {
    if rngs.len() != states.len() {
        return Err(shape_err("chain rngs", states.len(), rngs.len()));
    }
    if t_start > schedule.steps() {
        return Err(Error::InvalidArgument(format!("start step {t_start} beyond T = {}", schedule.steps())));
    }
    let dim = model.config.latent_dim;
    if let Some(bad) = states.iter().find(|s| s.len() != dim) {
        return Err(shape_err("chain state", dim, bad.len()));
    }
    let n = states.len();
    if n == 0 {
        return Ok(());
    }
    let mut flat = vec![0.0; n * dim];
    for t in (1..=t_start).rev() {
        for (i, s) in states.iter().enumerate() {
            flat[i * dim..(i + 1) * dim].copy_from_slice(s);
        }
        let pred = model.predict_batch(&flat, &vec![t; n], cond)?;
        for (i, (s, rng)) in states.iter_mut().zip(rngs.iter_mut()).enumerate() {
            *s = reverse_step_with(schedule, s, t, &pred[i * dim..(i + 1) * dim], model.config.target, rng)?;
        }
    }
    Ok(())
}

/// Maps a diffusion-space vector back to a stage-one latent.
pub fn to_latent(model: &Denoiser, z: &[f64]) -> ShapeLatent {
    z.iter().map(|&x| (x / model.latent_scale) as f32).collect()
}

pub fn from_latent(model: &Denoiser, z: &[f32]) -> Vec<f64> {
    z.iter().map(|&x| x as f64 * model.latent_scale).collect()
}

/// `n` independent chains from standard normal noise through all `T`
/// reverse steps. Chain `i` uses `Rng::stream(seed, i)`.
pub fn generate(
    model: &Denoiser,
    schedule: &VarianceSchedule,
    n: usize,
    cond: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<ShapeLatent>> {
    let dim = model.config.latent_dim;
    let mut rngs: Vec<Rng> = (0..n).map(|i| Rng::stream(seed, i as u64)).collect();
    let mut states: Vec<Vec<f64>> = rngs.iter_mut().map(|r| r.normal_vec(dim)).collect();
    denoise_chains(model, schedule, &mut states, schedule.steps(), cond, &mut rngs)?;
    Ok(states.iter().map(|s| to_latent(model, s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{forward_sample, make_schedule, DenoiserConfig, ScheduleSpec};
    use crate::numerics::MlpParams;

    fn zero_model(t: usize) -> (Denoiser, VarianceSchedule) {
        let cfg = DenoiserConfig {
            latent_dim: 3,
            hidden_dim: 4,
            time_embed_dim: 4,
            schedule: ScheduleSpec::scaled_linear(t),
            ..Default::default()
        };
        let s = cfg.schedule.build().unwrap();
        (Denoiser::new(cfg.clone(), MlpParams::zeros(&cfg.arch()), 1.0).unwrap(), s)
    }

    #[test]
    fn last_step_is_deterministic() {
        let (m, s) = zero_model(50);
        let z = [0.4, -0.1, 0.9];
        let a = reverse_step(&m, &s, &z, 1, None, &mut Rng::seed(1)).unwrap();
        let b = reverse_step(&m, &s, &z, 1, None, &mut Rng::seed(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_prediction_rescales() {
        let s = make_schedule(10, 0.01, 0.1).unwrap();
        let z = [1.0, -2.0];
        let out = reverse_step_with(&s, &z, 1, &[0.0, 0.0], NoiseTarget::Epsilon, &mut Rng::seed(0)).unwrap();
        let a = s.alpha(1).sqrt();
        assert!((out[0] - 1.0 / a).abs() < 1e-15 && (out[1] + 2.0 / a).abs() < 1e-15);
    }

    #[test]
    fn exact_predictions_agree_across_targets() {
        let s = make_schedule(100, 1e-3, 0.05).unwrap();
        let mut rng = Rng::seed(3);
        let z0 = rng.normal_vec(5);
        for t in [1, 2, 40, 100] {
            let (zt, eps) = forward_sample(&s, &z0, t, &mut rng).unwrap();
            let total: Vec<f64> = zt.iter().zip(&z0).map(|(a, b)| a - b).collect();
            let a = reverse_mean(&s, &zt, t, &eps, NoiseTarget::Epsilon);
            let b = reverse_mean(&s, &zt, t, &total, NoiseTarget::TotalNoise);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9, "t={t}: {x} {y}");
            }
        }
    }

    #[test]
    fn generate_equals_composed_reverse_steps() {
        let cfg = DenoiserConfig {
            latent_dim: 3,
            hidden_dim: 5,
            time_embed_dim: 4,
            schedule: ScheduleSpec::scaled_linear(30),
            ..Default::default()
        };
        let s = cfg.schedule.build().unwrap();
        let m = Denoiser::init(cfg, &mut Rng::seed(9)).unwrap();
        let batch = generate(&m, &s, 3, None, 7).unwrap();
        for (i, got) in batch.iter().enumerate() {
            let mut rng = Rng::stream(7, i as u64);
            let mut z = rng.normal_vec(3);
            for t in (1..=30).rev() {
                z = reverse_step(&m, &s, &z, t, None, &mut rng).unwrap();
            }
            let want = to_latent(&m, &z);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} {b}");
            }
        }
        assert_eq!(batch, generate(&m, &s, 3, None, 7).unwrap());
    }
}
