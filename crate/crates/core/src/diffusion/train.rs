use super::denoiser::{denoiser_loss, time_rows, Denoiser, DenoiserConfig, NoiseTarget};
use super::schedule::{forward_sample, VarianceSchedule};
use crate::autodecoder::ShapeLatent;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{AdamConfig, AdamState, Rng};

/// Second-stage training state over a frozen latent table.
#[derive(Debug, Clone)]
pub struct DiffusionTrainer {
    pub model: Denoiser,
    pub schedule: VarianceSchedule,
    pub history: Vec<f64>,
    data: Vec<Vec<f64>>,
    conds: Option<Vec<Vec<f64>>>,
    adam: AdamState<f32>,
    rng: Rng,
    steps: usize,
}

/// `1 / rms` over every coordinate of the table.
pub fn latent_scale(latents: &[ShapeLatent]) -> f64 {
    let (sum, n) = latents
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), &x| (s + (x as f64).powi(2), n + 1));
    let rms = (sum / n.max(1) as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        1.0 / rms
    } else {
        1.0
    }
}

impl DiffusionTrainer {
    pub fn new(
        config: DenoiserConfig,
        latents: &[ShapeLatent],
        conds: Option<&[Vec<f64>]>,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if latents.is_empty() {
            return Err(Error::Empty("latent table"));
        }
        if let Some(bad) = latents.iter().find(|z| z.len() != config.latent_dim) {
            return Err(shape_err("latent table row", config.latent_dim, bad.len()));
        }
        let conds = match conds {
            Some(c) => {
                if c.len() != latents.len() {
                    return Err(shape_err("condition list", latents.len(), c.len()));
                }
                if let Some(bad) = c.iter().find(|v| v.len() != config.cond_dim) {
                    return Err(shape_err("condition vector", config.cond_dim, bad.len()));
                }
                Some(c.to_vec())
            }
            None if config.cond_dim > 0 => return Err(shape_err("condition list", latents.len(), 0)),
            None => None,
        };
        let schedule = config.schedule.build()?;
        let mut model = Denoiser::init(config, rng)?;
        if model.config.normalize_latents {
            model.latent_scale = latent_scale(latents);
        }
        let data = latents
            .iter()
            .map(|z| z.iter().map(|&x| x as f64 * model.latent_scale).collect())
            .collect();
        let adam = AdamState::for_tensors(&model.params.tensors(), AdamConfig::default());
        Ok(Self {
            model,
            schedule,
            history: Vec::new(),
            data,
            conds,
            adam,
            rng: rng.fork(),
            steps: 0,
        })
    }

    pub fn optimizer_steps(&self) -> usize {
        self.steps
    }

    /// One shuffled pass over `repeats` copies of the table in batches;
    /// returns the mean batch
    /// loss. A non-finite loss restores the previous epoch's weights.
    pub fn epoch(&mut self) -> Result<f64> {
        let saved = (self.model.params.clone(), self.adam.clone(), self.steps);
        match self.run_epoch() {
            Ok(l) => {
                self.history.push(l);
                Ok(l)
            }
            Err(e) => {
                (self.model.params, self.adam, self.steps) = saved;
                Err(e)
            }
        }
    }

    fn run_epoch(&mut self) -> Result<f64> {
        let cfg = self.model.config.clone();
        let arch = cfg.arch();
        let in_dim = arch.input_dim;
        let t_max = self.schedule.steps();
        let lr = cfg.lr_at(self.history.len());
        let n = self.data.len();
        let mut order: Vec<usize> = (0..n * cfg.repeats).map(|i| i % n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut self.rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for group in order.chunks(cfg.batch_size) {
            let b = group.len();
            let mut inputs = Vec::with_capacity(b * in_dim);
            let mut targets = Vec::with_capacity(b * cfg.latent_dim);
            let mut ts = Vec::with_capacity(b);
            for &i in group {
                let t = 1 + self.rng.below(t_max);
                let z0 = &self.data[i];
                let (zt, eps) = forward_sample(&self.schedule, z0, t, &mut self.rng)?;
                match cfg.target {
                    NoiseTarget::Epsilon => targets.extend(eps.iter().map(|&x| x as f32)),
                    NoiseTarget::TotalNoise => targets.extend(zt.iter().zip(z0).map(|(a, b)| (a - b) as f32)),
                }
                inputs.extend(zt.iter().map(|&x| x as f32));
                if let Some(c) = &self.conds {
                    inputs.extend(c[i].iter().map(|&x| x as f32));
                }
                ts.push(t);
            }
            let temb = time_rows::<f32>(&ts, cfg.time_embed_dim)?;
            let (loss, grads, _) = denoiser_loss(&self.model.params, &arch, &inputs, &temb, &targets, b)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step: self.steps });
            }
            self.adam
                .step(self.model.params.tensors_mut(), &grads.tensors(), lr)?;
            self.steps += 1;
            total += loss;
            batches += 1;
        }
        Ok(total / batches as f64)
    }
}

/// Trains a denoiser for `config.epochs` epochs; returns it with the
/// per-epoch loss history.
pub fn train_diffusion(
    latents: &[ShapeLatent],
    conds: Option<&[Vec<f64>]>,
    config: &DenoiserConfig,
    rng: &mut Rng,
) -> Result<(Denoiser, Vec<f64>)> {
    let mut trainer = DiffusionTrainer::new(config.clone(), latents, conds, rng)?;
    for _ in 0..config.epochs {
        trainer.epoch()?;
    }
    Ok((trainer.model, trainer.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{generate, ScheduleSpec};
    use crate::numerics::MlpParams;

    fn small(epochs: usize) -> DenoiserConfig {
        DenoiserConfig {
            latent_dim: 4,
            hidden_dim: 32,
            time_embed_dim: 16,
            schedule: ScheduleSpec::scaled_linear(100),
            lr: 2e-3,
            batch_size: 16,
            epochs,
            ..Default::default()
        }
    }

    #[test]
    fn zero_network_loss_is_latent_dim() {
        let cfg = DenoiserConfig {
            latent_dim: 256,
            hidden_dim: 8,
            time_embed_dim: 8,
            ..Default::default()
        };
        let arch = cfg.arch();
        let zero = MlpParams::<f64>::zeros(&arch);
        let s = cfg.schedule.build().unwrap();
        let mut rng = Rng::seed(2);
        let z0 = vec![0.05; 256];
        let mut total = 0.0;
        for _ in 0..1000 {
            let t = 1 + rng.below(1000);
            let (zt, eps) = forward_sample(&s, &z0, t, &mut rng).unwrap();
            let temb = time_rows::<f64>(&[t], 8).unwrap();
            total += denoiser_loss(&zero, &arch, &zt, &temb, &eps, 1).unwrap().0;
        }
        let mean = total / 1000.0;
        assert!((mean - 256.0).abs() < 25.6, "{mean}");
    }

    #[test]
    fn single_point_data_concentrates() {
        let v: ShapeLatent = vec![1.0, -0.5, 0.8, 0.3];
        let table = vec![v.clone(); 16];
        let mut rng = Rng::seed(1);
        let (model, history) = train_diffusion(&table, None, &small(5000), &mut rng).unwrap();
        assert!(history.last().unwrap() < &history[0]);
        let s = model.config.schedule.build().unwrap();
        let samples = generate(&model, &s, 100, None, 3).unwrap();
        let vn = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        let mean_err = samples
            .iter()
            .map(|z| z.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f32>().sqrt())
            .sum::<f32>()
            / 100.0;
        assert!(mean_err < 0.1 * vn, "{mean_err}");
    }

    #[test]
    fn repeats_multiply_steps_per_epoch() {
        let table: Vec<ShapeLatent> = (0..10).map(|i| vec![i as f32 * 0.1; 4]).collect();
        for (repeats, steps) in [(1, 3), (3, 8)] {
            let cfg = DenoiserConfig {
                batch_size: 4,
                repeats,
                ..small(1)
            };
            let mut t = DiffusionTrainer::new(cfg, &table, None, &mut Rng::seed(0)).unwrap();
            t.epoch().unwrap();
            assert_eq!(t.optimizer_steps(), steps);
        }
    }

    #[test]
    fn learning_rate_halves_on_schedule() {
        let cfg = DenoiserConfig {
            lr: 1e-3,
            lr_halving_epochs: 10,
            ..small(1)
        };
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(9), 1e-3);
        assert_eq!(cfg.lr_at(10), 5e-4);
        assert_eq!(cfg.lr_at(25), 2.5e-4);
        assert_eq!(DenoiserConfig { lr_halving_epochs: 0, ..cfg }.lr_at(1000), 1e-3);
    }

    #[test]
    fn condition_count_checked() {
        let cfg = DenoiserConfig { cond_dim: 2, ..small(1) };
        let table = vec![vec![0.0f32; 4]; 3];
        assert!(DiffusionTrainer::new(cfg.clone(), &table, None, &mut Rng::seed(0)).is_err());
        let conds = vec![vec![1.0, 0.0]; 2];
        assert!(DiffusionTrainer::new(cfg.clone(), &table, Some(&conds), &mut Rng::seed(0)).is_err());
        let conds = vec![vec![1.0, 0.0]; 3];
        assert!(DiffusionTrainer::new(cfg, &table, Some(&conds), &mut Rng::seed(0)).is_ok());
    }
}
