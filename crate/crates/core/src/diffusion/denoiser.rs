use serde::{Deserialize, Serialize};

use super::schedule::{time_embedding, ScheduleSpec};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{eval_batch, forward_batch, Activation, BatchInput, MlpArch, MlpParams, Rng, Scalar, Skip, SkipSource};

/// What the network is trained to output for an input `z^t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseTarget {
    /// The unit Gaussian `eps` with `z^t = sqrt(ab) z^0 + sqrt(1 - ab) eps`.
    Epsilon,
    /// The total displacement `z^t - z^0`.
    TotalNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub time_embed_dim: usize,
    /// Width of the condition vector; 0 for an unconditional model.
    pub cond_dim: usize,
    pub schedule: ScheduleSpec,
    pub lr: f64,
    pub batch_size: usize,
    /// Noise draws per latent in one epoch; lets batches exceed the table.
    pub repeats: usize,
    pub epochs: usize,
    /// The learning rate halves after this many epochs (0 disables).
    pub lr_halving_epochs: usize,
    pub target: NoiseTarget,
    /// Rescale latents to unit RMS before diffusion (undone on output).
    pub normalize_latents: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 256,
            hidden_dim: 512,
            num_layers: 8,
            time_embed_dim: 128,
            cond_dim: 0,
            schedule: ScheduleSpec::scaled_linear(1000),
            lr: 1e-5,
            batch_size: 10,
            repeats: 1,
            epochs: 1000,
            lr_halving_epochs: 0,
            target: NoiseTarget::Epsilon,
            normalize_latents: false,
        }
    }
}

impl DenoiserConfig {
    pub fn arch(&self) -> MlpArch {
        denoiser_arch(self.latent_dim, self.cond_dim, self.hidden_dim, self.num_layers, self.time_embed_dim)
    }

    /// Learning rate for epoch `epoch` (0-based) under the halving schedule.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_halving_epochs {
            0 => self.lr,
            h => self.lr * 0.5f64.powi((epoch / h) as i32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::InvalidArgument("denoiser latent_dim must be >= 1".into()));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.repeats == 0 {
            return Err(Error::InvalidArgument(
                "denoiser lr must be > 0, batch_size and repeats >= 1".into(),
            ));
        }
        time_embedding(0, self.time_embed_dim)?;
        self.schedule.build()?;
        self.arch().validate()
    }
}

/// Softplus MLP from `latent_dim + cond_dim` to `latent_dim` with the first
/// hidden output concatenated into every odd layer from 3 on, and a time
/// projection added to the input of every layer after the first.
pub fn denoiser_arch(latent_dim: usize, cond_dim: usize, hidden_dim: usize, num_layers: usize, time_embed_dim: usize) -> MlpArch {
    MlpArch {
        input_dim: latent_dim + cond_dim,
        hidden_dim,
        output_dim: latent_dim,
        num_layers,
        skips: (3..num_layers)
            .step_by(2)
            .map(|target| Skip {
                source: SkipSource::FirstHidden,
                target,
            })
            .collect(),
        activation: Activation::Softplus,
        time_embed_dim: Some(time_embed_dim),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: MlpParams<f32>,
    /// Factor mapping stage-one latents into diffusion space.
    pub latent_scale: f64,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, params: MlpParams<f32>, latent_scale: f64) -> Result<Self> {
        config.validate()?;
        params.check(&config.arch())?;
        if !(latent_scale > 0.0 && latent_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("latent scale {latent_scale} must be positive")));
        }
        Ok(Self {
            config,
            params,
            latent_scale,
        })
    }

    pub fn init(config: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let params = MlpParams::init(&config.arch(), rng);
        Ok(Self {
            config,
            params,
            latent_scale: 1.0,
        })
    }

    pub fn arch(&self) -> MlpArch {
        self.config.arch()
    }

    /// Network output for one input in diffusion space.
    pub fn denoiser_eval(&self, z_t: &[f64], t: usize, cond: Option<&[f64]>) -> Result<Vec<f64>> {
        self.predict_batch(z_t, &[t], cond)
    }

    /// Network outputs for `ts.len()` inputs stacked row-major in `z`.
    /// `cond` is one condition shared by all rows.
    pub fn predict_batch(&self, z: &[f64], ts: &[usize], cond: Option<&[f64]>) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let batch = ts.len();
        if z.len() != batch * cfg.latent_dim {
            return Err(shape_err("denoiser latent input", batch * cfg.latent_dim, z.len()));
        }
        let cond: &[f64] = match cond {
            Some(c) => c,
            None => &[],
        };
        if cond.len() != cfg.cond_dim {
            return Err(shape_err("condition vector", cfg.cond_dim, cond.len()));
        }
        let arch = self.arch();
        let in_dim = arch.input_dim;
        let mut rows = Vec::with_capacity(batch * in_dim);
        for zr in z.chunks(cfg.latent_dim) {
            rows.extend(zr.iter().map(|&x| x as f32));
            rows.extend(cond.iter().map(|&x| x as f32));
        }
        let temb = time_rows::<f32>(ts, cfg.time_embed_dim)?;
        let out = eval_batch(
            &self.params,
            &arch,
            BatchInput {
                rows: &rows,
                batch,
                shared: &[],
                time_embed: Some(&temb),
            },
        )?;
        Ok(out.into_iter().map(|x| x as f64).collect())
    }
}

pub(crate) fn time_rows<S: Scalar>(ts: &[usize], width: usize) -> Result<Vec<S>> {
    let mut out = Vec::with_capacity(ts.len() * width);
    for &t in ts {
        out.extend(time_embedding(t, width)?.into_iter().map(S::of));
    }
    Ok(out)
}

/// Squared-error objective `mean_b |f(x_b, t_b) - y_b|^2` and its exact
/// gradients with respect to parameters and inputs.
pub fn denoiser_loss<S: Scalar>(
    params: &MlpParams<S>,
    arch: &MlpArch,
    inputs: &[S],
    time_embed: &[S],
    targets: &[S],
    batch: usize,
) -> Result<(f64, MlpParams<S>, Vec<S>)> {
    if targets.len() != batch * arch.output_dim {
        return Err(shape_err("denoiser targets", batch * arch.output_dim, targets.len()));
    }
    let (out, tape) = forward_batch(
        params,
        arch,
        BatchInput {
            rows: inputs,
            batch,
            shared: &[],
            time_embed: Some(time_embed),
        },
    )?;
    let scale = 1.0 / batch as f64;
    let mut loss = 0.0;
    let upstream: Vec<S> = out
        .iter()
        .zip(targets)
        .map(|(&o, &y)| {
            let d = (o - y).as_f64();
            loss += d * d;
            S::of(2.0 * d * scale)
        })
        .collect();
    let g = tape.backward(&upstream)?;
    Ok((loss * scale, g.params, g.input_rows))
}
