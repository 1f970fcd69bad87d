//! Stage one: a conditional SDF network `f(p, z)` and one latent code per
//! training shape, optimized jointly on the clamped L1 reconstruction loss
//! plus `(1/lambda^2) |z|^2`.
//!
//! The network input is `[p, z]`; `z` travels as the shared tail of the
//! batch so its contribution is computed once per shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::meshing::{marching_cubes, Bounds, ScalarField, TriangleMesh};
use crate::numerics::{
    eval_batch, forward_batch, Activation, AdamConfig, AdamState, BatchInput, MlpArch, MlpParams, Rng, Scalar,
    Skip, SkipSource,
};
use crate::shapes::{balanced_batch, SampleBank, SdfSample};

pub type ShapeLatent = Vec<f32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutodecoderConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// 1-based layer whose input receives the raw network input.
    pub skip_layer: usize,
    /// Clamp bound for predicted and true distances.
    pub delta: f64,
    /// Latent regularization factor; the penalty weight is `1/lambda^2`.
    pub lambda: f64,
    /// Standard deviation of the initial latent codes.
    pub latent_init_std: f64,
    pub lr_net: f64,
    pub lr_latent: f64,
    /// Both learning rates halve after this many epochs (0 disables).
    pub lr_halving_epochs: usize,
    pub epochs: usize,
    pub batch_shapes: usize,
    pub points_per_shape: usize,
}

impl Default for AutodecoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 256,
            hidden_dim: 512,
            num_layers: 8,
            skip_layer: 4,
            delta: 0.1,
            lambda: 100.0,
            latent_init_std: 0.01,
            lr_net: 5e-4,
            lr_latent: 1e-3,
            lr_halving_epochs: 1000,
            epochs: 3000,
            batch_shapes: 16,
            points_per_shape: 16_384,
        }
    }
}

impl AutodecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("autodecoder config: {m}")));
        if !(self.delta > 0.0) {
            return bad("delta must be > 0");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be > 0");
        }
        if !(self.lr_net > 0.0 && self.lr_latent > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.batch_shapes == 0 || self.points_per_shape == 0 {
            return bad("batch_shapes and points_per_shape must be >= 1");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1");
        }
        self.arch().validate()
    }

    pub fn arch(&self) -> MlpArch {
        autodecoder_arch(self.latent_dim, self.hidden_dim, self.num_layers, self.skip_layer)
    }

    fn lr_factor(&self, epoch: usize) -> f64 {
        if self.lr_halving_epochs == 0 {
            1.0
        } else {
            0.5f64.powi((epoch / self.lr_halving_epochs) as i32)
        }
    }
}

/// ReLU network from `3 + latent_dim` inputs to one linear output, with the
/// raw input concatenated to the input of layer `skip_layer`.
pub fn autodecoder_arch(latent_dim: usize, hidden_dim: usize, num_layers: usize, skip_layer: usize) -> MlpArch {
    MlpArch {
        input_dim: 3 + latent_dim,
        hidden_dim,
        output_dim: 1,
        num_layers,
        skips: if skip_layer >= 2 && skip_layer <= num_layers {
            vec![Skip {
                source: SkipSource::NetworkInput,
                target: skip_layer,
            }]
        } else {
            vec![]
        },
        activation: Activation::Relu,
        time_embed_dim: None,
    }
}

/// Trained decoder weights plus their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Autodecoder {
    pub arch: MlpArch,
    pub params: MlpParams<f32>,
}

const DECODE_CHUNK: usize = 8192;

impl Autodecoder {
    pub fn new(arch: MlpArch, params: MlpParams<f32>) -> Result<Self> {
        arch.validate()?;
        params.check(&arch)?;
        if arch.output_dim != 1 || arch.input_dim < 3 {
            return Err(Error::Architecture("decoder must map 3 + latent inputs to one output".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.input_dim - 3
    }

    /// Predicted signed distance at `p` for shape code `z`.
    pub fn decode_sdf(&self, z: &[f32], p: Vec3) -> Result<f64> {
        Ok(self.decode_batch(z, &[p])?[0] as f64)
    }

    pub fn decode_batch(&self, z: &[f32], points: &[Vec3]) -> Result<Vec<f32>> {
        if z.len() != self.latent_dim() {
            return Err(crate::error::shape_err("latent", self.latent_dim(), z.len()));
        }
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(DECODE_CHUNK) {
            let rows: Vec<f32> = chunk.iter().flat_map(|p| p.map(|x| x as f32)).collect();
            let input = BatchInput {
                rows: &rows,
                batch: chunk.len(),
                shared: z,
                time_embed: None,
            };
            out.extend(eval_batch(&self.params, &self.arch, input)?);
        }
        Ok(out)
    }

    /// The decoded SDF of one latent as a field for isosurfacing.
    pub fn field<'a>(&'a self, z: &'a [f32]) -> DecodedField<'a> {
        DecodedField { model: self, z }
    }

    pub fn extract_mesh(&self, z: &[f32], resolution: usize, bounds: Bounds) -> Result<TriangleMesh> {
        if z.len() != self.latent_dim() {
            return Err(crate::error::shape_err("latent", self.latent_dim(), z.len()));
        }
        marching_cubes(&self.field(z), resolution, bounds, 0.0)
    }
}

pub struct DecodedField<'a> {
    model: &'a Autodecoder,
    z: &'a [f32],
}

impl ScalarField for DecodedField<'_> {
    fn eval_points(&self, points: &[Vec3], out: &mut [f64]) {
        match self.model.decode_batch(self.z, points) {
            Ok(v) => {
                for (o, x) in out.iter_mut().zip(v) {
                    *o = x as f64;
                }
            }
            Err(_) => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    }
}

/// Loss value and exact gradients for one shape's batch.
#[derive(Debug, Clone)]
pub struct ReconLoss<S> {
    pub loss: f64,
    /// Mean clamped L1 part of `loss`.
    pub reconstruction: f64,
    pub param_grads: MlpParams<S>,
    pub latent_grad: Vec<S>,
    /// Active branches of clamp, absolute value and ReLU (see `grad_check`).
    pub branch_key: u64,
}

/// Mean over `batch` of `|clamp(f(p, z)) - clamp(d)|` plus `|z|^2 / lambda^2`.
///
/// The clamp is `[-delta, delta]`; its gradient is zero where it is active
/// on the prediction, and the absolute value uses a zero subgradient at 0.
pub fn recon_loss<S: Scalar>(
    params: &MlpParams<S>,
    arch: &MlpArch,
    z: &[S],
    batch: &[SdfSample],
    delta: f64,
    lambda: f64,
) -> Result<ReconLoss<S>> {
    if batch.is_empty() {
        return Err(Error::Empty("reconstruction batch"));
    }
    let rows: Vec<S> = batch
        .iter()
        .flat_map(|s| s.p.map(|x| S::of(x as f64)))
        .collect();
    let input = BatchInput {
        rows: &rows,
        batch: batch.len(),
        shared: z,
        time_embed: None,
    };
    let (out, tape) = forward_batch(params, arch, input)?;
    let n = batch.len() as f64;
    let mut l1 = 0.0;
    let mut upstream = Vec::with_capacity(batch.len());
    let mut key: u64 = tape.branch_key();
    for (f, s) in out.iter().zip(batch) {
        let f = f.as_f64();
        let pred = f.clamp(-delta, delta);
        let truth = (s.d as f64).clamp(-delta, delta);
        let diff = pred - truth;
        l1 += diff.abs();
        let active = f.abs() >= delta;
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        key = key.wrapping_mul(31).wrapping_add((active as u64) * 3 + (sign + 1.0) as u64);
        upstream.push(S::of(if active { 0.0 } else { sign / n }));
    }
    let grads = tape.backward(&upstream)?;
    let inv_l2 = 1.0 / (lambda * lambda);
    let z_sq: f64 = z.iter().map(|x| x.as_f64() * x.as_f64()).sum();
    let latent_grad = z
        .iter()
        .zip(&grads.input_shared)
        .map(|(&zi, &g)| g + S::of(2.0 * inv_l2) * zi)
        .collect();
    Ok(ReconLoss {
        loss: l1 / n + inv_l2 * z_sq,
        reconstruction: l1 / n,
        param_grads: grads.params,
        latent_grad,
        branch_key: key,
    })
}

/// Mean clamped L1 error of `model` on `samples` for latent `z`.
pub fn clamped_l1(model: &Autodecoder, z: &[f32], samples: &[SdfSample], delta: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let points: Vec<Vec3> = samples.iter().map(|s| s.p.map(|x| x as f64)).collect();
    let pred = model.decode_batch(z, &points)?;
    let total: f64 = pred
        .iter()
        .zip(samples)
        .map(|(&f, s)| ((f as f64).clamp(-delta, delta) - (s.d as f64).clamp(-delta, delta)).abs())
        .sum();
    Ok(total / samples.len() as f64)
}

/// Training state for stage one; one call to [`AutodecoderTrainer::epoch`]
/// visits every shape once.
#[derive(Debug, Clone)]
pub struct AutodecoderTrainer {
    pub config: AutodecoderConfig,
    pub model: Autodecoder,
    pub latents: Vec<ShapeLatent>,
    pub history: Vec<f64>,
    net_adam: AdamState<f32>,
    latent_adam: Vec<AdamState<f32>>,
    rng: Rng,
    last_good: Option<Box<(Autodecoder, Vec<ShapeLatent>)>>,
}

impl AutodecoderTrainer {
    /// Fresh network and latent table for `num_shapes` shapes.
    pub fn new(config: AutodecoderConfig, num_shapes: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if num_shapes == 0 {
            return Err(Error::Empty("training set"));
        }
        let arch = config.arch();
        let params = MlpParams::<f32>::init(&arch, rng);
        let latents: Vec<ShapeLatent> = (0..num_shapes)
            .map(|_| {
                (0..config.latent_dim)
                    .map(|_| (config.latent_init_std * rng.normal()) as f32)
                    .collect()
            })
            .collect();
        let net_adam = AdamState::for_tensors(&params.tensors(), AdamConfig::default());
        let latent_adam = (0..num_shapes)
            .map(|_| AdamState::new(&[config.latent_dim], AdamConfig::default()))
            .collect();
        Ok(Self {
            model: Autodecoder { arch, params },
            latents,
            history: Vec::new(),
            net_adam,
            latent_adam,
            rng: rng.fork(),
            last_good: None,
            config,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// One pass over all shapes; returns the mean per-shape loss.
    ///
    /// On a non-finite loss or gradient the model and latents are restored
    /// to the end of the previous epoch and the error is returned.
    pub fn epoch(&mut self, banks: &[SampleBank]) -> Result<f64> {
        if banks.len() != self.latents.len() {
            return Err(crate::error::shape_err("training banks", self.latents.len(), banks.len()));
        }
        self.last_good = Some(Box::new((self.model.clone(), self.latents.clone())));
        match self.run_epoch(banks) {
            Ok(loss) => {
                self.history.push(loss);
                Ok(loss)
            }
            Err(e) => {
                if let Some(good) = self.last_good.take() {
                    let (model, latents) = *good;
                    self.model = model;
                    self.latents = latents;
                }
                Err(e)
            }
        }
    }

    fn run_epoch(&mut self, banks: &[SampleBank]) -> Result<f64> {
        let cfg = &self.config;
        let epoch = self.history.len();
        let factor = cfg.lr_factor(epoch);
        let mut order: Vec<usize> = (0..banks.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut self.rng);

        let mut total = 0.0;
        for (step, group) in order.chunks(cfg.batch_shapes).enumerate() {
            let mut acc = MlpParams::<f32>::zeros(&self.model.arch);
            for &i in group {
                let k = cfg.points_per_shape.min(banks[i].len());
                let batch = balanced_batch(&banks[i], k, &mut self.rng)?;
                let r = recon_loss(
                    &self.model.params,
                    &self.model.arch,
                    &self.latents[i],
                    &batch.samples,
                    cfg.delta,
                    cfg.lambda,
                )?;
                if !r.loss.is_finite() {
                    return Err(Error::NonFiniteLoss { step: epoch * order.len() + step });
                }
                total += r.loss;
                acc.axpy(1.0, &r.param_grads);
                let latent = &mut self.latents[i];
                self.latent_adam[i].step(vec![latent.as_mut_slice()], &[&r.latent_grad], cfg.lr_latent * factor)?;
            }
            acc.scale(1.0 / group.len() as f32);
            let grads = acc.tensors();
            self.net_adam
                .step(self.model.params.tensors_mut(), &grads, cfg.lr_net * factor)?;
        }
        Ok(total / banks.len() as f64)
    }

    pub fn into_parts(self) -> (Autodecoder, Vec<ShapeLatent>, Vec<f64>) {
        (self.model, self.latents, self.history)
    }
}

/// Trains stage one for `config.epochs` epochs.
pub fn train_autodecoder(
    banks: &[SampleBank],
    config: &AutodecoderConfig,
    rng: &mut Rng,
) -> Result<(Autodecoder, Vec<ShapeLatent>, Vec<f64>)> {
    let mut trainer = AutodecoderTrainer::new(config.clone(), banks.len(), rng)?;
    for _ in 0..config.epochs {
        trainer.epoch(banks)?;
    }
    Ok(trainer.into_parts())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr: f64,
    pub points_per_step: usize,
    pub init_std: f64,
    pub delta: f64,
    pub lambda: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 800,
            lr: 5e-3,
            points_per_step: 8192,
            init_std: 0.01,
            delta: 0.1,
            lambda: 100.0,
        }
    }
}

/// Latent code for an unseen shape: minimizes the reconstruction loss over
/// `z` alone with the decoder frozen.
pub fn fit_latent(model: &Autodecoder, bank: &SampleBank, config: &FitConfig, rng: &mut Rng) -> Result<ShapeLatent> {
    let dim = model.latent_dim();
    let mut z: ShapeLatent = (0..dim).map(|_| (config.init_std * rng.normal()) as f32).collect();
    if config.iterations == 0 {
        return Ok(z);
    }
    let mut adam = AdamState::<f32>::new(&[dim], AdamConfig::default());
    let mut initial = None;
    for _ in 0..config.iterations {
        let k = config.points_per_step.min(bank.len());
        let batch = balanced_batch(bank, k, rng)?;
        let r = recon_loss(&model.params, &model.arch, &z, &batch.samples, config.delta, config.lambda)?;
        let start = *initial.get_or_insert(r.loss);
        if !r.loss.is_finite() || r.loss > 10.0 * start {
            return Err(Error::Diverged {
                loss: r.loss,
                limit: 10.0 * start,
            });
        }
        adam.step(vec![z.as_mut_slice()], &[&r.latent_grad], config.lr)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{sample_bank, Primitive, ShapeSpec};

    fn tiny_config() -> AutodecoderConfig {
        AutodecoderConfig {
            latent_dim: 4,
            hidden_dim: 8,
            num_layers: 4,
            skip_layer: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_network_decodes_zero() {
        let cfg = tiny_config();
        let model = Autodecoder::new(cfg.arch(), MlpParams::zeros(&cfg.arch())).unwrap();
        assert_eq!(model.decode_sdf(&[0.3, -1.0, 2.0, 0.1], [0.2, 0.4, -0.9]).unwrap(), 0.0);
    }

    #[test]
    fn zero_network_single_sample_loss() {
        let cfg = tiny_config();
        let arch = cfg.arch();
        let p = MlpParams::<f64>::zeros(&arch);
        let sample = SdfSample {
            p: [0.1, 0.2, 0.3],
            d: 0.05,
        };
        let r = recon_loss(&p, &arch, &[0.0; 4], &[sample], 0.1, 100.0).unwrap();
        assert!((r.loss - 0.05).abs() < 1e-8, "{}", r.loss);
    }

    #[test]
    fn latent_penalty_weight() {
        let cfg = tiny_config();
        let arch = cfg.arch();
        let p = MlpParams::<f64>::zeros(&arch);
        let sample = SdfSample { p: [0.0; 3], d: 0.0 };
        let r = recon_loss(&p, &arch, &[1.0, 0.0, 0.0, 0.0], &[sample], 0.1, 100.0).unwrap();
        assert!((r.loss - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_zero_loss() {
        let cfg = tiny_config();
        let arch = cfg.arch();
        let mut rng = Rng::seed(3);
        let p = MlpParams::<f64>::init(&arch, &mut rng);
        let z = [0.0; 4];
        let pts = [[0.1f32, 0.0, 0.0], [0.0, -0.02, 0.3]];
        let batch: Vec<SdfSample> = pts
            .iter()
            .map(|q| {
                let input = [q[0] as f64, q[1] as f64, q[2] as f64, 0.0, 0.0, 0.0, 0.0];
                let (out, _) = crate::numerics::mlp_forward(&p, &arch, &input, None).unwrap();
                SdfSample { p: *q, d: out[0] as f32 }
            })
            .collect();
        let r = recon_loss(&p, &arch, &z, &batch, 0.1, 100.0).unwrap();
        assert!(r.loss < 1e-7, "{}", r.loss);
    }

    #[test]
    fn decode_matches_mlp_forward_on_concatenated_input() {
        let cfg = tiny_config();
        let arch = cfg.arch();
        let params = MlpParams::<f32>::init(&arch, &mut Rng::seed(8));
        let model = Autodecoder::new(arch.clone(), params.clone()).unwrap();
        let z = [0.3f32, -0.2, 0.05, 0.9];
        let p = [0.25, -0.5, 0.125];
        let mut input: Vec<f32> = p.iter().map(|&x| x as f32).collect();
        input.extend_from_slice(&z);
        let (out, _) = crate::numerics::mlp_forward(&params, &arch, &input, None).unwrap();
        let d = model.decode_sdf(&z, p).unwrap();
        assert!((d - out[0] as f64).abs() < 1e-6);

        let p64: MlpParams<f64> = params.cast();
        let model64 = p64.clone();
        let input64: Vec<f64> = input.iter().map(|&x| x as f64).collect();
        let (full, _) = crate::numerics::mlp_forward(&model64, &arch, &input64, None).unwrap();
        let rows = [p[0], p[1], p[2]];
        let z64: Vec<f64> = z.iter().map(|&x| x as f64).collect();
        let shared = crate::numerics::eval_batch(
            &p64,
            &arch,
            BatchInput {
                rows: &rows,
                batch: 1,
                shared: &z64,
                time_embed: None,
            },
        )
        .unwrap();
        assert!((full[0] - shared[0]).abs() < 1e-12);
    }

    #[test]
    fn latent_table_init_norm() {
        let cfg = AutodecoderConfig {
            hidden_dim: 16,
            ..Default::default()
        };
        let trainer = AutodecoderTrainer::new(cfg, 50, &mut Rng::seed(1)).unwrap();
        for z in &trainer.latents {
            let n = z.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 0.16).abs() < 0.08, "{n}");
        }
    }

    #[test]
    fn clamping_ignores_far_field_changes() {
        let cfg = tiny_config();
        let arch = cfg.arch();
        let p = MlpParams::<f64>::init(&arch, &mut Rng::seed(2));
        let z = [0.1, 0.2, -0.1, 0.0];
        let mut batch = vec![
            SdfSample { p: [0.1, 0.1, 0.1], d: 0.5 },
            SdfSample { p: [0.2, 0.1, 0.1], d: -0.3 },
            SdfSample { p: [0.0, 0.1, 0.1], d: 0.01 },
        ];
        let a = recon_loss(&p, &arch, &z, &batch, 0.1, 100.0).unwrap();
        batch[0].d = 7.0;
        batch[1].d = -0.11;
        let b = recon_loss(&p, &arch, &z, &batch, 0.1, 100.0).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
    }

    #[test]
    fn regularization_shrinks_latent_without_signal() {
        let cfg = tiny_config();
        let arch = cfg.arch();
        let p = MlpParams::<f32>::zeros(&arch);
        let batch = vec![SdfSample { p: [0.1, 0.1, 0.1], d: 0.0 }];
        let mut z = vec![0.5f32, -0.3, 0.2, 0.1];
        let mut adam = AdamState::<f32>::new(&[4], AdamConfig::default());
        let mut last = f32::INFINITY;
        for _ in 0..50 {
            let r = recon_loss(&p, &arch, &z, &batch, 0.1, 100.0).unwrap();
            adam.step(vec![z.as_mut_slice()], &[&r.latent_grad], 1e-3).unwrap();
            let n = z.iter().map(|x| x * x).sum::<f32>();
            assert!(n < last);
            last = n;
        }
    }

    #[test]
    fn zero_iteration_fit_returns_init() {
        let cfg = tiny_config();
        let model = Autodecoder::new(cfg.arch(), MlpParams::init(&cfg.arch(), &mut Rng::seed(0))).unwrap();
        let bank = sample_bank(&ShapeSpec::single(Primitive::Sphere { radius: 0.4 }), 0, 200, &mut Rng::seed(1)).unwrap();
        let fit = FitConfig {
            iterations: 0,
            ..Default::default()
        };
        let z = fit_latent(&model, &bank, &fit, &mut Rng::seed(5)).unwrap();
        let mut r = Rng::seed(5);
        let expect: Vec<f32> = (0..4).map(|_| (0.01 * r.normal()) as f32).collect();
        assert_eq!(z, expect);
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::numerics::{grad_check, GradCheckConfig, LossEval};
        let cfg = tiny_config();
        let arch = cfg.arch();
        let mut rng = Rng::seed(11);
        let params = MlpParams::<f64>::init(&arch, &mut rng);
        let batch: Vec<SdfSample> = (0..12)
            .map(|_| SdfSample {
                p: [rng.uniform_in(-1.0, 1.0) as f32, rng.uniform_in(-1.0, 1.0) as f32, rng.uniform_in(-1.0, 1.0) as f32],
                d: rng.uniform_in(-0.15, 0.15) as f32,
            })
            .collect();
        let z: Vec<f64> = (0..4).map(|_| 0.3 * rng.normal()).collect();
        let report = grad_check(
            &params,
            &[("latent".to_string(), z)],
            |p, extra| {
                let r = recon_loss(p, &arch, &extra[0], &batch, 0.1, 3.0).unwrap();
                LossEval {
                    value: r.loss,
                    param_grads: r.param_grads,
                    extra_grads: vec![r.latent_grad],
                    branch_key: r.branch_key,
                }
            },
            GradCheckConfig::default(),
        );
        assert!(report.passed(), "{:?}", report.worst());
        let checked: usize = report.groups.iter().map(|g| g.checked).sum();
        assert!(checked > report.groups.iter().map(|g| g.skipped).sum::<usize>());
    }
}
