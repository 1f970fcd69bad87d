//! Fully connected networks with concatenation skips and additive
//! per-layer time conditioning, with exact reverse-mode gradients.
//!
//! Layer `l` (1-based) receives the previous layer's output followed by
//! every skip source that targets it, in declaration order. When the
//! architecture declares a time embedding, every layer except the first
//! adds `silu(W_t e + b_t)` to its (concatenated) input. The last layer is
//! always linear.
//!
//! A batch input may carry a *shared tail*: trailing input columns that are
//! identical for every row (the shape latent when decoding many points of
//! one shape). Those columns are folded into the bias instead of being
//! multiplied per row.

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::scalar::Scalar;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipSource {
    NetworkInput,
    FirstHidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub source: SkipSource,
    /// 1-based index of the layer whose input receives the concatenation.
    pub target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Softplus => softplus(x),
        }
    }

    #[inline]
    fn derivative<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub fn silu<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

#[inline]
fn silu_derivative<S: Scalar>(x: S) -> S {
    let s = sigmoid(x);
    s * (S::one() + x * (S::one() - s))
}

/// Architecture descriptor. The output activation is always the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub num_layers: usize,
    pub skips: Vec<Skip>,
    pub activation: Activation,
    pub time_embed_dim: Option<usize>,
}

/// Where a contiguous block of a layer's input columns comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment {
    Previous,
    Input,
    First,
}

impl MlpArch {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Architecture("at least one layer required".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Architecture("zero input or output width".into()));
        }
        if self.num_layers > 1 && self.hidden_dim == 0 {
            return Err(Error::Architecture("zero hidden width".into()));
        }
        for s in &self.skips {
            if s.target < 2 || s.target > self.num_layers {
                return Err(Error::Architecture(format!(
                    "skip target {} outside [2, {}]",
                    s.target, self.num_layers
                )));
            }
        }
        if self.time_embed_dim == Some(0) {
            return Err(Error::Architecture("zero time-embedding width".into()));
        }
        Ok(())
    }

    fn segments(&self, layer: usize) -> Vec<Segment> {
        if layer == 0 {
            return vec![Segment::Input];
        }
        let mut segs = vec![Segment::Previous];
        for s in self.skips.iter().filter(|s| s.target == layer + 1) {
            segs.push(match s.source {
                SkipSource::NetworkInput => Segment::Input,
                SkipSource::FirstHidden => Segment::First,
            });
        }
        segs
    }

    fn segment_width(&self, seg: Segment) -> usize {
        match seg {
            Segment::Input => self.input_dim,
            Segment::Previous | Segment::First => self.hidden_dim,
        }
    }

    /// Input width of 0-based layer `layer`.
    pub fn layer_in_dim(&self, layer: usize) -> usize {
        self.segments(layer)
            .into_iter()
            .map(|s| self.segment_width(s))
            .sum()
    }

    /// Output width of 0-based layer `layer`.
    pub fn layer_out_dim(&self, layer: usize) -> usize {
        if layer + 1 == self.num_layers {
            self.output_dim
        } else {
            self.hidden_dim
        }
    }

    /// Whether 0-based layer `layer` adds a projected time embedding.
    pub fn has_time_projection(&self, layer: usize) -> bool {
        self.time_embed_dim.is_some() && layer > 0
    }

    pub fn num_params(&self) -> usize {
        (0..self.num_layers)
            .map(|l| {
                let (i, o) = (self.layer_in_dim(l), self.layer_out_dim(l));
                let t = if self.has_time_projection(l) {
                    i * self.time_embed_dim.unwrap_or(0) + i
                } else {
                    0
                };
                i * o + o + t
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeProjection<S> {
    /// `in_dim x time_embed_dim`, row-major.
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    /// `out_dim x in_dim`, row-major.
    pub weight: Vec<S>,
    pub bias: Vec<S>,
    pub time: Option<TimeProjection<S>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<S> {
    pub layers: Vec<LayerParams<S>>,
}

impl<S: Scalar> MlpParams<S> {
    pub fn zeros(arch: &MlpArch) -> Self {
        let layers = (0..arch.num_layers)
            .map(|l| {
                let (i, o) = (arch.layer_in_dim(l), arch.layer_out_dim(l));
                LayerParams {
                    weight: vec![S::zero(); i * o],
                    bias: vec![S::zero(); o],
                    time: arch.has_time_projection(l).then(|| TimeProjection {
                        weight: vec![S::zero(); i * arch.time_embed_dim.unwrap_or(0)],
                        bias: vec![S::zero(); i],
                    }),
                }
            })
            .collect();
        Self { layers }
    }

    /// He-uniform hidden weights, `±1/sqrt(fan_in)` output weights and zero
    /// biases. A zero output bias keeps initial predictions near 0.
    pub fn init(arch: &MlpArch, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(arch);
        let last = arch.num_layers - 1;
        for (l, layer) in p.layers.iter_mut().enumerate() {
            let fan_in = arch.layer_in_dim(l) as f64;
            let bound = if l == last { 1.0 / fan_in.sqrt() } else { (6.0 / fan_in).sqrt() };
            for w in layer.weight.iter_mut() {
                *w = S::of(rng.uniform_in(-bound, bound));
            }
            if let Some(t) = layer.time.as_mut() {
                let bound = 1.0 / (arch.time_embed_dim.unwrap_or(1) as f64).sqrt();
                for w in t.weight.iter_mut().chain(t.bias.iter_mut()) {
                    *w = S::of(rng.uniform_in(-bound, bound));
                }
            }
        }
        p
    }

    /// Parameter tensors in declaration order: per layer weight, bias and,
    /// when present, time weight and time bias.
    pub fn tensors(&self) -> Vec<&[S]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.weight.as_slice());
            out.push(layer.bias.as_slice());
            if let Some(t) = &layer.time {
                out.push(t.weight.as_slice());
                out.push(t.bias.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
            if let Some(t) = &mut layer.time {
                out.push(t.weight.as_mut_slice());
                out.push(t.bias.as_mut_slice());
            }
        }
        out
    }

    /// Names matching [`MlpParams::tensors`], e.g. `layer3.time_weight`.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(format!("layer{}.weight", l + 1));
            out.push(format!("layer{}.bias", l + 1));
            if layer.time.is_some() {
                out.push(format!("layer{}.time_weight", l + 1));
                out.push(format!("layer{}.time_bias", l + 1));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn cast<T: Scalar>(&self) -> MlpParams<T> {
        let conv = |v: &Vec<S>| v.iter().map(|x| T::of(x.as_f64())).collect::<Vec<T>>();
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: conv(&l.weight),
                    bias: conv(&l.bias),
                    time: l.time.as_ref().map(|t| TimeProjection {
                        weight: conv(&t.weight),
                        bias: conv(&t.bias),
                    }),
                })
                .collect(),
        }
    }

    /// Checks tensor sizes against `arch`.
    pub fn check(&self, arch: &MlpArch) -> Result<()> {
        if self.layers.len() != arch.num_layers {
            return Err(shape_err("layer count", arch.num_layers, self.layers.len()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (i, o) = (arch.layer_in_dim(l), arch.layer_out_dim(l));
            let name = |what: &str| format!("layer {} {}", l + 1, what);
            if layer.weight.len() != i * o {
                return Err(shape_err(name("weight"), i * o, layer.weight.len()));
            }
            if layer.bias.len() != o {
                return Err(shape_err(name("bias"), o, layer.bias.len()));
            }
            match (&layer.time, arch.has_time_projection(l)) {
                (Some(t), true) => {
                    let e = arch.time_embed_dim.unwrap_or(0);
                    if t.weight.len() != i * e {
                        return Err(shape_err(name("time weight"), i * e, t.weight.len()));
                    }
                    if t.bias.len() != i {
                        return Err(shape_err(name("time bias"), i, t.bias.len()));
                    }
                }
                (None, false) => {}
                (Some(_), false) => return Err(shape_err(name("time projection"), 0, 1)),
                (None, true) => return Err(shape_err(name("time projection"), 1, 0)),
            }
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: S, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + alpha * *y;
            }
        }
    }

    pub fn scale(&mut self, alpha: S) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = *x * alpha);
        }
    }
}

/// One network evaluation on a batch: the network, its per-row input, an
/// optional shared input tail and optional per-row time embeddings.
#[derive(Debug, Clone, Copy)]
pub struct BatchInput<'a, S> {
    /// `batch x (input_dim - shared.len())`, row-major.
    pub rows: &'a [S],
    pub batch: usize,
    pub shared: &'a [S],
    /// `batch x time_embed_dim`, row-major.
    pub time_embed: Option<&'a [S]>,
}

impl<'a, S> BatchInput<'a, S> {
    pub fn rows(rows: &'a [S], batch: usize) -> Self {
        Self {
            rows,
            batch,
            shared: &[],
            time_embed: None,
        }
    }
}

/// Activation record of a forward pass, sufficient for exact gradients.
#[derive(Debug)]
pub struct Tape<'p, S> {
    params: &'p MlpParams<S>,
    arch: &'p MlpArch,
    batch: usize,
    row_dim: usize,
    shared: Vec<S>,
    /// Per layer: materialized row-varying input, `batch x row_width(l)`.
    inputs: Vec<Vec<S>>,
    /// Per layer pre-activations, `batch x out_dim(l)`.
    pre: Vec<Vec<S>>,
    /// Per layer time pre-activations `U = E W_t^T + b_t`, empty if absent.
    time_pre: Vec<Vec<S>>,
    time_embed: Vec<S>,
}

/// Gradients of a scalar with respect to parameters and network input.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    pub params: MlpParams<S>,
    /// `batch x row_dim`.
    pub input_rows: Vec<S>,
    /// Gradient w.r.t. the shared tail (summed over rows).
    pub input_shared: Vec<S>,
}

/// Column layout of one layer input once shared columns are folded away.
struct Layout {
    /// `(segment, row-matrix column offset, weight column offset, width)`
    row_blocks: Vec<(Segment, usize, usize, usize)>,
    /// Weight column offsets of shared-tail blocks.
    shared_blocks: Vec<usize>,
    row_width: usize,
}

fn layout(arch: &MlpArch, layer: usize, row_dim: usize, shared_dim: usize) -> Layout {
    let mut row_blocks = Vec::new();
    let mut shared_blocks = Vec::new();
    let (mut a_off, mut w_off) = (0, 0);
    for seg in arch.segments(layer) {
        match seg {
            Segment::Input => {
                if row_dim > 0 {
                    row_blocks.push((seg, a_off, w_off, row_dim));
                }
                if shared_dim > 0 {
                    shared_blocks.push(w_off + row_dim);
                }
                a_off += row_dim;
                w_off += row_dim + shared_dim;
            }
            _ => {
                let w = arch.hidden_dim;
                row_blocks.push((seg, a_off, w_off, w));
                a_off += w;
                w_off += w;
            }
        }
    }
    Layout {
        row_blocks,
        shared_blocks,
        row_width: a_off,
    }
}

fn copy_block<S: Copy>(dst: &mut [S], dst_w: usize, dst_off: usize, src: &[S], src_w: usize, batch: usize) {
    for b in 0..batch {
        dst[b * dst_w + dst_off..b * dst_w + dst_off + src_w]
            .copy_from_slice(&src[b * src_w..(b + 1) * src_w]);
    }
}

fn add_block<S: Scalar>(dst: &mut [S], dst_w: usize, src: &[S], src_w: usize, src_off: usize, batch: usize) {
    for b in 0..batch {
        let d = &mut dst[b * dst_w..(b + 1) * dst_w];
        let s = &src[b * src_w + src_off..b * src_w + src_off + dst_w];
        for (x, y) in d.iter_mut().zip(s) {
            *x = *x + *y;
        }
    }
}

fn check_input<S: Scalar>(arch: &MlpArch, input: &BatchInput<'_, S>) -> Result<()> {
    if input.shared.len() > arch.input_dim {
        return Err(shape_err("layer 1 input (shared)", arch.input_dim, input.shared.len()));
    }
    let row_dim = arch.input_dim - input.shared.len();
    if input.rows.len() != input.batch * row_dim {
        return Err(shape_err("layer 1 input", input.batch * row_dim, input.rows.len()));
    }
    match (arch.time_embed_dim, input.time_embed) {
        (Some(e), Some(t)) if t.len() != e * input.batch => {
            Err(shape_err("time embedding", e * input.batch, t.len()))
        }
        (None, Some(t)) => Err(shape_err("time embedding", 0, t.len())),
        (Some(e), None) => Err(shape_err("time embedding", e * input.batch, 0)),
        _ => Ok(()),
    }
}

fn run<'p, S: Scalar>(
    params: &'p MlpParams<S>,
    arch: &'p MlpArch,
    input: BatchInput<'_, S>,
    record: bool,
) -> Result<(Vec<S>, Option<Tape<'p, S>>)> {
    params.check(arch)?;
    check_input(arch, &input)?;
    let batch = input.batch;

    // Time conditioning adds a per-row term to every column, so the shared
    // tail can no longer be folded into the bias there: expand it.
    let expanded;
    let (rows, shared): (&[S], &[S]) = if arch.time_embed_dim.is_some() && !input.shared.is_empty() {
        let rd = arch.input_dim - input.shared.len();
        let mut v = Vec::with_capacity(batch * arch.input_dim);
        for b in 0..batch {
            v.extend_from_slice(&input.rows[b * rd..(b + 1) * rd]);
            v.extend_from_slice(input.shared);
        }
        expanded = v;
        (&expanded, &[])
    } else {
        (input.rows, input.shared)
    };
    let row_dim = arch.input_dim - shared.len();
    let temb: &[S] = input.time_embed.unwrap_or(&[]);
    let temb_dim = arch.time_embed_dim.unwrap_or(0);

    let mut tape = Tape {
        params,
        arch,
        batch,
        row_dim,
        shared: shared.to_vec(),
        inputs: Vec::new(),
        pre: Vec::new(),
        time_pre: Vec::new(),
        time_embed: temb.to_vec(),
    };

    let mut first_hidden: Vec<S> = Vec::new();
    let mut prev: Vec<S> = Vec::new();

    for (l, lp) in params.layers.iter().enumerate() {
        let in_dim = arch.layer_in_dim(l);
        let out_dim = arch.layer_out_dim(l);
        let lay = layout(arch, l, row_dim, shared.len());
        let rw = lay.row_width;

        let mut a = vec![S::zero(); batch * rw];
        for &(seg, a_off, _, w) in &lay.row_blocks {
            let src: &[S] = match seg {
                Segment::Input => rows,
                Segment::Previous => &prev,
                Segment::First => &first_hidden,
            };
            copy_block(&mut a, rw, a_off, src, w, batch);
        }

        let mut u = Vec::new();
        if let Some(tp) = &lp.time {
            // rw == in_dim here: shared tail was expanded above.
            u = tp.bias.repeat(batch);
            S::gemm(
                batch,
                temb_dim,
                in_dim,
                S::one(),
                (temb, temb_dim as isize, 1),
                (&tp.weight, 1, temb_dim as isize),
                S::one(),
                (&mut u, in_dim as isize, 1),
            );
            for (x, &y) in a.iter_mut().zip(&u) {
                *x = *x + silu(y);
            }
        }

        let mut bias = lp.bias.clone();
        for &w_off in &lay.shared_blocks {
            for (o, b) in bias.iter_mut().enumerate() {
                let row = &lp.weight[o * in_dim + w_off..o * in_dim + w_off + shared.len()];
                *b = *b + row.iter().zip(shared).map(|(w, s)| *w * *s).sum::<S>();
            }
        }
        let mut z = bias.repeat(batch);
        for &(_, a_off, w_off, w) in &lay.row_blocks {
            S::gemm(
                batch,
                w,
                out_dim,
                S::one(),
                (&a[a_off..], rw as isize, 1),
                (&lp.weight[w_off..], 1, in_dim as isize),
                S::one(),
                (&mut z, out_dim as isize, 1),
            );
        }

        let last = l + 1 == arch.num_layers;
        let h: Vec<S> = if last {
            z.clone()
        } else {
            z.iter().map(|&x| arch.activation.apply(x)).collect()
        };
        if l == 0 {
            first_hidden = h.clone();
        }
        if record {
            tape.inputs.push(a);
            tape.pre.push(z);
            tape.time_pre.push(u);
        }
        prev = h;
    }
    Ok((prev, record.then_some(tape)))
}

/// Batched forward pass that records a tape for [`Tape::backward`].
pub fn forward_batch<'p, S: Scalar>(
    params: &'p MlpParams<S>,
    arch: &'p MlpArch,
    input: BatchInput<'_, S>,
) -> Result<(Vec<S>, Tape<'p, S>)> {
    let (out, tape) = run(params, arch, input, true)?;
    Ok((out, tape.expect("tape recorded")))
}

/// Batched forward pass without a tape. Output is `batch x output_dim`.
pub fn eval_batch<S: Scalar>(params: &MlpParams<S>, arch: &MlpArch, input: BatchInput<'_, S>) -> Result<Vec<S>> {
    Ok(run(params, arch, input, false)?.0)
}

/// Single-input forward pass.
pub fn mlp_forward<'p, S: Scalar>(
    params: &'p MlpParams<S>,
    arch: &'p MlpArch,
    input: &[S],
    time_embed: Option<&[S]>,
) -> Result<(Vec<S>, Tape<'p, S>)> {
    forward_batch(
        params,
        arch,
        BatchInput {
            rows: input,
            batch: 1,
            shared: &[],
            time_embed,
        },
    )
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Hash of the ReLU on/off pattern; constant for smooth activations.
    ///
    /// Finite-difference probes whose perturbation flips this pattern
    /// straddle a kink and say nothing about the analytic gradient.
    pub fn branch_key(&self) -> u64 {
        if self.arch.activation != Activation::Relu {
            return 0;
        }
        let mut h: u64 = 0xcbf29ce484222325;
        for z in &self.pre[..self.pre.len().saturating_sub(1)] {
            for x in z {
                h ^= (*x > S::zero()) as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Reverse pass for upstream gradient `d loss / d output`
    /// (`batch x output_dim`).
    pub fn backward(&self, upstream: &[S]) -> Result<Gradients<S>> {
        let arch = self.arch;
        let batch = self.batch;
        if upstream.len() != batch * arch.output_dim {
            return Err(shape_err(
                format!("layer {} upstream gradient", arch.num_layers),
                batch * arch.output_dim,
                upstream.len(),
            ));
        }
        let shared_dim = self.shared.len();
        let temb_dim = arch.time_embed_dim.unwrap_or(0);
        let mut grads = MlpParams::<S>::zeros(arch);
        let mut d_rows = vec![S::zero(); batch * self.row_dim];
        let mut d_shared = vec![S::zero(); shared_dim];
        let mut d_first = vec![S::zero(); batch * arch.hidden_dim];
        let mut d_out = upstream.to_vec();

        for l in (0..arch.num_layers).rev() {
            let lp = &self.params.layers[l];
            let g = &mut grads.layers[l];
            let in_dim = arch.layer_in_dim(l);
            let out_dim = arch.layer_out_dim(l);
            let lay = layout(arch, l, self.row_dim, shared_dim);
            let rw = lay.row_width;
            let a = &self.inputs[l];

            if l == 0 && arch.num_layers > 1 {
                // Layer 1's output also feeds skip consumers.
                for (x, y) in d_out.iter_mut().zip(&d_first) {
                    *x = *x + *y;
                }
            }
            let last = l + 1 == arch.num_layers;
            let dz: Vec<S> = if last {
                d_out
            } else {
                d_out
                    .iter()
                    .zip(&self.pre[l])
                    .map(|(&d, &z)| d * arch.activation.derivative(z))
                    .collect()
            };

            for b in 0..batch {
                for (gb, d) in g.bias.iter_mut().zip(&dz[b * out_dim..(b + 1) * out_dim]) {
                    *gb = *gb + *d;
                }
            }
            if !lay.shared_blocks.is_empty() {
                for &w_off in &lay.shared_blocks {
                    for o in 0..out_dim {
                        let gw = &mut g.weight[o * in_dim + w_off..o * in_dim + w_off + shared_dim];
                        for (x, s) in gw.iter_mut().zip(&self.shared) {
                            *x = *x + g.bias[o] * *s;
                        }
                        let w = &lp.weight[o * in_dim + w_off..o * in_dim + w_off + shared_dim];
                        for (ds, wv) in d_shared.iter_mut().zip(w) {
                            *ds = *ds + g.bias[o] * *wv;
                        }
                    }
                }
            }

            let mut da = vec![S::zero(); batch * rw];
            for &(_, a_off, w_off, w) in &lay.row_blocks {
                S::gemm(
                    out_dim,
                    batch,
                    w,
                    S::one(),
                    (&dz, 1, out_dim as isize),
                    (&a[a_off..], rw as isize, 1),
                    S::zero(),
                    (&mut g.weight[w_off..], in_dim as isize, 1),
                );
                S::gemm(
                    batch,
                    out_dim,
                    w,
                    S::one(),
                    (&dz, out_dim as isize, 1),
                    (&lp.weight[w_off..], in_dim as isize, 1),
                    S::zero(),
                    (&mut da[a_off..], rw as isize, 1),
                );
            }

            if let Some(gt) = g.time.as_mut() {
                let u = &self.time_pre[l];
                let du: Vec<S> = da.iter().zip(u).map(|(&d, &x)| d * silu_derivative(x)).collect();
                for b in 0..batch {
                    for (gb, d) in gt.bias.iter_mut().zip(&du[b * in_dim..(b + 1) * in_dim]) {
                        *gb = *gb + *d;
                    }
                }
                S::gemm(
                    in_dim,
                    batch,
                    temb_dim,
                    S::one(),
                    (&du, 1, in_dim as isize),
                    (&self.time_embed, temb_dim as isize, 1),
                    S::zero(),
                    (&mut gt.weight, temb_dim as isize, 1),
                );
            }

            let mut d_prev = Vec::new();
            for &(seg, a_off, _, w) in &lay.row_blocks {
                match seg {
                    Segment::Input => {
                        let mut tmp = vec![S::zero(); batch * w];
                        add_block(&mut tmp, w, &da, rw, a_off, batch);
                        for (x, y) in d_rows.iter_mut().zip(&tmp) {
                            *x = *x + *y;
                        }
                    }
                    Segment::First => {
                        let mut tmp = vec![S::zero(); batch * w];
                        add_block(&mut tmp, w, &da, rw, a_off, batch);
                        for (x, y) in d_first.iter_mut().zip(&tmp) {
                            *x = *x + *y;
                        }
                    }
                    Segment::Previous => {
                        d_prev = vec![S::zero(); batch * w];
                        add_block(&mut d_prev, w, &da, rw, a_off, batch);
                    }
                }
            }
            d_out = d_prev;
        }

        Ok(Gradients {
            params: grads,
            input_rows: d_rows,
            input_shared: d_shared,
        })
    }
}

/// Single-input reverse pass: `(parameter gradients, input gradient)`.
pub fn mlp_backward<S: Scalar>(tape: &Tape<'_, S>, upstream: &[S]) -> Result<(MlpParams<S>, Vec<S>)> {
    let g = tape.backward(upstream)?;
    let mut input = g.input_rows;
    input.extend(g.input_shared);
    Ok((g.params, input))
}
