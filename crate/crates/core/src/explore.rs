//! Shape variations by partially noising a latent and running the learned
//! reverse chain back from that step, plus the session tree that records
//! an interactive pick-and-renoise loop.

use serde::{Deserialize, Serialize};

use crate::autodecoder::ShapeLatent;
use crate::diffusion::{denoise_chains, forward_sample, from_latent, to_latent, Denoiser, VarianceSchedule};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Default exploration depth for a chain of `steps`: one fifteenth of it.
pub fn default_t_noise(steps: usize) -> usize {
    (steps / 15).max(1)
}

/// `z0` noised to step `t_noise` in closed form; `t_noise = 0` is a copy.
pub fn perturb(schedule: &VarianceSchedule, z0: &[f64], t_noise: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if t_noise == 0 {
        return Ok(z0.to_vec());
    }
    Ok(forward_sample(schedule, z0, t_noise, rng)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreRequest {
    pub source: ShapeLatent,
    pub t_noise: usize,
    pub k: usize,
    pub seed: u64,
}

impl ExploreRequest {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.t_noise > steps {
            return Err(Error::InvalidArgument(format!("t_noise {} exceeds T = {steps}", self.t_noise)));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// `k` perturb-then-denoise chains from `z0`; chain `i` draws all its
/// randomness from `Rng::stream(seed, i)`.
pub fn variations(
    model: &Denoiser,
    schedule: &VarianceSchedule,
    z0: &[f32],
    t_noise: usize,
    k: usize,
    seed: u64,
    cond: Option<&[f64]>,
) -> Result<Vec<ShapeLatent>> {
    ExploreRequest {
        source: z0.to_vec(),
        t_noise,
        k,
        seed,
    }
    .validate(schedule.steps())?;
    if z0.len() != model.config.latent_dim {
        return Err(crate::error::shape_err("source latent", model.config.latent_dim, z0.len()));
    }
    if t_noise == 0 {
        return Ok(vec![z0.to_vec(); k]);
    }
    let start = from_latent(model, z0);
    let mut rngs: Vec<Rng> = (0..k).map(|i| Rng::stream(seed, i as u64)).collect();
    let mut states = rngs
        .iter_mut()
        .map(|r| perturb(schedule, &start, t_noise, r))
        .collect::<Result<Vec<_>>>()?;
    denoise_chains(model, schedule, &mut states, t_noise, cond, &mut rngs)?;
    Ok(states.iter().map(|s| to_latent(model, s)).collect())
}

pub fn explore(model: &Denoiser, schedule: &VarianceSchedule, request: &ExploreRequest) -> Result<Vec<ShapeLatent>> {
    variations(model, schedule, &request.source, request.t_noise, request.k, request.seed, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub t_noise: usize,
    pub seed: Option<u64>,
    pub latent: ShapeLatent,
}

/// History tree of one exploration. Node 0 is the initial shape; variations
/// are attached to whichever node is current when they are requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreSession {
    nodes: Vec<ExploreNode>,
    current: usize,
}

impl ExploreSession {
    pub fn new(root: ShapeLatent) -> Self {
        Self {
            nodes: vec![ExploreNode {
                id: 0,
                parent: None,
                t_noise: 0,
                seed: None,
                latent: root,
            }],
            current: 0,
        }
    }

    pub fn nodes(&self) -> &[ExploreNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Option<&ExploreNode> {
        self.nodes.get(id)
    }

    pub fn current(&self) -> &ExploreNode {
        &self.nodes[self.current]
    }

    /// Variations of the current node; returns the new node ids.
    pub fn request(&mut self, model: &Denoiser, schedule: &VarianceSchedule, t_noise: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
        let parent = self.current;
        let latents = variations(model, schedule, &self.nodes[parent].latent, t_noise, k, seed, None)?;
        Ok(self.attach(parent, t_noise, seed, latents))
    }

    /// Adds externally computed variations under `parent`.
    pub fn attach(&mut self, parent: usize, t_noise: usize, seed: u64, latents: Vec<ShapeLatent>) -> Vec<usize> {
        latents
            .into_iter()
            .map(|latent| {
                let id = self.nodes.len();
                self.nodes.push(ExploreNode {
                    id,
                    parent: Some(parent),
                    t_noise,
                    seed: Some(seed),
                    latent,
                });
                id
            })
            .collect()
    }

    /// Makes `id` the node future variations start from.
    pub fn rebase(&mut self, id: usize) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("unknown node {id}")));
        }
        self.current = id;
        Ok(())
    }
}

/// FNV-1a hash of the latent's bit pattern.
pub fn latent_hash(z: &[f32]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for x in z {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}
