//! Two-stage generative modelling of 3D shapes as neural signed distance
//! fields: an auto-decoder learns a latent code per shape, a denoising
//! diffusion model learns the distribution of those codes.

pub mod autodecoder;
pub mod diffusion;
pub mod error;
pub mod explore;
pub mod geom;
pub mod meshing;
pub mod metrics;
pub mod numerics;
pub mod shapes;

pub use error::{Error, Result};
