//! Dense network primitives: MLP forward/backward, Adam, gradient checks
//! and the deterministic RNG.

pub mod adam;
pub mod gradcheck;
pub mod mlp;
pub mod rng;
pub mod scalar;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, LossEval};
pub use mlp::{
    eval_batch, forward_batch, mlp_backward, mlp_forward, Activation, BatchInput, Gradients, MlpArch, MlpParams,
    Skip, SkipSource, Tape,
};
pub use rng::Rng;
pub use scalar::Scalar;
