//! Distances between point clouds and set-level generation metrics.

pub mod distance;
pub mod novelty;
pub mod sets;

pub use distance::{chamfer, emd, min_cost_assignment};
pub use novelty::novelty_nn;
pub use sets::{
    coverage, coverage_from, evaluate, mmd, mmd_from, one_nna, one_nna_from, CoverageMode, DistMatrix, Distance,
    MetricsReport, SetDistances, ShapeSet,
};
