//! Multi-resolution rigid image registration with uncertainty-driven
//! probabilistic voxel selection.
//!
//! The toolkit registers a moving 3D volume onto a reference by maximizing
//! normalized mutual information over a rigid transform, evaluating the
//! metric on small voxel subsets that are re-drawn every optimizer
//! iteration. Subsets are sampled from a per-voxel probability field (VSPF)
//! optimized from a Bayesian analysis of transform-parameter uncertainty, so
//! informative voxels are visited often while image exploration continues.
//! Baseline samplers (uniform, gradient-magnitude, deterministic top-k) are
//! included for comparison, along with a phantom benchmark harness and a
//! grid-search hyperparameter learner.

pub mod error;
pub mod rng;
pub mod volume;

pub mod transform;

pub mod similarity;

pub mod sampling;

pub mod estimator;

pub mod optimizer;

pub mod registration;

pub mod learning;

pub mod bench;

pub mod cli;

pub use error::{Error, Result};
