//! Fully-convolutional texture segmentation.
//!
//! The crate provides the network ([`model`]), its training protocols
//! ([`train`]), unsupervised pre-segmentation ([`preseg`]), the
//! one-region-per-class refinement post-processor ([`refine`]), synthetic
//! texture datasets ([`data`]) and segmentation measures ([`metrics`]).
//! [`pipeline`] chains them for one image and [`experiment`] runs the
//! pinned desk-scale experiments.
//! All numerics are `f64` and deterministic for a given seed.

pub mod data;
pub mod error;
pub mod experiment;
pub mod imageio;
pub mod label;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod patches;
pub mod pipeline;
pub mod preseg;
pub mod refine;
pub mod seed;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use label::{LabelMap, RankedLabels, ScoreVolume, IGNORE};
pub use model::{build_fcnt, predict_labels, rank_labels, NetworkSpec, NetworkState};
pub use tensor::{Shape, Tensor};
