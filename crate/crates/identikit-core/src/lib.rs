//! Identity-from-image-sets toolkit: a procedural face world with ground
//! truth, a set-to-fixed-size identity encoder trained by few-to-many
//! reconstruction (masked-token decoding plus conditional flow matching),
//! a video curation pipeline, and the metrics to verify all of it.
//!
//! All numerics are generic over the scalar type ([`scalar::Scalar`],
//! implemented for `f32`/`f64`): f32 is the training precision, f64 is what
//! the finite-difference verification suites run in.

pub mod ablation;
pub mod checkpoint;
pub mod curation;
pub mod encoder;
pub mod episode;
pub mod error;
pub mod eval;
pub mod flow;
pub mod graph;
pub mod mtd;
pub mod nn;
pub mod params;
pub mod raster;
pub mod rng;
pub mod scalar;
pub mod storage;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training-precision aliases.
pub type GraphF32 = graph::Graph<f32>;
pub type ParamsF32 = params::Params<f32>;
pub type ProbeF32 = eval::Probe<f32>;
pub type PoseRegressorF32 = eval::PoseRegressor<f32>;
pub type TrainedF32 = trainer::Trained<f32>;
pub type IdentityRepF32 = encoder::IdentityRep<f32>;

/// Verification-precision aliases (finite-difference checks).
pub type GraphF64 = graph::Graph<f64>;
pub type ParamsF64 = params::Params<f64>;
pub type TrainedF64 = trainer::Trained<f64>;
