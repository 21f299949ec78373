//! Query-point matching registration for volumetric images.
//!
//! A reference volume and a search volume are encoded by a shared-weight 3-D
//! residual CNN, the two feature maps are merged along the last spatial axis,
//! and a transformer decoder answers "where did this reference point move to?"
//! for arbitrary query points. The mean predicted displacement is applied to
//! the search volume as a differentiable translation.
//!
//! This crate is `no_std` + `alloc`. File formats, dataset layout and the
//! command line live in the `quiz` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augment;
pub mod autograd;
pub mod geometry;
pub mod landmarks;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod real;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod volume;

mod error;

pub use error::{Error, Result};
pub use geometry::{PointDisplacements, RigidTransform};
pub use landmarks::LandmarkSet;
pub use model::{FeatureMap, ModelConfig, QuizModel};
pub use real::Real;
pub use tensor::Tensor;
pub use volume::Volume;

/// A continuous voxel coordinate or vector, ordered `(x, y, z)`.
pub type Point3 = [f64; 3];
