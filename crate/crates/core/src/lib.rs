//! Grounding of spatio-temporal identifying descriptions in videos with a
//! two-stream modular attention network.

pub mod autograd;
pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod language;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod proposals;
pub mod scalar;
pub mod synth;
pub mod train;
pub mod validator;
pub mod visual;

pub use error::{Result, StvgError};
pub use scalar::Scalar;

/// Double-precision instantiations.
pub type BoundingBox = data::BoundingBox<f64>;
pub type Tubelet = data::Tubelet<f64>;
pub type Model = model::GroundingModel<f64>;
pub type WindowClassifier = proposals::WindowClassifier<f64>;

/// Single-precision instantiations.
pub type BoundingBox32 = data::BoundingBox<f32>;
pub type Tubelet32 = data::Tubelet<f32>;
pub type Model32 = model::GroundingModel<f32>;
pub type WindowClassifier32 = proposals::WindowClassifier<f32>;
