//! Spatial attention point network at desk scale.
//!
//! A from-scratch stack for studying position-generalizing visuomotor
//! imitation: an f64 tensor engine with reverse-mode autodiff, the neural
//! layers and attention mechanics of the model, a deterministic 2D planar-arm
//! picking simulator that stands in for the physical robot, teacher-forced
//! sequence training, closed-loop evaluation, and post-hoc analyses
//! (hidden-state PCA, attention overlays, success tables).

pub mod analysis;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod model;
pub mod nn;
pub mod numgrad;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Result, SpanError};
pub use tensor::{Tape, Tensor};
