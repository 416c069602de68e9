//! Oriented-anchor grasp detection with a learned graspability scorer.
//!
//! The crate is organised bottom-up: [`geometry`] and [`anchors`] hold the
//! grasp representation, [`matching`] assigns training targets,
//! [`autodiff`] is a small reverse-mode engine with gated parameter groups,
//! [`model`] and [`losses`] define the networks and objectives, [`data`]
//! produces scenes and [`train`] ties everything into training, evaluation
//! and cross-validation.

// Validation writes `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchors;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod matching;
pub mod model;
pub mod train;

pub use error::{GraspError, Result};
