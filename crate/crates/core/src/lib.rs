//! Shape servoing of deformable objects.
//!
//! The pipeline observes an ordered point set, compresses it into a feature
//! vector ([`shape`]), fills occluded points from a model-based prediction
//! ([`occlusion`]), estimates the local deformation Jacobian online
//! ([`rtm`]) and computes constrained velocity commands with a receding
//! horizon controller ([`mpc`]). A quasi-static elastic simulator
//! ([`plant`]) stands in for the object and robot; [`servo`] wires it all
//! together and implements the experiment drivers used by the CLI.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod linalg;
pub mod mpc;
pub mod occlusion;
pub mod plant;
pub mod rtm;
pub mod servo;
pub mod shape;

pub use error::{Error, Result};

/// Per-axis bound on end-effector displacement per step (m).
pub const COMMAND_SATURATION: f64 = 0.01;
