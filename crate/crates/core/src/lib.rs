//! Two-link planar manipulator workbench: closed-form dynamics, an ideal
//! and a perturbed simulation plant, linear design tools, reference
//! trajectories, and the model-based control laws that drive the arm.

// `!(x <= limit)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod linsys;
pub mod ode;
pub mod plant;
pub mod trajectory;

pub use error::{Error, Result};
