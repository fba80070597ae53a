//! Implicit moment-tensor estimation and clustering for mixtures of
//! translated Poincaré distributions and spherical Gaussian mixtures.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod base;
pub mod cli;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod mixture;
pub mod pipeline;
pub mod poincare;
pub mod poly;
pub mod projection;
pub mod reduction;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod validate;

pub use error::{Error, Result};
