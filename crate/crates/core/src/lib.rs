//! Structure-preserving kernel surrogates for Hamiltonian flow maps.

// `!(x > 0.0)` is used on purpose so that NaN is rejected along with
// non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod greedy;
pub mod hb;
pub mod integrators;
pub mod kernels;
pub mod linalg;
pub mod mor;
pub mod predictor;
pub mod systems;

pub use error::{Error, Result};
