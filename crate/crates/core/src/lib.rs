//! Exact Monte Carlo simulation of a two-type contact process in which
//! whole square blocks are periodically cleared by fires, together with
//! the estimators and closed-form bounds used to study coexistence of a
//! strong local competitor with a long-range colonizer.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod analysis;
pub mod engine;
pub mod error;
pub mod kernels;
pub mod lattice;
pub mod processes;
pub mod rng;

pub use error::{Error, Result};
