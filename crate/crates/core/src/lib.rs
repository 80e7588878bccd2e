//! Learning-rate selection for generalised Bayesian inference on a
//! latent-sense multinomial mixture model of word-sense change.
//!
//! The tempered posterior raises the likelihood to a power `lambda` in
//! [0, 1]. This crate fits that posterior with Hamiltonian Monte Carlo over
//! a grid of `lambda` values, runs posterior predictive checks with a
//! log-likelihood diagnostic, and selects the smallest-p-value `lambda`
//! whose check still passes. Synthetic-data generation and label-based
//! scoring close the loop for calibration studies.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod ppc;
pub mod rng;
pub mod sampler;
pub mod selector;

pub use error::{Error, Result};
