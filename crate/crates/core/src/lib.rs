//! A laboratory for training mean-field Gaussian Bayesian neural networks
//! under two objectives: the evidence lower bound (ELBO), whose data term is
//! the expected negative log-likelihood, and direct loss minimization (DLM),
//! whose data term is the negative log of the expected likelihood.
//!
//! Layout:
//! - [`tensor`], [`autodiff`]: dense `f64` tensors and a reverse-mode tape.
//! - [`variational`]: the posterior family, priors, regularizers, projection.
//! - [`model`]: network architectures and per-example log-likelihoods.
//! - [`objectives`]: multi-sample ELBO/DLM batch losses and test metrics.
//! - [`trainer`]: Adam, training and continuation protocols.
//! - [`surface`]: interpolation paths between posteriors, run comparison.
//! - [`conjugate`]: a Gaussian-mean model with exact losses.
//! - [`io`]: config files, datasets, checkpoints, CSV outputs.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod conjugate;
pub mod error;
pub mod io;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod surface;
pub mod tensor;
pub mod trainer;
pub mod variational;

pub use error::{Error, Result};
