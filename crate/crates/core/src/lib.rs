//! Sparse zero-inflated Gamma-Poisson factorization of count matrices.
//!
//! The crate is organised as:
//!
//! - [`model`]: count matrices, factor/prior types, Poisson likelihood,
//!   Bregman divergence, explained deviance and factor ordering.
//! - [`inference`]: variational EM for the GaP, ZI-GaP and sparse ZI-GaP
//!   families, including the sparse-then-refit pipeline.
//! - [`simulate`]: block-structured zero-inflated synthetic counts.
//! - [`metrics`]: k-means, adjusted Rand index, selection accuracy.
//! - [`baselines`]: Poisson NMF and PCA on log counts.
//! - [`io`] and [`cli`]: file formats and the batch commands.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod model;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
pub use inference::{fit, fit_sparse_reestimate, FitConfig, FitReport, FittedModel};
pub use model::{CountMatrix, FactorPair, HyperParams, ModelFamily};
