//! Count data, factor and prior types, and every likelihood, divergence
//! and deviance computation used by inference, evaluation and model
//! selection.

mod counts;
mod likelihood;
mod ordering;
mod types;

pub use counts::CountMatrix;
pub use likelihood::{
    bregman_divergence, deviance, explained_deviance, explained_variance_gaussian, null_intensity,
    poisson_loglik, RATE_FLOOR,
};
pub use ordering::{deviance_curve, order_factors};
pub use types::{FactorPair, HyperParams, ModelFamily};
