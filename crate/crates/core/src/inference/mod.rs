//! Variational EM for the Gamma-Poisson factor model and its
//! zero-inflated and sparse extensions.

mod config;
mod elbo;
mod fit;
mod init;
mod mstep;
mod state;
mod updates;

pub use config::{FitConfig, FitReport, FittedModel};
pub use elbo::{elbo, elbo_terms, ElboTerms};
pub use fit::{
    fit, fit_sparse_reestimate, restart_rng, sweep, ReestimateResult, UNSELECTED_LOG_LOADING,
};
pub use init::{init_state, selection_prior};
pub use mstep::{fit_gamma_prior, m_step, GammaFit, SHAPE_CAP};
pub use state::{MultinomialAllocation, VariationalState};
pub use updates::{
    update_a, update_a_gap, update_a_general, update_b, update_b_gap, update_b_general, update_pd,
    update_ps, update_r, update_r_into, LOGIT_CLAMP,
};
