use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{explained_deviance, CountMatrix, FactorPair, HyperParams, ModelFamily};

/// Loop controls and model choice for [`fit`](super::fit).
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub k: usize,
    pub family: ModelFamily,
    pub max_sweeps: usize,
    /// Stop once the normalized change of Û and V̂ falls below this.
    pub rel_tol: f64,
    pub n_restarts: usize,
    /// Threshold on q(S = 1) for the discretized selection indicator.
    pub tau: f64,
    pub seed: u64,
    /// Hold the prior rates at their initial values. `None` means "exactly
    /// when the matrix is square".
    pub fix_scale: Option<bool>,
}

impl FitConfig {
    pub fn new(k: usize, family: ModelFamily) -> Self {
        FitConfig {
            k,
            family,
            max_sweeps: 1000,
            rel_tol: 1e-5,
            n_restarts: 5,
            tau: 0.5,
            seed: 0,
            fix_scale: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        if self.n_restarts == 0 || self.max_sweeps == 0 {
            return Err(Error::InvalidInput(
                "restarts and sweeps must be at least 1".into(),
            ));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput("tau must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn resolved_fix_scale(&self, n: usize, m: usize) -> bool {
        self.fix_scale.unwrap_or(n == m)
    }
}

/// Diagnostics of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// ELBO after every sweep of the selected restart.
    pub elbo_trace: Vec<f64>,
    pub explained_deviance: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Index of the restart that was kept.
    pub restart: usize,
    /// Final ELBO of each restart, `None` where the restart failed.
    pub restart_elbos: Vec<Option<f64>>,
    /// `(sweep, relative drop)` for every sweep where the ELBO went down.
    pub elbo_decreases: Vec<(usize, f64)>,
    /// Per gene: whether any factor selects it. Sparse family only.
    pub selected_genes: Option<Vec<bool>>,
    /// Genes whose allocations fell back to uniform in the last sweep.
    pub fallback_genes: Vec<usize>,
    /// All-zero genes.
    pub uninformative_genes: Vec<usize>,
}

/// Posterior summaries of a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub family: ModelFamily,
    /// Û, n×K.
    pub u_mean: DMatrix<f64>,
    /// E[log U], n×K.
    pub u_log: DMatrix<f64>,
    /// V̂ = Ŝ⊙V̂' for the sparse family, V̂' otherwise; m×K.
    pub v_mean: DMatrix<f64>,
    /// log-scale loadings matching `v_mean` (`ln Ŝ + E[log V']` when sparse).
    pub v_log: DMatrix<f64>,
    pub p_s: DMatrix<f64>,
    pub p_d: DMatrix<f64>,
    pub s_tilde: DMatrix<bool>,
    pub hyper: HyperParams,
}

impl FittedModel {
    pub fn n(&self) -> usize {
        self.u_mean.nrows()
    }

    pub fn m(&self) -> usize {
        self.v_mean.nrows()
    }

    pub fn k(&self) -> usize {
        self.u_mean.ncols()
    }

    pub fn factors(&self) -> FactorPair {
        FactorPair::new(self.u_mean.clone(), self.v_mean.clone())
            .expect("posterior means are non-negative")
    }

    /// `Û V̂ᵀ`, the Poisson rate without the dropout gate.
    pub fn rate_reconstruction(&self) -> DMatrix<f64> {
        &self.u_mean * self.v_mean.transpose()
    }

    /// Posterior mean intensity `D̂ ⊙ (Û V̂ᵀ)`; equal to the rate for the
    /// plain GaP family.
    pub fn fitted_intensity(&self) -> DMatrix<f64> {
        let rate = self.rate_reconstruction();
        if self.family.zero_inflated() {
            rate.component_mul(&self.p_d)
        } else {
            rate
        }
    }

    pub fn explained_deviance(&self, x: &CountMatrix) -> Result<f64> {
        explained_deviance(x, &self.fitted_intensity())
    }

    /// Per gene: `any_k S̃_jk`. Every gene counts as selected outside the
    /// sparse family.
    pub fn selected_genes(&self) -> Vec<bool> {
        (0..self.m())
            .map(|j| self.s_tilde.row(j).iter().any(|&s| s))
            .collect()
    }
}
