//! Evidence lower bound of the factorized posterior.

use super::state::{MultinomialAllocation, VariationalState};
use crate::error::{Error, Result};
use crate::model::{CountMatrix, HyperParams};
use crate::special::{bernoulli_entropy, digamma, ln_factorial, ln_gamma};

/// The ELBO split into its named contributions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboTerms {
    /// Expected Poisson log-likelihood of the allocations plus their entropy.
    pub counts: f64,
    /// `−Σ_ij D̂_ij Σ_k Ŝ_jk Û_ik V̂'_jk`.
    pub intensity: f64,
    pub cell_scores: f64,
    pub gene_loadings: f64,
    pub selection: f64,
    pub dropout: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.counts
            + self.intensity
            + self.cell_scores
            + self.gene_loadings
            + self.selection
            + self.dropout
    }

    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("counts", self.counts),
            ("intensity", self.intensity),
            ("cell scores", self.cell_scores),
            ("gene loadings", self.gene_loadings),
            ("selection", self.selection),
            ("dropout", self.dropout),
        ]
    }
}

/// `E_q[log Gamma(θ | α)] + H[Gamma(a)]` summed over one matrix of factors.
fn gamma_block(
    shape: &nalgebra::DMatrix<f64>,
    rate: &nalgebra::DMatrix<f64>,
    mean: &nalgebra::DMatrix<f64>,
    log: &nalgebra::DMatrix<f64>,
    prior_shape: &[f64],
    prior_rate: &[f64],
) -> f64 {
    let mut total = 0.0;
    for l in 0..shape.ncols() {
        let (a1, a2) = (prior_shape[l], prior_rate[l]);
        let prior_const = a1 * a2.ln() - ln_gamma(a1);
        for r in 0..shape.nrows() {
            let (s, t) = (shape[(r, l)], rate[(r, l)]);
            let log_prior = prior_const + (a1 - 1.0) * log[(r, l)] - a2 * mean[(r, l)];
            let entropy = s - t.ln() + ln_gamma(s) + (1.0 - s) * digamma(s);
            total += log_prior + entropy;
        }
    }
    total
}

/// `E[log Bern(s | π)] + H(q(s))`, with `ln π` and `ln(1-π)` precomputed.
fn bernoulli_block(p: f64, ln_prior: f64, ln_prior_c: f64) -> f64 {
    let mut out = bernoulli_entropy(p);
    if p != 0.0 {
        out += p * ln_prior;
    }
    if p != 1.0 {
        out += (1.0 - p) * ln_prior_c;
    }
    out
}

/// Every term of the ELBO, constants included.
pub fn elbo_terms(
    state: &VariationalState,
    hyper: &HyperParams,
    x: &CountMatrix,
    r: &MultinomialAllocation,
) -> ElboTerms {
    let k = state.k();
    let mut terms = ElboTerms::default();

    let (u_log, v_log, p_s) = (
        state.u_log.transpose(),
        state.v_log.transpose(),
        state.p_s.transpose(),
    );
    for (cell, (i, j, xij)) in x.iter_nonzero().enumerate() {
        let xf = xij as f64;
        let (ul, vl) = (
            &u_log.as_slice()[i * k..(i + 1) * k],
            &v_log.as_slice()[j * k..(j + 1) * k],
        );
        let ps = &p_s.as_slice()[j * k..(j + 1) * k];
        let mut acc = -ln_factorial(xij);
        for (l, (&rl, &log_rl)) in r.cell(cell).iter().zip(r.log_cell(cell)).enumerate() {
            let z = xf * rl;
            if z != 0.0 {
                acc += z * (ps[l] * (ul[l] + vl[l]) - log_rl);
            }
        }
        terms.counts += acc;
    }

    terms.intensity = -state.p_d.dot(&state.rate_matrix());

    terms.cell_scores = gamma_block(
        &state.a_shape,
        &state.a_rate,
        &state.u_mean,
        &state.u_log,
        &hyper.alpha_shape,
        &hyper.alpha_rate,
    );
    terms.gene_loadings = gamma_block(
        &state.b_shape,
        &state.b_rate,
        &state.v_mean,
        &state.v_log,
        &hyper.beta_shape,
        &hyper.beta_rate,
    );

    if state.family.sparse() {
        for j in 0..state.m() {
            let (lp, lq) = (hyper.pi_s[j].ln(), (1.0 - hyper.pi_s[j]).ln());
            for l in 0..k {
                terms.selection += bernoulli_block(state.p_s[(j, l)], lp, lq);
            }
        }
    }
    if state.family.zero_inflated() {
        for (j, column) in state.p_d.column_iter().enumerate() {
            let (lp, lq) = (hyper.pi_d[j].ln(), (1.0 - hyper.pi_d[j]).ln());
            terms.dropout += column
                .iter()
                .map(|&p| bernoulli_block(p, lp, lq))
                .sum::<f64>();
        }
    }
    terms
}

/// Total ELBO; fails naming the first non-finite contribution.
pub fn elbo(
    state: &VariationalState,
    hyper: &HyperParams,
    x: &CountMatrix,
    r: &MultinomialAllocation,
) -> Result<f64> {
    let terms = elbo_terms(state, hyper, x, r);
    if let Some((name, value)) = terms.named().into_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numerical(format!("ELBO term '{name}' is {value}")));
    }
    Ok(terms.total())
}
