use nalgebra::DMatrix;

use crate::model::{CountMatrix, ModelFamily};
use crate::special::digamma;

/// Variational parameters of the factorized posterior plus their cached
/// moments.
///
/// Gamma blocks are stored as separate shape and rate matrices. After any
/// change to `a_*`/`b_*`/`p_s` call the matching `refresh_*` method; the
/// update functions in this module do so themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub family: ModelFamily,
    /// Shape of q(U_ik), n×K.
    pub a_shape: DMatrix<f64>,
    /// Rate of q(U_ik), n×K.
    pub a_rate: DMatrix<f64>,
    /// Shape of q(V'_jk), m×K.
    pub b_shape: DMatrix<f64>,
    /// Rate of q(V'_jk), m×K.
    pub b_rate: DMatrix<f64>,
    /// q(D_ij = 1), n×m. Exactly 1 wherever x_ij > 0.
    pub p_d: DMatrix<f64>,
    /// q(S_jk = 1), m×K.
    pub p_s: DMatrix<f64>,
    /// Threshold for the discretized selection indicator.
    pub tau: f64,

    pub u_mean: DMatrix<f64>,
    pub u_log: DMatrix<f64>,
    pub v_mean: DMatrix<f64>,
    pub v_log: DMatrix<f64>,
    /// `1{p_s > tau}`, m×K.
    pub s_tilde: DMatrix<bool>,
    /// Genes with an all-zero column.
    pub uninformative: Vec<bool>,
}

impl VariationalState {
    /// State with the given Gamma parameters, every indicator probability at 1
    /// and moments refreshed.
    pub fn new(
        family: ModelFamily,
        a_shape: DMatrix<f64>,
        a_rate: DMatrix<f64>,
        b_shape: DMatrix<f64>,
        b_rate: DMatrix<f64>,
        tau: f64,
    ) -> Self {
        let (n, k) = a_shape.shape();
        let m = b_shape.nrows();
        let mut state = VariationalState {
            family,
            a_shape,
            a_rate,
            b_shape,
            b_rate,
            p_d: DMatrix::from_element(n, m, 1.0),
            p_s: DMatrix::from_element(m, k, 1.0),
            tau,
            u_mean: DMatrix::zeros(n, k),
            u_log: DMatrix::zeros(n, k),
            v_mean: DMatrix::zeros(m, k),
            v_log: DMatrix::zeros(m, k),
            s_tilde: DMatrix::from_element(m, k, true),
            uninformative: vec![false; m],
        };
        state.refresh_u();
        state.refresh_v();
        state.refresh_s_tilde();
        state
    }

    pub fn n(&self) -> usize {
        self.a_shape.nrows()
    }

    pub fn m(&self) -> usize {
        self.b_shape.nrows()
    }

    pub fn k(&self) -> usize {
        self.a_shape.ncols()
    }

    pub fn refresh_u(&mut self) {
        gamma_moments(
            &self.a_shape,
            &self.a_rate,
            &mut self.u_mean,
            &mut self.u_log,
        );
    }

    pub fn refresh_v(&mut self) {
        gamma_moments(
            &self.b_shape,
            &self.b_rate,
            &mut self.v_mean,
            &mut self.v_log,
        );
    }

    pub fn refresh_s_tilde(&mut self) {
        let tau = self.tau;
        self.s_tilde = self.p_s.map(|p| p > tau);
    }

    /// `Ŝ ⊙ V̂'`, the posterior mean of the loadings `V = S V'`.
    pub fn loadings_mean(&self) -> DMatrix<f64> {
        self.p_s.component_mul(&self.v_mean)
    }

    /// `Λ̃_ij = Σ_k Ŝ_jk Û_ik V̂'_jk`, n×m.
    pub fn rate_matrix(&self) -> DMatrix<f64> {
        &self.u_mean * self.loadings_mean().transpose()
    }

    /// Checks the structural invariants: positive Gamma parameters,
    /// probabilities in [0, 1], `p_d = 1` on observed counts, and cached
    /// moments matching the parameters exactly.
    pub fn check_invariants(&self, x: &CountMatrix) -> Result<(), String> {
        let positive = |m: &DMatrix<f64>| m.iter().all(|&v| v > 0.0 && v.is_finite());
        if !(positive(&self.a_shape)
            && positive(&self.a_rate)
            && positive(&self.b_shape)
            && positive(&self.b_rate))
        {
            return Err("non-positive Gamma parameter".into());
        }
        let prob = |m: &DMatrix<f64>| m.iter().all(|p| (0.0..=1.0).contains(p));
        if !(prob(&self.p_d) && prob(&self.p_s)) {
            return Err("probability outside [0, 1]".into());
        }
        if let Some((i, j, _)) = x.iter_nonzero().find(|&(i, j, _)| self.p_d[(i, j)] != 1.0) {
            return Err(format!("p_d[{i},{j}] != 1 on a nonzero count"));
        }
        let mut probe = self.clone();
        probe.refresh_u();
        probe.refresh_v();
        probe.refresh_s_tilde();
        if probe.u_mean != self.u_mean
            || probe.u_log != self.u_log
            || probe.v_mean != self.v_mean
            || probe.v_log != self.v_log
            || probe.s_tilde != self.s_tilde
        {
            return Err("cached moments out of date".into());
        }
        Ok(())
    }
}

fn gamma_moments(
    shape: &DMatrix<f64>,
    rate: &DMatrix<f64>,
    mean: &mut DMatrix<f64>,
    log_mean: &mut DMatrix<f64>,
) {
    for ((&a, &b), (mu, lmu)) in shape
        .iter()
        .zip(rate.iter())
        .zip(mean.iter_mut().zip(log_mean.iter_mut()))
    {
        *mu = a / b;
        *lmu = digamma(a) - b.ln();
    }
}

/// Per-cell multinomial allocation probabilities `r_ijk` for the cells with
/// a positive count, stored in the count matrix's row-major nonzero order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultinomialAllocation {
    k: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    /// Genes where every `S̃_jk` was zero and the uniform fallback was used.
    pub fallback_genes: Vec<bool>,
}

impl MultinomialAllocation {
    pub(crate) fn new(
        k: usize,
        probs: Vec<f64>,
        log_probs: Vec<f64>,
        fallback_genes: Vec<bool>,
    ) -> Self {
        debug_assert_eq!(probs.len() % k, 0);
        debug_assert_eq!(probs.len(), log_probs.len());
        MultinomialAllocation {
            k,
            probs,
            log_probs,
            fallback_genes,
        }
    }

    /// Allocation with equal weight on every factor.
    pub fn uniform(x: &CountMatrix, k: usize) -> Self {
        let len = x.nnz() * k;
        Self::new(
            k,
            vec![1.0 / k as f64; len],
            vec![-(k as f64).ln(); len],
            vec![false; x.n_cols()],
        )
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_cells(&self) -> usize {
        self.probs.len() / self.k
    }

    /// `(r_ijk)_k` of the `cell`-th nonzero entry.
    pub fn cell(&self, cell: usize) -> &[f64] {
        &self.probs[cell * self.k..(cell + 1) * self.k]
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f64], &mut [f64], &mut Vec<bool>) {
        (
            &mut self.probs,
            &mut self.log_probs,
            &mut self.fallback_genes,
        )
    }

    /// `(ln r_ijk)_k` of the `cell`-th nonzero entry; `-inf` where `r = 0`
    /// by exclusion.
    pub fn log_cell(&self, cell: usize) -> &[f64] {
        &self.log_probs[cell * self.k..(cell + 1) * self.k]
    }
}
