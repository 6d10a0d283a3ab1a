//! Starting point of the variational EM.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::config::FitConfig;
use super::mstep::m_step;
use super::state::VariationalState;
use crate::error::{Error, Result};
use crate::model::{CountMatrix, HyperParams};

/// Shape of the Gamma distribution the initial variational shapes are
/// drawn from.
const SEED_SHAPE: f64 = 2.0;

/// Variability-based prior selection probability of each gene,
/// `1 − exp(−ŝ_j / m̂_j)`, with `m̂_j` the mean of the nonzero counts and
/// `ŝ_j` the standard deviation over all cells. All-zero genes get 0.
pub fn selection_prior(x: &CountMatrix) -> Vec<f64> {
    let n = x.n_rows() as f64;
    let mut sum = vec![0.0; x.n_cols()];
    let mut sum_sq = vec![0.0; x.n_cols()];
    let mut nnz = vec![0usize; x.n_cols()];
    for (_, j, v) in x.iter_nonzero() {
        let v = v as f64;
        sum[j] += v;
        sum_sq[j] += v * v;
        nnz[j] += 1;
    }
    let dof = if x.n_rows() > 1 { n - 1.0 } else { n };
    (0..x.n_cols())
        .map(|j| {
            if nnz[j] == 0 {
                return 0.0;
            }
            let mean_nz = sum[j] / nnz[j] as f64;
            let mean = sum[j] / n;
            let var = ((sum_sq[j] - n * mean * mean) / dof).max(0.0);
            variability_prior(var.sqrt(), mean_nz)
        })
        .collect()
}

fn variability_prior(sd: f64, mean_nonzero: f64) -> f64 {
    1.0 - (-sd / mean_nonzero).exp()
}

/// Random starting state plus the priors fitted to it.
///
/// Initial shapes are Gamma draws with mean `sqrt(mean(X) / K)` and all
/// rates are 1, so `Σ_k Û_ik V̂'_jk ≈ mean(X)`. Dropout probabilities start
/// at each gene's nonzero fraction, selection probabilities at
/// [`selection_prior`].
pub fn init_state<R: Rng>(
    x: &CountMatrix,
    config: &FitConfig,
    rng: &mut R,
) -> Result<(VariationalState, HyperParams)> {
    if x.is_all_zero() {
        return Err(Error::Degenerate("degenerate all-zero input".into()));
    }
    let (n, m, k) = (x.n_rows(), x.n_cols(), config.k);
    let family = config.family;
    let scale = (x.mean() / k as f64).sqrt();
    let seed =
        Gamma::new(SEED_SHAPE, scale / SEED_SHAPE).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut draw = |rows| DMatrix::from_fn(rows, k, |_, _| seed.sample(rng).max(f64::MIN_POSITIVE));
    let a_shape = draw(n);
    let b_shape = draw(m);
    let mut state = VariationalState::new(
        family,
        a_shape,
        DMatrix::from_element(n, k, 1.0),
        b_shape,
        DMatrix::from_element(m, k, 1.0),
        config.tau,
    );

    let nonzeros = x.column_nonzeros();
    state.uninformative = nonzeros.iter().map(|&c| c == 0).collect();
    if family.zero_inflated() {
        for j in 0..m {
            let frac = nonzeros[j] as f64 / n as f64;
            state.p_d.column_mut(j).fill(frac);
        }
        for (i, j, _) in x.iter_nonzero() {
            state.p_d[(i, j)] = 1.0;
        }
    }
    if family.sparse() {
        for (j, p) in selection_prior(x).into_iter().enumerate() {
            state.p_s.row_mut(j).fill(p);
        }
        state.refresh_s_tilde();
    }

    let hyper = m_step(&state, &HyperParams::standard(m, k, family), false)?;
    Ok((state, hyper))
}
