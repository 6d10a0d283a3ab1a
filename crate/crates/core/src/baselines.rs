//! Reference methods: Poisson NMF on raw counts and PCA on log counts.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{
    bregman_divergence, explained_variance_gaussian, CountMatrix, FactorPair, RATE_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    PoissonNmf,
    Pca,
}

impl BaselineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::PoissonNmf => "poisson-nmf",
            BaselineMethod::Pca => "pca",
        }
    }
}

/// Scores `u` (n×K) and loadings `v` (m×K) of a baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub method: BaselineMethod,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Divergence after each NMF iteration (first entry: initial value).
    pub objective_trace: Vec<f64>,
    /// Leading singular values of the centred log counts (PCA).
    pub singular_values: Vec<f64>,
    /// PCA explained-variance ratio of the kept components.
    pub explained_variance: Option<f64>,
    pub converged: bool,
}

/// Loop controls for [`poisson_nmf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            max_iters: 500,
            tol: 1e-5,
        }
    }
}

/// `λ_ij` on every nonzero cell, in the matrix's nonzero order.
fn nonzero_rates(x: &CountMatrix, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Vec<f64> {
    x.iter_nonzero()
        .map(|(i, j, _)| {
            (0..u.ncols())
                .map(|l| u[(i, l)] * v[(j, l)])
                .sum::<f64>()
                .max(RATE_FLOOR)
        })
        .collect()
}

/// One multiplicative KL update of `u` then `v`.
pub fn nmf_step(x: &CountMatrix, u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    let k = u.ncols();
    let rates = nonzero_rates(x, u, v);
    let mut num = DMatrix::<f64>::zeros(u.nrows(), k);
    for (cell, (i, j, xij)) in x.iter_nonzero().enumerate() {
        let ratio = xij as f64 / rates[cell];
        for l in 0..k {
            num[(i, l)] += ratio * v[(j, l)];
        }
    }
    for l in 0..k {
        let denom = v.column(l).sum();
        for i in 0..u.nrows() {
            u[(i, l)] *= if denom > 0.0 {
                num[(i, l)] / denom
            } else {
                0.0
            };
        }
    }

    let rates = nonzero_rates(x, u, v);
    let mut num = DMatrix::<f64>::zeros(v.nrows(), k);
    for (cell, (i, j, xij)) in x.iter_nonzero().enumerate() {
        let ratio = xij as f64 / rates[cell];
        for l in 0..k {
            num[(j, l)] += ratio * u[(i, l)];
        }
    }
    for l in 0..k {
        let denom = u.column(l).sum();
        for j in 0..v.nrows() {
            v[(j, l)] *= if denom > 0.0 {
                num[(j, l)] / denom
            } else {
                0.0
            };
        }
    }
}

/// Poisson NMF (generalised KL divergence) from a random start with entries
/// `uniform(0.5, 1.5)·sqrt(mean(X)/K)`.
pub fn poisson_nmf<R: Rng>(
    x: &CountMatrix,
    k: usize,
    config: NmfConfig,
    rng: &mut R,
) -> Result<BaselineModel> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if x.is_all_zero() {
        return Err(Error::Degenerate("degenerate all-zero input".into()));
    }
    let scale = (x.mean() / k as f64).sqrt();
    let mut draw = |rows| DMatrix::from_fn(rows, k, |_, _| rng.random_range(0.5..1.5) * scale);
    let u = draw(x.n_rows());
    let v = draw(x.n_cols());
    poisson_nmf_from(x, u, v, config)
}

/// Poisson NMF started from the given factors.
pub fn poisson_nmf_from(
    x: &CountMatrix,
    mut u: DMatrix<f64>,
    mut v: DMatrix<f64>,
    config: NmfConfig,
) -> Result<BaselineModel> {
    let start = FactorPair::new(u.clone(), v.clone())?;
    if u.nrows() != x.n_rows() || v.nrows() != x.n_cols() {
        return Err(Error::shape(
            format!("{}x{} factors", x.n_rows(), x.n_cols()),
            format!("{}x{}", u.nrows(), v.nrows()),
        ));
    }
    let mut trace = vec![bregman_divergence(x, &start.reconstruction())?];
    let mut converged = false;
    for _ in 0..config.max_iters {
        nmf_step(x, &mut u, &mut v);
        let obj = bregman_divergence(x, &(&u * v.transpose()))?;
        if !obj.is_finite() {
            return Err(Error::Numerical("non-finite NMF objective".into()));
        }
        let prev = *trace.last().expect("non-empty");
        trace.push(obj);
        if (prev - obj).abs() <= config.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(BaselineModel {
        method: BaselineMethod::PoissonNmf,
        u,
        v,
        objective_trace: trace,
        singular_values: Vec::new(),
        explained_variance: None,
        converged,
    })
}

/// `log(1 + x)` with every column centred.
pub fn centred_log_counts(x: &CountMatrix) -> DMatrix<f64> {
    let mut y = x.to_f64_matrix().map(f64::ln_1p);
    for mut col in y.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    y
}

/// PCA of centred `log(1 + X)`: scores are left singular vectors times
/// singular values, loadings the right singular vectors, each column's
/// largest-magnitude loading made positive.
pub fn pca_logcounts(x: &CountMatrix, k: usize) -> Result<BaselineModel> {
    let (n, m) = (x.n_rows(), x.n_cols());
    if k == 0 || k > n.min(m) {
        return Err(Error::InvalidInput(format!(
            "K = {k} outside 1..={}",
            n.min(m)
        )));
    }
    let y = centred_log_counts(x);
    let svd = y.clone().svd(true, true);
    let left = svd.u.expect("requested");
    let right_t = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let mut u = DMatrix::zeros(n, k);
    let mut v = DMatrix::zeros(m, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let sigma = svd.singular_values[idx];
        let loading = right_t.row(idx).transpose();
        let pivot =
            loading.iter().copied().fold(
                0.0f64,
                |best, w| if w.abs() > best.abs() { w } else { best },
            );
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        v.set_column(c, &(loading * sign));
        u.set_column(c, &(left.column(idx) * (sigma * sign)));
    }
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let explained_variance = explained_variance_gaussian(&y, k).ok();
    Ok(BaselineModel {
        method: BaselineMethod::Pca,
        u,
        v,
        objective_trace: Vec::new(),
        singular_values,
        explained_variance,
        converged: true,
    })
}
