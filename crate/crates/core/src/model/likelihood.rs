//! Poisson likelihood, Bregman divergence and (explained) deviance.
//!
//! Conventions shared by every function here: `0·log 0 = 0`, and an
//! intensity of exactly zero at a cell with a positive count is floored at
//! [`RATE_FLOOR`] so the result stays finite.

use nalgebra::DMatrix;

use super::CountMatrix;
use crate::error::{Error, Result};
use crate::special::ln_factorial;

/// Intensity used in place of `λ = 0` where `x > 0`.
pub const RATE_FLOOR: f64 = 1e-12;

fn check(x: &CountMatrix, lambda: &DMatrix<f64>) -> Result<()> {
    if lambda.nrows() != x.n_rows() || lambda.ncols() != x.n_cols() {
        return Err(Error::shape(
            format!("{}x{} intensity", x.n_rows(), x.n_cols()),
            format!("{}x{}", lambda.nrows(), lambda.ncols()),
        ));
    }
    if let Some(bad) = lambda.iter().find(|&&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "intensity entries must be finite and >= 0, found {bad}"
        )));
    }
    Ok(())
}

#[inline]
fn floored(x: u64, lambda: f64) -> f64 {
    if x > 0 && lambda == 0.0 {
        RATE_FLOOR
    } else {
        lambda
    }
}

/// Calls `f(x_ij, λ_ij)` for every cell in row-major order.
fn for_each_cell(x: &CountMatrix, lambda: &DMatrix<f64>, mut f: impl FnMut(u64, f64)) {
    for i in 0..x.n_rows() {
        let mut nz = x.row(i).peekable();
        for j in 0..x.n_cols() {
            let xij = match nz.peek() {
                Some(&(c, v)) if c == j => {
                    nz.next();
                    v
                }
                _ => 0,
            };
            f(xij, lambda[(i, j)]);
        }
    }
}

/// `Σ_ij [x log λ − λ − log x!]`.
pub fn poisson_loglik(x: &CountMatrix, lambda: &DMatrix<f64>) -> Result<f64> {
    check(x, lambda)?;
    let mut total = 0.0;
    for_each_cell(x, lambda, |xij, l| {
        let l = floored(xij, l);
        if xij > 0 {
            let xf = xij as f64;
            total += xf * l.ln() - l - ln_factorial(xij);
        } else {
            total -= l;
        }
    });
    Ok(total)
}

/// Poisson Bregman divergence `Σ_ij [x log(x/λ) − x + λ]`.
pub fn bregman_divergence(x: &CountMatrix, lambda: &DMatrix<f64>) -> Result<f64> {
    check(x, lambda)?;
    let mut total = 0.0;
    for_each_cell(x, lambda, |xij, l| {
        total += bregman_term(xij, floored(xij, l))
    });
    Ok(total)
}

/// One cell of the divergence, clamped at zero against rounding.
#[inline]
pub(crate) fn bregman_term(x: u64, lambda: f64) -> f64 {
    if x == 0 {
        return lambda;
    }
    let xf = x as f64;
    (xf * (xf / lambda).ln() - xf + lambda).max(0.0)
}

/// Poisson deviance, `−2 (ℓ(Λ) − ℓ(X)) = 2 D(X | Λ)`.
pub fn deviance(x: &CountMatrix, lambda: &DMatrix<f64>) -> Result<f64> {
    Ok(2.0 * bregman_divergence(x, lambda)?)
}

/// The column-mean intensity `1_n · X̄`.
pub fn null_intensity(x: &CountMatrix) -> DMatrix<f64> {
    let means = x.column_means();
    DMatrix::from_fn(x.n_rows(), x.n_cols(), |_, j| means[j])
}

/// Fraction of the null-to-saturated log-likelihood gap recovered by `Λ̂`:
/// `[ℓ(Λ̂) − ℓ(1·X̄)] / [ℓ(X) − ℓ(1·X̄)]`.
///
/// Returned raw. Fits worse than the column-mean model come out negative.
pub fn explained_deviance(x: &CountMatrix, lambda_hat: &DMatrix<f64>) -> Result<f64> {
    check(x, lambda_hat)?;
    // ℓ(Λ) − ℓ(X) = −D(X|Λ), so the ratio is 1 − D(X|Λ̂) / D(X|null).
    let null_div = bregman_divergence(x, &null_intensity(x))?;
    if !(null_div > 0.0) {
        return Err(Error::Degenerate("saturated equals null model".into()));
    }
    let fit_div = bregman_divergence(x, lambda_hat)?;
    Ok(1.0 - fit_div / null_div)
}

/// PCA explained-variance ratio `Σ_{k≤K} σ_k² / Σ_ℓ σ_ℓ²` of a
/// column-centred real matrix.
pub fn explained_variance_gaussian(x: &DMatrix<f64>, k: usize) -> Result<f64> {
    let sigma = centred_singular_values(x)?;
    let tol =
        sigma.first().copied().unwrap_or(0.0) * x.nrows().max(x.ncols()) as f64 * f64::EPSILON;
    let rank = sigma.iter().filter(|&&s| s > tol).count();
    if k == 0 || k > rank {
        return Err(Error::InvalidInput(format!(
            "latent dimension {k} outside 1..={rank} (rank)"
        )));
    }
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let kept: f64 = sigma[..k].iter().map(|s| s * s).sum();
    Ok(kept / total)
}

/// Singular values of a centred matrix, sorted in decreasing order.
pub(crate) fn centred_singular_values(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let means = x.row_mean();
    if means.norm() > 1e-8 {
        return Err(Error::InvalidInput(format!(
            "matrix is not column-centred (column mean norm {:.3e})",
            means.norm()
        )));
    }
    let mut sigma: Vec<f64> = x
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::ln_gamma;

    fn cm(rows: &[Vec<u64>]) -> CountMatrix {
        CountMatrix::from_rows(rows).unwrap()
    }

    fn dm(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn loglik_examples() {
        assert!((poisson_loglik(&cm(&[vec![1]]), &dm(1, 1, &[1.0])).unwrap() + 1.0).abs() < 1e-15);
        assert!((poisson_loglik(&cm(&[vec![0]]), &dm(1, 1, &[2.0])).unwrap() + 2.0).abs() < 1e-15);
        let want = 3.0 * 2f64.ln() - 2.0 - 6f64.ln();
        let got = poisson_loglik(&cm(&[vec![3]]), &dm(1, 1, &[2.0])).unwrap();
        assert!((got - want).abs() < 1e-13);
        assert!((got + 1.712318).abs() < 1e-6);
    }

    #[test]
    fn loglik_floor_keeps_finite() {
        let v = poisson_loglik(&cm(&[vec![4]]), &dm(1, 1, &[0.0])).unwrap();
        assert!(v.is_finite() && v < -100.0);
    }

    #[test]
    fn bregman_examples() {
        let x = cm(&[vec![0, 5], vec![2, 1]]);
        assert_eq!(bregman_divergence(&x, &x.to_f64_matrix()).unwrap(), 0.0);
        assert_eq!(
            bregman_divergence(&cm(&[vec![0]]), &dm(1, 1, &[2.0])).unwrap(),
            2.0
        );
        let want = 3.0 * 3f64.ln() - 3.0 + 1.0;
        let got = bregman_divergence(&cm(&[vec![3]]), &dm(1, 1, &[1.0])).unwrap();
        assert!((got - want).abs() < 1e-14);
        assert!((got - 1.295836).abs() < 1e-6);
    }

    #[test]
    fn deviance_examples() {
        let x = cm(&[vec![3, 0]]);
        assert_eq!(deviance(&x, &x.to_f64_matrix()).unwrap(), 0.0);
        assert_eq!(deviance(&cm(&[vec![0]]), &dm(1, 1, &[2.0])).unwrap(), 4.0);
        let got = deviance(&cm(&[vec![3]]), &dm(1, 1, &[1.0])).unwrap();
        assert!((got - 2.591673).abs() < 1e-6);
    }

    #[test]
    fn shape_and_sign_errors() {
        let x = cm(&[vec![1, 2]]);
        assert!(matches!(
            poisson_loglik(&x, &dm(1, 1, &[1.0])),
            Err(Error::Shape { .. })
        ));
        assert!(bregman_divergence(&x, &dm(1, 2, &[1.0, -1.0])).is_err());
        assert!(deviance(&x, &dm(1, 2, &[f64::NAN, 1.0])).is_err());
    }

    #[test]
    fn explained_deviance_baselines() {
        let x = cm(&[vec![1, 0], vec![3, 2]]);
        assert_eq!(explained_deviance(&x, &x.to_f64_matrix()).unwrap(), 1.0);
        assert_eq!(explained_deviance(&x, &null_intensity(&x)).unwrap(), 0.0);
    }

    #[test]
    fn explained_deviance_three_likelihood_oracle() {
        let x = cm(&[vec![1, 0], vec![3, 2]]);
        let lam = dm(2, 2, &[2.0, 1.0, 2.0, 1.0]);
        // direct evaluation of the three Poisson log-likelihoods
        let ll = |l: [f64; 4]| -> f64 {
            let xs = [1.0f64, 0.0, 3.0, 2.0];
            xs.iter()
                .zip(l)
                .map(|(&x, l)| if x > 0.0 { x * l.ln() } else { 0.0 } - l - ln_gamma(x + 1.0))
                .sum()
        };
        let fit = ll([2.0, 1.0, 2.0, 1.0]);
        let sat = ll([1.0, 0.0, 3.0, 2.0]);
        let null = ll([2.0, 1.0, 2.0, 1.0]);
        let want = (fit - null) / (sat - null);
        let got = explained_deviance(&x, &lam).unwrap();
        // column means are (2, 1), so this Λ̂ is the null model itself
        assert!((got - want).abs() < 1e-12);
        assert!(got.abs() < 1e-12);

        let lam2 = dm(2, 2, &[1.5, 0.5, 2.5, 1.5]);
        let fit2 = ll([1.5, 0.5, 2.5, 1.5]);
        let want2 = (fit2 - null) / (sat - null);
        let got2 = explained_deviance(&x, &lam2).unwrap();
        assert!((got2 - want2).abs() < 1e-12, "{got2} vs {want2}");
        assert!(got2 > 0.0 && got2 < 1.0);
    }

    #[test]
    fn explained_deviance_can_go_negative() {
        let x = cm(&[vec![1, 0], vec![3, 2]]);
        let bad = dm(2, 2, &[50.0, 50.0, 50.0, 50.0]);
        assert!(explained_deviance(&x, &bad).unwrap() < 0.0);
    }

    #[test]
    fn explained_deviance_degenerate() {
        let x = cm(&[vec![2, 0], vec![2, 0]]);
        let err = explained_deviance(&x, &x.to_f64_matrix()).unwrap_err();
        assert!(err.to_string().contains("saturated equals null model"));
    }

    #[test]
    fn explained_variance_examples() {
        let x = dm(3, 2, &[1.0, -1.0, 0.0, 2.0, -1.0, -1.0]);
        assert!((explained_variance_gaussian(&x, 2).unwrap() - 1.0).abs() < 1e-12);
        // rank-1: outer product of centred vectors
        let a = [1.0, -2.0, 1.0];
        let b = [3.0, -1.0];
        let r1 = DMatrix::from_fn(3, 2, |i, j| a[i] * b[j]);
        assert!((explained_variance_gaussian(&r1, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(explained_variance_gaussian(&r1, 2).is_err());
        let uncentred = dm(2, 1, &[1.0, 2.0]);
        assert!(explained_variance_gaussian(&uncentred, 1).is_err());
    }
}
