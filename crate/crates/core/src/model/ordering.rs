//! Factor ordering by cumulative divergence and the elbow curve built on it.

use super::likelihood::bregman_divergence;
use super::{CountMatrix, FactorPair};
use crate::error::{Error, Result};

fn check_shapes(model: &FactorPair, x: &CountMatrix) -> Result<()> {
    if model.u().nrows() != x.n_rows() || model.v().nrows() != x.n_cols() {
        return Err(Error::shape(
            format!("factors for a {}x{} matrix", x.n_rows(), x.n_cols()),
            format!(
                "U {}x{}, V {}x{}",
                model.u().nrows(),
                model.k(),
                model.v().nrows(),
                model.k()
            ),
        ));
    }
    Ok(())
}

/// Greedy factor ordering: at each step append the factor that minimises
/// `D(X | Σ_{chosen} U_k V_kᵀ)`. Ties go to the lower factor index.
/// Returned indices are 0-based.
pub fn order_factors(model: &FactorPair, x: &CountMatrix) -> Result<Vec<usize>> {
    check_shapes(model, x)?;
    let k = model.k();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut remaining: Vec<usize> = (0..k).collect();
    while !remaining.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &cand) in remaining.iter().enumerate() {
            chosen.push(cand);
            let d = bregman_divergence(x, &model.partial_reconstruction(&chosen))?;
            chosen.pop();
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((pos, d));
            }
        }
        let (pos, _) = best.expect("remaining is non-empty");
        chosen.push(remaining.remove(pos));
    }
    Ok(chosen)
}

/// `k ↦ D(X | U_{1:k} V_{1:k}ᵀ)` for the factors in their current order.
pub fn deviance_curve(model: &FactorPair, x: &CountMatrix) -> Result<Vec<f64>> {
    check_shapes(model, x)?;
    let mut prefix = Vec::with_capacity(model.k());
    (0..model.k())
        .map(|k| {
            prefix.push(k);
            bregman_divergence(x, &model.partial_reconstruction(&prefix))
        })
        .collect()
}
