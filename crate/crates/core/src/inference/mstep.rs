//! Empirical-Bayes updates of the prior parameters.

use log::warn;

use super::state::VariationalState;
use crate::error::{Error, Result};
use crate::model::HyperParams;
use crate::special::{digamma, inv_digamma, trigamma};

/// Upper bound on a fitted Gamma shape; reached when the moments carry no
/// spread.
pub const SHAPE_CAP: f64 = 1e6;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 100;

/// A fitted Gamma prior together with whether the shape hit [`SHAPE_CAP`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFit {
    pub shape: f64,
    pub rate: f64,
    pub capped: bool,
}

/// Maximises `Σ E[log Gamma(θ | shape, rate)]` given `mean = mean E[θ]` and
/// `mean_log = mean E[log θ]`.
///
/// With a free rate this reduces to the one-dimensional equation
/// `ln a − ψ(a) = ln(mean) − mean_log`, solved by Newton's method in `1/a`.
/// With `fixed_rate`, only the shape moves: `a = ψ⁻¹(ln rate + mean_log)`.
pub fn fit_gamma_prior(mean: f64, mean_log: f64, fixed_rate: Option<f64>) -> Result<GammaFit> {
    if !(mean.is_finite() && mean > 0.0 && mean_log.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite moments in M-step (mean {mean}, mean log {mean_log})"
        )));
    }
    if let Some(rate) = fixed_rate {
        let shape = inv_digamma(rate.ln() + mean_log);
        return Ok(if shape > SHAPE_CAP || !shape.is_finite() {
            GammaFit {
                shape: SHAPE_CAP,
                rate,
                capped: true,
            }
        } else {
            GammaFit {
                shape,
                rate,
                capped: false,
            }
        });
    }

    let gap = mean.ln() - mean_log;
    let capped = |shape: f64| GammaFit {
        shape,
        rate: shape / mean,
        capped: true,
    };
    if !(gap > 0.0) || 1.0 / gap > 2.0 * SHAPE_CAP {
        return Ok(capped(SHAPE_CAP));
    }
    let mut shape = (3.0 - gap + ((gap - 3.0).powi(2) + 24.0 * gap).sqrt()) / (12.0 * gap);
    for _ in 0..NEWTON_MAX_ITERS {
        let f = shape.ln() - digamma(shape) - gap;
        let fprime = 1.0 / shape - trigamma(shape);
        let inv = 1.0 / shape + f / (shape * shape * fprime);
        let next = if inv > 0.0 { 1.0 / inv } else { shape * 2.0 };
        let done = ((next - shape) / shape).abs() < NEWTON_TOL;
        shape = next;
        if done || shape > SHAPE_CAP {
            break;
        }
    }
    if shape > SHAPE_CAP {
        return Ok(capped(SHAPE_CAP));
    }
    Ok(GammaFit {
        shape,
        rate: shape / mean,
        capped: false,
    })
}

fn column_moments(
    mean: &nalgebra::DMatrix<f64>,
    log: &nalgebra::DMatrix<f64>,
    k: usize,
) -> (f64, f64) {
    let rows = mean.nrows() as f64;
    (mean.column(k).sum() / rows, log.column(k).sum() / rows)
}

/// M-step: refits the Gamma priors of U and V' per factor and the indicator
/// priors per gene. With `fix_scale`, the rates are kept from `previous`.
pub fn m_step(
    state: &VariationalState,
    previous: &HyperParams,
    fix_scale: bool,
) -> Result<HyperParams> {
    let k = state.k();
    let mut hyper = previous.clone();
    for l in 0..k {
        let (mu, ml) = column_moments(&state.u_mean, &state.u_log, l);
        let fit = fit_gamma_prior(mu, ml, fix_scale.then_some(previous.alpha_rate[l]))?;
        if fit.capped {
            warn!("factor {l}: cell-score prior shape capped at {SHAPE_CAP}");
        }
        hyper.alpha_shape[l] = fit.shape;
        hyper.alpha_rate[l] = fit.rate;

        let (mu, ml) = column_moments(&state.v_mean, &state.v_log, l);
        let fit = fit_gamma_prior(mu, ml, fix_scale.then_some(previous.beta_rate[l]))?;
        if fit.capped {
            warn!("factor {l}: gene-loading prior shape capped at {SHAPE_CAP}");
        }
        hyper.beta_shape[l] = fit.shape;
        hyper.beta_rate[l] = fit.rate;
    }
    if state.family.zero_inflated() {
        let n = state.n() as f64;
        for (j, pi) in hyper.pi_d.iter_mut().enumerate() {
            *pi = state.p_d.column(j).sum() / n;
        }
    }
    if state.family.sparse() {
        for (j, pi) in hyper.pi_s.iter_mut().enumerate() {
            *pi = state.p_s.row(j).sum() / k as f64;
        }
    }
    Ok(hyper)
}
