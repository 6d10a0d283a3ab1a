//! The variational EM driver: sweeps, convergence, restarts and the
//! select-then-refit pipeline.

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{FitConfig, FitReport, FittedModel};
use super::elbo::elbo;
use super::init::init_state;
use super::mstep::m_step;
use super::state::{MultinomialAllocation, VariationalState};
use super::updates::{update_a, update_b, update_pd, update_ps, update_r_into};
use crate::error::{Error, Result};
use crate::model::{explained_deviance, CountMatrix, HyperParams, ModelFamily};

/// Variational rates outside this range abort a restart.
const RATE_BOUNDS: (f64, f64) = (1e-8, 1e8);

/// ELBO drops smaller than this fraction of |ELBO| count as rounding.
const DECREASE_TOL: f64 = 1e-12;

/// log-loadings written for genes left out of a refit.
pub const UNSELECTED_LOG_LOADING: f64 = -27.631_021_115_928_547; // ln 1e-12

struct RestartOutcome {
    state: VariationalState,
    hyper: HyperParams,
    r: MultinomialAllocation,
    trace: Vec<f64>,
    decreases: Vec<(usize, f64)>,
    converged: bool,
}

/// The RNG of one restart: the run seed, on its own stream.
pub fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let denom = old.norm();
    if denom == 0.0 {
        return if new.norm() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
    }
    (new - old).norm() / denom
}

fn check_rates(state: &VariationalState) -> Result<()> {
    let (lo, hi) = RATE_BOUNDS;
    let bad = state
        .a_rate
        .iter()
        .chain(state.b_rate.iter())
        .find(|&&r| !(lo..=hi).contains(&r));
    match bad {
        Some(r) => Err(Error::Numerical(format!(
            "variational rate {r:e} left [{lo:e}, {hi:e}]; factors diverged"
        ))),
        None => Ok(()),
    }
}

/// One full sweep `r → a → b → p_D → p_S → M-step`.
/// The fresh allocation is written into `r`.
pub fn sweep(
    state: &mut VariationalState,
    hyper: &HyperParams,
    x: &CountMatrix,
    r: &mut MultinomialAllocation,
    fix_scale: bool,
) -> Result<HyperParams> {
    update_r_into(state, x, r);
    update_a(state, x, r, hyper);
    update_b(state, x, r, hyper);
    update_pd(state, x, hyper);
    update_ps(state, x, r, hyper);
    m_step(state, hyper, fix_scale)
}

fn run_restart(x: &CountMatrix, config: &FitConfig, restart: usize) -> Result<RestartOutcome> {
    let mut rng = restart_rng(config.seed, restart);
    let (mut state, mut hyper) = init_state(x, config, &mut rng)?;
    let fix_scale = config.resolved_fix_scale(x.n_rows(), x.n_cols());
    let mut trace = Vec::new();
    let mut decreases = Vec::new();
    let mut converged = false;
    let mut r = MultinomialAllocation::uniform(x, config.k);

    for sweep_idx in 0..config.max_sweeps {
        let u_prev = state.u_mean.clone();
        let v_prev = state.loadings_mean();
        hyper = sweep(&mut state, &hyper, x, &mut r, fix_scale)?;
        check_rates(&state)?;
        let value = elbo(&state, &hyper, x, &r)?;
        if let Some(&last) = trace.last() {
            let drop = (last - value) / f64::abs(last);
            if drop > DECREASE_TOL {
                debug!("restart {restart}, sweep {sweep_idx}: ELBO fell by {drop:e} (relative)");
                decreases.push((sweep_idx, drop));
            }
        }
        trace.push(value);
        let gap = relative_change(&state.u_mean, &u_prev)
            .max(relative_change(&state.loadings_mean(), &v_prev));
        if gap < config.rel_tol {
            converged = true;
            break;
        }
    }
    if !decreases.is_empty() && !config.family.sparse() {
        warn!(
            "restart {restart}: ELBO decreased in {} sweeps",
            decreases.len()
        );
    }
    Ok(RestartOutcome {
        state,
        hyper,
        r,
        trace,
        decreases,
        converged,
    })
}

fn fitted_model(state: &VariationalState, hyper: HyperParams) -> FittedModel {
    let (v_mean, v_log) = if state.family.sparse() {
        (
            state.loadings_mean(),
            state.v_log.zip_map(&state.p_s, |lv, p| lv + p.ln()),
        )
    } else {
        (state.v_mean.clone(), state.v_log.clone())
    };
    FittedModel {
        family: state.family,
        u_mean: state.u_mean.clone(),
        u_log: state.u_log.clone(),
        v_mean,
        v_log,
        p_s: state.p_s.clone(),
        p_d: state.p_d.clone(),
        s_tilde: state.s_tilde.clone(),
        hyper,
    }
}

/// Fits the model with `config.n_restarts` independent restarts and keeps
/// the one with the highest final ELBO (lowest index on ties).
pub fn fit(x: &CountMatrix, config: &FitConfig) -> Result<(FittedModel, FitReport)> {
    config.validate()?;
    if x.is_all_zero() {
        return Err(Error::Degenerate("degenerate all-zero input".into()));
    }
    let outcomes: Vec<Result<RestartOutcome>> = (0..config.n_restarts)
        .into_par_iter()
        .map(|restart| run_restart(x, config, restart))
        .collect();

    let mut restart_elbos = Vec::with_capacity(outcomes.len());
    let mut best: Option<usize> = None;
    let mut first_error = None;
    for (idx, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok(o) => {
                let value = *o.trace.last().expect("at least one sweep");
                restart_elbos.push(Some(value));
                if best.is_none_or(|b| value > restart_elbos[b].expect("best restart succeeded")) {
                    best = Some(idx);
                }
            }
            Err(e) => {
                warn!("restart {idx} failed: {e}");
                restart_elbos.push(None);
                first_error.get_or_insert(idx);
            }
        }
    }
    let Some(best) = best else {
        let idx = first_error.expect("no restart succeeded");
        return Err(outcomes
            .into_iter()
            .nth(idx)
            .and_then(|o| o.err())
            .expect("failed restart"));
    };
    let outcome = outcomes
        .into_iter()
        .nth(best)
        .expect("index in range")
        .ok()
        .expect("best restart succeeded");

    let model = fitted_model(&outcome.state, outcome.hyper);
    let report = FitReport {
        explained_deviance: model.explained_deviance(x)?,
        sweeps: outcome.trace.len(),
        elbo_trace: outcome.trace,
        converged: outcome.converged,
        restart: best,
        restart_elbos,
        elbo_decreases: outcome.decreases,
        selected_genes: config.family.sparse().then(|| model.selected_genes()),
        fallback_genes: positions(&outcome.r.fallback_genes),
        uninformative_genes: positions(&outcome.state.uninformative),
    };
    Ok((model, report))
}

fn positions(flags: &[bool]) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter_map(|(j, &f)| f.then_some(j))
        .collect()
}

/// Result of the select-then-refit pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ReestimateResult {
    /// Refit on the selected genes with zero-filled rows elsewhere, or the
    /// first-stage model when nothing was selected.
    pub model: FittedModel,
    pub report: FitReport,
    pub first_stage: FittedModel,
    pub first_report: FitReport,
    pub selected: Vec<bool>,
    /// True when no gene was selected and the first stage was returned.
    pub fell_back: bool,
}

impl ReestimateResult {
    /// Predicted counts of the whole pipeline: the refit on selected genes
    /// and the sparse fit on the rest.
    pub fn fitted_intensity(&self) -> DMatrix<f64> {
        let mut out = self.model.fitted_intensity();
        if !self.fell_back {
            let first = self.first_stage.fitted_intensity();
            for (j, _) in self.selected.iter().enumerate().filter(|(_, &s)| !s) {
                out.set_column(j, &first.column(j));
            }
        }
        out
    }

    /// Explained deviance of [`Self::fitted_intensity`].
    pub fn explained_deviance(&self, x: &CountMatrix) -> Result<f64> {
        explained_deviance(x, &self.fitted_intensity())
    }
}

/// Sparse fit, then a zero-inflated refit restricted to the genes any factor
/// selected.
pub fn fit_sparse_reestimate(x: &CountMatrix, config: &FitConfig) -> Result<ReestimateResult> {
    if config.family != ModelFamily::SparseZiGap {
        return Err(Error::InvalidInput(
            "re-estimation needs the sparse family".into(),
        ));
    }
    let (first_stage, first_report) = fit(x, config)?;
    let selected = first_stage.selected_genes();
    let genes = positions(&selected);
    if genes.is_empty() {
        warn!("no gene selected; keeping the sparse fit");
        return Ok(ReestimateResult {
            model: first_stage.clone(),
            report: first_report.clone(),
            first_stage,
            first_report,
            selected,
            fell_back: true,
        });
    }

    let sub = x.select_columns(&genes)?;
    let refit_config = FitConfig {
        family: ModelFamily::ZiGap,
        ..config.clone()
    };
    let (refit, report) = fit(&sub, &refit_config)?;

    let (n, m, k) = (x.n_rows(), x.n_cols(), config.k);
    let mut model = FittedModel {
        family: ModelFamily::ZiGap,
        u_mean: refit.u_mean,
        u_log: refit.u_log,
        v_mean: DMatrix::zeros(m, k),
        v_log: DMatrix::from_element(m, k, UNSELECTED_LOG_LOADING),
        p_s: DMatrix::zeros(m, k),
        p_d: DMatrix::from_element(n, m, 1.0),
        s_tilde: DMatrix::from_element(m, k, false),
        hyper: HyperParams::standard(m, k, ModelFamily::ZiGap),
    };
    model.hyper.alpha_shape = refit.hyper.alpha_shape;
    model.hyper.alpha_rate = refit.hyper.alpha_rate;
    model.hyper.beta_shape = refit.hyper.beta_shape;
    model.hyper.beta_rate = refit.hyper.beta_rate;
    for (sub_j, &j) in genes.iter().enumerate() {
        model.v_mean.set_row(j, &refit.v_mean.row(sub_j));
        model.v_log.set_row(j, &refit.v_log.row(sub_j));
        model.p_s.set_row(j, &refit.p_s.row(sub_j));
        model.s_tilde.set_row(j, &refit.s_tilde.row(sub_j));
        model.p_d.set_column(j, &refit.p_d.column(sub_j));
        model.hyper.pi_d[j] = refit.hyper.pi_d[sub_j];
    }
    Ok(ReestimateResult {
        model,
        report,
        first_stage,
        first_report,
        selected,
        fell_back: false,
    })
}
