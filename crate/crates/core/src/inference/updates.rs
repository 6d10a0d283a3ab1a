//! Coordinate updates of the variational E-step.
//!
//! Count statistics are accumulated over nonzero cells only: since the
//! allocation of a zero count is identically zero, `Σ_j Ẑ_ijk` and
//! `Σ_i Ẑ_ijk` never need the full n×m×K tensor.

use nalgebra::DMatrix;

use super::state::{MultinomialAllocation, VariationalState};
use crate::model::{CountMatrix, HyperParams, ModelFamily};
use crate::special::{logit, sigmoid};

/// Logits are clamped to this range before the sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

fn clamped_sigmoid(z: f64) -> f64 {
    sigmoid(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
}

/// `r_ijk ∝ S̃_jk exp(E[log U_ik] + E[log V'_jk])` on every nonzero cell.
///
/// A gene whose `S̃_j·` is entirely zero falls back to uniform weights and
/// is flagged in [`MultinomialAllocation::fallback_genes`].
pub fn update_r(state: &VariationalState, x: &CountMatrix) -> MultinomialAllocation {
    let mut r = MultinomialAllocation::uniform(x, state.k());
    update_r_into(state, x, &mut r);
    r
}

/// [`update_r`] writing into an existing allocation of the same shape.
pub fn update_r_into(state: &VariationalState, x: &CountMatrix, r: &mut MultinomialAllocation) {
    let k = state.k();
    assert_eq!((r.k(), r.n_cells()), (k, x.nnz()), "allocation shape");
    let (probs, log_probs, fallback) = r.parts_mut();
    fallback.clear();
    fallback.resize(x.n_cols(), false);
    // k×n and k×m copies so each cell reads contiguous factor slices
    let u_log = state.u_log.transpose();
    let v_log = state.v_log.transpose();
    let s_tilde = state.s_tilde.transpose();
    // exp(log U + log V - max_i - max_j) factorizes, so the exponentials are
    // taken once per row and per gene rather than once per cell
    let (u_max, u_exp) = shifted_exp(u_log.as_slice(), None, k);
    let (v_max, v_exp) = shifted_exp(v_log.as_slice(), Some(s_tilde.as_slice()), k);
    for (cell, (i, j, _)) in x.iter_nonzero().enumerate() {
        let range = cell * k..(cell + 1) * k;
        let (out, logs) = (&mut probs[range.clone()], &mut log_probs[range]);
        let (ul, vl) = (
            &u_log.as_slice()[i * k..(i + 1) * k],
            &v_log.as_slice()[j * k..(j + 1) * k],
        );
        let st = &s_tilde.as_slice()[j * k..(j + 1) * k];
        if v_max[j] == f64::NEG_INFINITY {
            out.fill(1.0 / k as f64);
            logs.fill(-(k as f64).ln());
            fallback[j] = true;
            continue;
        }
        let (ue, ve) = (&u_exp[i * k..(i + 1) * k], &v_exp[j * k..(j + 1) * k]);
        let mut total = 0.0;
        for ((o, &a), &b) in out.iter_mut().zip(ue).zip(ve) {
            *o = a * b;
            total += *o;
        }
        if total > FACTORED_FLOOR {
            let shift = u_max[i] + v_max[j] + total.ln();
            for (l, (o, lg)) in out.iter_mut().zip(logs.iter_mut()).enumerate() {
                *o /= total;
                *lg = if st[l] {
                    ul[l] + vl[l] - shift
                } else {
                    f64::NEG_INFINITY
                };
            }
        } else {
            softmax_cell(ul, vl, st, out, logs);
        }
    }
}

/// Below this the factored weights lose precision and the cell is
/// normalized directly.
const FACTORED_FLOOR: f64 = 1e-200;

/// Per-column maximum over allowed entries and `exp(value - max)` (zero where
/// not allowed) of a column-major matrix with `k` rows.
fn shifted_exp(values: &[f64], allowed: Option<&[bool]>, k: usize) -> (Vec<f64>, Vec<f64>) {
    let ok = |idx: usize| allowed.is_none_or(|a| a[idx]);
    let mut maxima = Vec::with_capacity(values.len() / k);
    let mut exps = vec![0.0; values.len()];
    for (c, column) in values.chunks_exact(k).enumerate() {
        let base = c * k;
        let max = (0..k)
            .filter(|&l| ok(base + l))
            .map(|l| column[l])
            .fold(f64::NEG_INFINITY, f64::max);
        if max > f64::NEG_INFINITY {
            for l in (0..k).filter(|&l| ok(base + l)) {
                exps[base + l] = (column[l] - max).exp();
            }
        }
        maxima.push(max);
    }
    (maxima, exps)
}

fn softmax_cell(ul: &[f64], vl: &[f64], st: &[bool], out: &mut [f64], logs: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (l, o) in logs.iter_mut().enumerate() {
        *o = if st[l] {
            ul[l] + vl[l]
        } else {
            f64::NEG_INFINITY
        };
        max = max.max(*o);
    }
    let mut total = 0.0;
    for (o, lg) in out.iter_mut().zip(logs.iter_mut()) {
        *lg -= max;
        *o = lg.exp();
        total += *o;
    }
    let log_total = total.ln();
    for (o, lg) in out.iter_mut().zip(logs.iter_mut()) {
        *o /= total;
        *lg -= log_total;
    }
}

pub fn update_a(
    state: &mut VariationalState,
    x: &CountMatrix,
    r: &MultinomialAllocation,
    hyper: &HyperParams,
) {
    if state.family == ModelFamily::Gap {
        update_a_gap(state, x, r, hyper);
    } else {
        update_a_general(state, x, r, hyper);
    }
}

/// Full update of q(U) with dropout and selection weights.
pub fn update_a_general(
    state: &mut VariationalState,
    x: &CountMatrix,
    r: &MultinomialAllocation,
    hyper: &HyperParams,
) {
    let (n, k) = (state.n(), state.k());
    let weighted_v = state.loadings_mean();
    let mut shape_acc = vec![0.0; k];
    for i in 0..n {
        shape_acc.fill(0.0);
        for (off, (j, xij)) in x.row(i).enumerate() {
            let cell = x.row_offset(i) + off;
            let d = state.p_d[(i, j)];
            for (l, acc) in shape_acc.iter_mut().enumerate() {
                let z = xij as f64 * r.cell(cell)[l];
                *acc += d * state.p_s[(j, l)] * z;
            }
        }
        for l in 0..k {
            state.a_shape[(i, l)] = hyper.alpha_shape[l] + shape_acc[l];
        }
    }
    // Σ_j D̂_ij Ŝ_jk V̂'_jk, accumulated in gene order
    let mut rate_acc = DMatrix::<f64>::zeros(n, k);
    for (j, d) in state.p_d.as_slice().chunks_exact(n).enumerate() {
        for (l, acc) in rate_acc.as_mut_slice().chunks_exact_mut(n).enumerate() {
            let w = weighted_v[(j, l)];
            acc.iter_mut().zip(d).for_each(|(a, &dij)| *a += dij * w);
        }
    }
    for l in 0..k {
        for i in 0..n {
            state.a_rate[(i, l)] = hyper.alpha_rate[l] + rate_acc[(i, l)];
        }
    }
    state.refresh_u();
}

pub fn update_a_gap(
    state: &mut VariationalState,
    x: &CountMatrix,
    r: &MultinomialAllocation,
    hyper: &HyperParams,
) {
    let (n, k) = (state.n(), state.k());
    let v_sums: Vec<f64> = (0..k)
        .map(|l| state.v_mean.column(l).iter().fold(0.0, |acc, &v| acc + v))
        .collect();
    let mut shape_acc = vec![0.0; k];
    for i in 0..n {
        shape_acc.fill(0.0);
        for (off, (_, xij)) in x.row(i).enumerate() {
            let cell = x.row_offset(i) + off;
            for (l, acc) in shape_acc.iter_mut().enumerate() {
                *acc += xij as f64 * r.cell(cell)[l];
            }
        }
        for l in 0..k {
            state.a_shape[(i, l)] = hyper.alpha_shape[l] + shape_acc[l];
            state.a_rate[(i, l)] = hyper.alpha_rate[l] + v_sums[l];
        }
    }
    state.refresh_u();
}

/// Update of q(V'): shape `β₁ + Ŝ Σ_i D̂ Ẑ`, rate `β₂ + Ŝ Σ_i D̂ Û`.
pub fn update_b(
    state: &mut VariationalState,
    x: &CountMatrix,
    r: &MultinomialAllocation,
    hyper: &HyperParams,
) {
    if state.family == ModelFamily::Gap {
        update_b_gap(state, x, r, hyper);
    } else {
        update_b_general(state, x, r, hyper);
    }
}

pub fn update_b_general(
    state: &mut VariationalState,
    x: &CountMatrix,
    r: &MultinomialAllocation,
    hyper: &HyperParams,
) {
    let (m, k) = (state.m(), state.k());
    let z_sums = allocated_counts(state, x, r, true);
    let du = dropout_weighted_u(state);
    for j in 0..m {
        for l in 0..k {
            let s = state.p_s[(j, l)];
            state.b_shape[(j, l)] = hyper.beta_shape[l] + s * z_sums[(j, l)];
            state.b_rate[(j, l)] = hyper.beta_rate[l] + s * du[(j, l)];
        }
    }
    state.refresh_v();
}

/// Standard GaP update of q(V').
pub fn update_b_gap(
    state: &mut VariationalState,
    x: &CountMatrix,
    r: &MultinomialAllocation,
    hyper: &HyperParams,
) {
    let (m, k) = (state.m(), state.k());
    let z_sums = allocated_counts(state, x, r, false);
    let u_sums: Vec<f64> = (0..k)
        .map(|l| state.u_mean.column(l).iter().fold(0.0, |acc, &u| acc + u))
        .collect();
    for j in 0..m {
        for l in 0..k {
            state.b_shape[(j, l)] = hyper.beta_shape[l] + z_sums[(j, l)];
            state.b_rate[(j, l)] = hyper.beta_rate[l] + u_sums[l];
        }
    }
    state.refresh_v();
}

/// `Σ_i D̂_ij Ẑ_ijk` (or `Σ_i Ẑ_ijk` when unweighted), m×K.
fn allocated_counts(
    state: &VariationalState,
    x: &CountMatrix,
    r: &MultinomialAllocation,
    weighted: bool,
) -> DMatrix<f64> {
    let mut sums = DMatrix::zeros(state.m(), state.k());
    for (cell, (i, j, xij)) in x.iter_nonzero().enumerate() {
        let d = state.p_d[(i, j)];
        for (l, &rl) in r.cell(cell).iter().enumerate() {
            let z = xij as f64 * rl;
            sums[(j, l)] += if weighted { d * z } else { z };
        }
    }
    sums
}

/// `Σ_i D̂_ij Û_ik`, m×K, summed in increasing `i`.
/// `Σ_i D̂_ij Û_ik`, m×K, accumulated in cell order.
fn dropout_weighted_u(state: &VariationalState) -> DMatrix<f64> {
    let (m, k) = (state.m(), state.k());
    let d_t = state.p_d.transpose();
    let mut out = DMatrix::<f64>::zeros(m, k);
    for (i, d) in d_t.as_slice().chunks_exact(m).enumerate() {
        for (l, acc) in out.as_mut_slice().chunks_exact_mut(m).enumerate() {
            let u = state.u_mean[(i, l)];
            acc.iter_mut().zip(d).for_each(|(a, &dij)| *a += dij * u);
        }
    }
    out
}

pub fn update_pd(state: &mut VariationalState, x: &CountMatrix, hyper: &HyperParams) {
    if !state.family.zero_inflated() {
        return;
    }
    let rate = state.rate_matrix();
    let (n, m) = (state.n(), state.m());
    let prior: Vec<f64> = hyper.pi_d.iter().map(|&p| logit(p)).collect();
    for i in 0..n {
        let mut nz = x.row(i).peekable();
        for j in 0..m {
            if matches!(nz.peek(), Some(&(c, _)) if c == j) {
                nz.next();
                state.p_d[(i, j)] = 1.0;
                continue;
            }
            state.p_d[(i, j)] = clamped_sigmoid(prior[j] - rate[(i, j)]);
        }
    }
}

/// Selection probabilities:
/// `logit p_jk = logit π_j − Σ_i D̂ Û V̂' + Σ_i D̂ Ẑ (E log U + E log V')`,
/// then `S̃` is refreshed against `τ`. No-op without sparsity.
pub fn update_ps(
    state: &mut VariationalState,
    x: &CountMatrix,
    r: &MultinomialAllocation,
    hyper: &HyperParams,
) {
    if !state.family.sparse() {
        return;
    }
    let (m, k) = (state.m(), state.k());
    let du = dropout_weighted_u(state);
    let mut gain = DMatrix::<f64>::zeros(m, k);
    for (cell, (i, j, xij)) in x.iter_nonzero().enumerate() {
        let d = state.p_d[(i, j)];
        for (l, &rl) in r.cell(cell).iter().enumerate() {
            gain[(j, l)] += d * xij as f64 * rl * (state.u_log[(i, l)] + state.v_log[(j, l)]);
        }
    }
    for j in 0..m {
        let prior = logit(hyper.pi_s[j]);
        for l in 0..k {
            let z = prior - du[(j, l)] * state.v_mean[(j, l)] + gain[(j, l)];
            state.p_s[(j, l)] = clamped_sigmoid(z);
        }
    }
    state.refresh_s_tilde();
}
