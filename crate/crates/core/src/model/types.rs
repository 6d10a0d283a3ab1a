use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Non-negative factors `U` (n×K) and `V` (m×K) with `Λ = U·Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl FactorPair {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(Error::shape(
                format!("V with {} columns", u.ncols()),
                format!("{} columns", v.ncols()),
            ));
        }
        if u.ncols() == 0 {
            return Err(Error::InvalidInput(
                "latent dimension must be at least 1".into(),
            ));
        }
        if u.iter()
            .chain(v.iter())
            .any(|&x| !(x >= 0.0) || !x.is_finite())
        {
            return Err(Error::InvalidInput(
                "factor entries must be finite and non-negative".into(),
            ));
        }
        Ok(FactorPair { u, v })
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    pub fn reconstruction(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }

    /// `Σ_{k ∈ factors} U_{·k} V_{·k}ᵀ`.
    pub fn partial_reconstruction(&self, factors: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.u.nrows(), self.v.nrows());
        for &k in factors {
            out.ger(1.0, &self.u.column(k), &self.v.column(k), 1.0);
        }
        out
    }

    /// Factors reordered so that new factor `t` is old factor `order[t]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k()];
        if order.len() != self.k()
            || order
                .iter()
                .any(|&k| k >= self.k() || std::mem::replace(&mut seen[k], true))
        {
            return Err(Error::InvalidInput(format!(
                "{order:?} is not a permutation of 0..{}",
                self.k()
            )));
        }
        Ok(FactorPair {
            u: self.u.select_columns(order),
            v: self.v.select_columns(order),
        })
    }
}

/// The three nested model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelFamily {
    /// Plain Gamma-Poisson factor model.
    Gap,
    /// Gamma-Poisson with per-gene dropout.
    ZiGap,
    /// Zero-inflated Gamma-Poisson with spike-and-slab loadings.
    SparseZiGap,
}

impl ModelFamily {
    pub fn zero_inflated(self) -> bool {
        !matches!(self, ModelFamily::Gap)
    }

    pub fn sparse(self) -> bool {
        matches!(self, ModelFamily::SparseZiGap)
    }

    pub fn from_flags(zero_inflated: bool, sparse: bool) -> Result<Self> {
        match (zero_inflated, sparse) {
            (false, false) => Ok(ModelFamily::Gap),
            (true, false) => Ok(ModelFamily::ZiGap),
            (true, true) => Ok(ModelFamily::SparseZiGap),
            (false, true) => Err(Error::InvalidInput(
                "sparsity without zero-inflation is not a supported family".into(),
            )),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Gap => "gap",
            ModelFamily::ZiGap => "zigap",
            ModelFamily::SparseZiGap => "spcmf",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gap" => Ok(ModelFamily::Gap),
            "zigap" | "zi-gap" | "pcmf" => Ok(ModelFamily::ZiGap),
            "spcmf" | "sparse" | "sparsezigap" => Ok(ModelFamily::SparseZiGap),
            other => Err(Error::InvalidInput(format!(
                "unknown model family '{other}'"
            ))),
        }
    }
}

/// Prior parameters of the Gamma factors and of the dropout / selection
/// indicators. Gamma pairs are (shape, rate).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub alpha_shape: Vec<f64>,
    pub alpha_rate: Vec<f64>,
    pub beta_shape: Vec<f64>,
    pub beta_rate: Vec<f64>,
    /// Prior selection probability per gene.
    pub pi_s: Vec<f64>,
    /// Prior probability per gene of *not* dropping out.
    pub pi_d: Vec<f64>,
    pub zero_inflated: bool,
    pub sparse: bool,
}

impl HyperParams {
    /// Unit Gamma priors with the indicator layers switched off.
    pub fn standard(n_genes: usize, k: usize, family: ModelFamily) -> Self {
        HyperParams {
            alpha_shape: vec![1.0; k],
            alpha_rate: vec![1.0; k],
            beta_shape: vec![1.0; k],
            beta_rate: vec![1.0; k],
            pi_s: vec![1.0; n_genes],
            pi_d: vec![1.0; n_genes],
            zero_inflated: family.zero_inflated(),
            sparse: family.sparse(),
        }
    }

    pub fn k(&self) -> usize {
        self.alpha_shape.len()
    }

    pub fn family(&self) -> Result<ModelFamily> {
        ModelFamily::from_flags(self.zero_inflated, self.sparse)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.alpha_shape.len();
        if k == 0
            || [&self.alpha_rate, &self.beta_shape, &self.beta_rate]
                .iter()
                .any(|v| v.len() != k)
        {
            return Err(Error::shape(
                format!("{k} Gamma pairs"),
                "ragged hyperparameters",
            ));
        }
        if self.pi_s.len() != self.pi_d.len() {
            return Err(Error::shape(
                "pi_s and pi_d of equal length",
                "ragged probabilities",
            ));
        }
        let gamma_ok = [
            &self.alpha_shape,
            &self.alpha_rate,
            &self.beta_shape,
            &self.beta_rate,
        ]
        .iter()
        .all(|v| v.iter().all(|&x| x > 0.0 && x.is_finite()));
        if !gamma_ok {
            return Err(Error::InvalidInput(
                "Gamma shapes and rates must be positive".into(),
            ));
        }
        if self
            .pi_s
            .iter()
            .chain(&self.pi_d)
            .any(|&p| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::InvalidInput(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        if !self.sparse && self.pi_s.iter().any(|&p| p != 1.0) {
            return Err(Error::InvalidInput(
                "pi_s must be 1 when sparsity is off".into(),
            ));
        }
        if !self.zero_inflated && self.pi_d.iter().any(|&p| p != 1.0) {
            return Err(Error::InvalidInput(
                "pi_d must be 1 when zero-inflation is off".into(),
            ));
        }
        self.family().map(|_| ())
    }
}
