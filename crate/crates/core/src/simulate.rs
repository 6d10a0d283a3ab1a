//! Block-structured, zero-inflated synthetic count data with known cell
//! groups, gene groups and noise genes.

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Beta, Distribution, Exp, Poisson};

use crate::error::{Error, Result};
use crate::model::CountMatrix;

/// Parameters of a synthetic data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub n_cell_groups: usize,
    pub n_gene_groups: usize,
    /// Mean cell score inside each group's block; drawn from {100, 250}
    /// when `None`.
    pub group_means: Option<Vec<f64>>,
    /// Cell separability in (0, 1); off-block mean is `(1 − θ)·mean(α)`.
    pub theta_u: f64,
    /// Mean gene loading inside a block.
    pub gene_mean: f64,
    /// Gene separability in (0, 1).
    pub theta_v: f64,
    /// Expected fraction of noise genes, in [0, 1).
    pub noise_prop_mean: f64,
    /// Expected probability of *observing* a count; `None` disables dropout.
    pub dropout_mean: Option<f64>,
    /// Concentration of the Beta draws for proportions.
    pub beta_concentration: f64,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            n: 100,
            m: 800,
            k: 40,
            n_cell_groups: 3,
            n_gene_groups: 2,
            group_means: None,
            theta_u: 0.8,
            gene_mean: 80.0,
            theta_v: 0.8,
            noise_prop_mean: 0.4,
            dropout_mean: Some(0.5),
            beta_concentration: 100.0,
            seed: 0,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.k <= self.n_cell_groups || self.k <= self.n_gene_groups {
            return Err(Error::InvalidInput(
                "K must exceed the number of cell and gene groups".into(),
            ));
        }
        if self.n_cell_groups == 0 || self.n_gene_groups == 0 {
            return Err(Error::InvalidInput(
                "group counts must be at least 1".into(),
            ));
        }
        if self.n < self.n_cell_groups {
            return Err(Error::InvalidInput(format!(
                "{} cells cannot form {} groups",
                self.n, self.n_cell_groups
            )));
        }
        if self.m < self.n_gene_groups {
            return Err(Error::InvalidInput(format!(
                "{} genes cannot form {} groups",
                self.m, self.n_gene_groups
            )));
        }
        let open = |p: f64| p > 0.0 && p < 1.0;
        if !open(self.theta_u) || !open(self.theta_v) {
            return Err(Error::InvalidInput(
                "separabilities must lie in (0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.noise_prop_mean) {
            return Err(Error::InvalidInput(
                "noise proportion must lie in [0, 1)".into(),
            ));
        }
        if self.dropout_mean.is_some_and(|d| !open(d)) {
            return Err(Error::InvalidInput(
                "dropout mean must lie in (0, 1)".into(),
            ));
        }
        if let Some(means) = &self.group_means {
            if means.len() != self.n_cell_groups || means.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::InvalidInput(
                    "one positive mean per cell group required".into(),
                ));
            }
        }
        if !(self.gene_mean > 0.0 && self.beta_concentration > 0.0) {
            return Err(Error::InvalidInput(
                "gene mean and concentration must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A simulated data set with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub x: CountMatrix,
    pub u_true: DMatrix<f64>,
    pub v_true: DMatrix<f64>,
    /// Cell group per cell, 1-based.
    pub cell_labels: Vec<usize>,
    /// Gene group per gene, 1-based; 0 marks a noise gene.
    pub gene_labels: Vec<usize>,
    /// `D_ij`: false where the count was dropped.
    pub dropout_mask: DMatrix<bool>,
    pub pi_d: Vec<f64>,
}

/// Sizes of `groups` contiguous blocks covering `total`; the remainder goes
/// to the last block.
fn block_sizes(total: usize, groups: usize) -> Vec<usize> {
    let base = total / groups;
    let mut sizes = vec![base; groups];
    sizes[groups - 1] += total - base * groups;
    sizes
}

/// Block index of every position.
fn block_labels(total: usize, groups: usize) -> Vec<usize> {
    block_sizes(total, groups)
        .into_iter()
        .enumerate()
        .flat_map(|(g, s)| std::iter::repeat_n(g, s))
        .collect()
}

fn exponential(mean: f64) -> Exp<f64> {
    Exp::new(1.0 / mean).expect("positive mean")
}

/// Diagonal-block matrix: row block g and column block g share mean
/// `in_block[g]`, every other entry has mean `off_block`. Entries are
/// Gamma(1) (exponential).
fn block_matrix<R: Rng>(
    rows: usize,
    cols: usize,
    in_block: &[f64],
    off_block: f64,
    rng: &mut R,
) -> DMatrix<f64> {
    let groups = in_block.len();
    let row_block = block_labels(rows, groups);
    let col_block = block_labels(cols, groups);
    let inside: Vec<Exp<f64>> = in_block.iter().map(|&a| exponential(a)).collect();
    let outside = exponential(off_block);
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for k in 0..cols {
            out[(i, k)] = if row_block[i] == col_block[k] {
                inside[row_block[i]].sample(rng)
            } else {
                outside.sample(rng)
            };
        }
    }
    out
}

fn beta_proportion<R: Rng>(mean: f64, concentration: f64, rng: &mut R) -> f64 {
    Beta::new(mean * concentration, (1.0 - mean) * concentration)
        .expect("mean in (0, 1)")
        .sample(rng)
}

/// Cell scores with `N` diagonal blocks, plus the 1-based group of each
/// cell.
pub fn generate_u<R: Rng>(
    scenario: &SimScenario,
    rng: &mut R,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    scenario.validate()?;
    let groups = scenario.n_cell_groups;
    let means = match &scenario.group_means {
        Some(m) => m.clone(),
        None => (0..groups)
            .map(|_| *[100.0, 250.0].choose(rng).expect("non-empty"))
            .collect(),
    };
    let avg = means.iter().sum::<f64>() / groups as f64;
    let u = block_matrix(
        scenario.n,
        scenario.k,
        &means,
        (1.0 - scenario.theta_u) * avg,
        rng,
    );
    let labels = block_labels(scenario.n, groups)
        .into_iter()
        .map(|g| g + 1)
        .collect();
    Ok((u, labels))
}

/// Gene loadings: informative genes first in `M` diagonal blocks, then noise
/// genes labelled 0.
pub fn generate_v<R: Rng>(
    scenario: &SimScenario,
    rng: &mut R,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    scenario.validate()?;
    let (m, k, groups) = (scenario.m, scenario.k, scenario.n_gene_groups);
    let informative_frac = if scenario.noise_prop_mean == 0.0 {
        1.0
    } else {
        beta_proportion(
            1.0 - scenario.noise_prop_mean,
            scenario.beta_concentration,
            rng,
        )
    };
    let m0 = ((informative_frac * m as f64).round() as usize).clamp(groups, m);
    let noise_mean = (1.0 - scenario.theta_v) * scenario.gene_mean;
    let informative = block_matrix(m0, k, &vec![scenario.gene_mean; groups], noise_mean, rng);
    let noise = exponential(noise_mean);
    let mut v = DMatrix::zeros(m, k);
    v.rows_mut(0, m0).copy_from(&informative);
    for j in m0..m {
        for l in 0..k {
            v[(j, l)] = noise.sample(rng);
        }
    }
    let mut labels: Vec<usize> = block_labels(m0, groups)
        .into_iter()
        .map(|g| g + 1)
        .collect();
    labels.resize(m, 0);
    Ok((v, labels))
}

/// Draws the dropout probabilities, the dropout mask and the counts for
/// given factors.
pub fn generate_counts<R: Rng>(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    scenario: &SimScenario,
    rng: &mut R,
) -> Result<(CountMatrix, DMatrix<bool>, Vec<f64>)> {
    if u.ncols() != v.ncols() {
        return Err(Error::shape(
            format!("{} factor columns", u.ncols()),
            v.ncols(),
        ));
    }
    let m = v.nrows();
    let pi_d: Vec<f64> = match scenario.dropout_mean {
        Some(mean) => (0..m)
            .map(|_| beta_proportion(mean, scenario.beta_concentration, rng))
            .collect(),
        None => vec![1.0; m],
    };
    let (x, mask) = draw_counts(u, v, &pi_d, rng)?;
    Ok((x, mask, pi_d))
}

/// `X_ij = 0` if `D_ij = 0`, else `Poisson((U Vᵀ)_ij)`, with
/// `D_ij ~ Bernoulli(π_j)`.
fn draw_counts<R: Rng>(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    pi_d: &[f64],
    rng: &mut R,
) -> Result<(CountMatrix, DMatrix<bool>)> {
    let (n, m) = (u.nrows(), v.nrows());
    let rate = u * v.transpose();
    let gates: Vec<Bernoulli> = pi_d
        .iter()
        .map(|&p| Bernoulli::new(p).expect("probability"))
        .collect();
    let mut mask = DMatrix::from_element(n, m, true);
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let observed = gates[j].sample(rng);
            mask[(i, j)] = observed;
            if !observed || rate[(i, j)] <= 0.0 {
                continue;
            }
            let count = Poisson::new(rate[(i, j)])
                .map_err(|e| Error::Numerical(e.to_string()))?
                .sample(rng) as u64;
            if count > 0 {
                triplets.push((i, j, count));
            }
        }
    }
    Ok((CountMatrix::from_triplets(n, m, &triplets)?, mask))
}

/// Generates a complete data set from `scenario.seed`.
pub fn simulate(scenario: &SimScenario) -> Result<SimOutput> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let (u_true, cell_labels) = generate_u(scenario, &mut rng)?;
    let (v_true, gene_labels) = generate_v(scenario, &mut rng)?;
    let (x, dropout_mask, pi_d) = generate_counts(&u_true, &v_true, scenario, &mut rng)?;
    Ok(SimOutput {
        x,
        u_true,
        v_true,
        cell_labels,
        gene_labels,
        dropout_mask,
        pi_d,
    })
}
