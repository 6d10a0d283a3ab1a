//! Batch commands: `simulate`, `fit`, `evaluate`, `compare` and
//! `deviance-curve`.
//!
//! Every command reads and writes plain files. `fit` leaves a `manifest.txt`
//! of `key=value` lines in its output directory; `fit --manifest` replays it.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::baselines::{pca_logcounts, poisson_nmf, NmfConfig};
use crate::error::{Error, Result};
use crate::inference::{
    fit, fit_sparse_reestimate, restart_rng, selection_prior, FitConfig, FitReport, FittedModel,
    UNSELECTED_LOG_LOADING,
};
use crate::io::{
    read_counts, read_labels, read_matrix_csv, write_counts, write_labels, write_matrix_csv,
    LabeledCounts,
};
use crate::metrics::{adjusted_rand_index, kmeans, selection_accuracy};
use crate::model::{
    deviance_curve, explained_deviance, order_factors, CountMatrix, FactorPair, ModelFamily,
};
use crate::simulate::{simulate, SimOutput, SimScenario};

/// k-means restarts used whenever an embedding is clustered.
pub const KMEANS_RESTARTS: usize = 10;

#[derive(Debug, Parser)]
#[command(
    name = "pcmf",
    version,
    about = "Probabilistic count matrix factorization for single-cell counts"
)]
pub struct RunConfig {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic count matrix with known cell and gene groups.
    Simulate(SimulateArgs),
    /// Fit a factor model to a count matrix.
    Fit(FitArgs),
    /// Score a fit against known labels.
    Evaluate(EvaluateArgs),
    /// Run every method over a grid of synthetic scenarios.
    Compare(CompareArgs),
    /// Divergence of a fit as its ordered factors are added one by one.
    DevianceCurve(CurveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Gap,
    Zigap,
    Spcmf,
}

impl From<Family> for ModelFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Gap => ModelFamily::Gap,
            Family::Zigap => ModelFamily::ZiGap,
            Family::Spcmf => ModelFamily::SparseZiGap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixScale {
    /// Fix the prior rates only when the matrix is square.
    Auto,
    On,
    Off,
}

impl FixScale {
    fn resolve(self) -> Option<bool> {
        match self {
            FixScale::Auto => None,
            FixScale::On => Some(true),
            FixScale::Off => Some(false),
        }
    }
}

fn value_name<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_owned()
}

/// Expected observation probability of the generator, or no dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutLevel(pub Option<f64>);

impl FromStr for DropoutLevel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("none") {
            return Ok(DropoutLevel(None));
        }
        s.parse::<f64>()
            .map(|v| DropoutLevel(Some(v)))
            .map_err(|_| format!("'{s}' is neither a number nor 'none'"))
    }
}

impl fmt::Display for DropoutLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v}"),
            None => f.write_str("none"),
        }
    }
}

/// Inference settings shared by `fit` and `compare`.
#[derive(Debug, Clone, Args)]
pub struct SolverFlags {
    /// Latent dimension.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Independent restarts; the highest final ELBO wins.
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Relative change of the factors that stops a restart.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_sweeps: usize,
    /// Threshold on the selection probability.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, value_enum, default_value_t = FixScale::Auto)]
    pub fix_scale: FixScale,
}

impl SolverFlags {
    pub fn fit_config(&self, family: ModelFamily, seed: u64) -> FitConfig {
        FitConfig {
            max_sweeps: self.max_sweeps,
            rel_tol: self.tol,
            n_restarts: self.restarts,
            tau: self.tau,
            seed,
            fix_scale: self.fix_scale.resolve(),
            ..FitConfig::new(self.k, family)
        }
    }
}

/// Generator settings other than noise, dropout and seed.
#[derive(Debug, Clone, Args)]
pub struct ScenarioFlags {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 800)]
    pub m: usize,
    /// Latent dimension of the generator.
    #[arg(long = "sim-k", default_value_t = 40)]
    pub sim_k: usize,
    #[arg(long, default_value_t = 3)]
    pub cell_groups: usize,
    #[arg(long, default_value_t = 2)]
    pub gene_groups: usize,
    /// Comma-separated block means for the cell groups; drawn from
    /// {100, 250} when absent.
    #[arg(long, value_delimiter = ',')]
    pub group_means: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.8)]
    pub theta_u: f64,
    #[arg(long, default_value_t = 80.0)]
    pub gene_mean: f64,
    #[arg(long, default_value_t = 0.8)]
    pub theta_v: f64,
    /// Concentration of the Beta draws for proportions.
    #[arg(long, default_value_t = 100.0)]
    pub concentration: f64,
}

impl ScenarioFlags {
    pub fn scenario(&self, noise: f64, dropout: DropoutLevel, seed: u64) -> SimScenario {
        SimScenario {
            n: self.n,
            m: self.m,
            k: self.sim_k,
            n_cell_groups: self.cell_groups,
            n_gene_groups: self.gene_groups,
            group_means: self.group_means.clone(),
            theta_u: self.theta_u,
            gene_mean: self.gene_mean,
            theta_v: self.theta_v,
            noise_prop_mean: noise,
            dropout_mean: dropout.0,
            beta_concentration: self.concentration,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatrixFormat {
    Csv,
    Mtx,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioFlags,
    /// Expected fraction of noise genes.
    #[arg(long, default_value_t = 0.4)]
    pub noise: f64,
    /// Expected probability of observing a count, or `none`.
    #[arg(long, default_value = "0.5")]
    pub dropout: DropoutLevel,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MatrixFormat::Csv)]
    pub format: MatrixFormat,
    /// Output directory.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Count matrix: CSV with gene names in the header and cell ids in the
    /// first column, or Matrix Market (`.mtx`).
    #[arg(long, short, required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Replay the settings of an earlier run.
    #[arg(long, conflicts_with = "input")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Family::Spcmf)]
    pub family: Family,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the sparse fit instead of refitting on the selected genes.
    #[arg(long)]
    pub no_reestimate: bool,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Genes with initial selection probability at or below this are
    /// dropped before fitting; 0 disables the filter.
    #[arg(long, default_value_t = 0.2)]
    pub filter_threshold: f64,
    /// Genes detected in a smaller fraction of cells are dropped.
    #[arg(long = "min-expr-frac", default_value_t = 0.05)]
    pub min_expr_frac: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Output directory of `fit`.
    #[arg(long)]
    pub fit_dir: PathBuf,
    /// `id,label` file for the cells, in embedding order.
    #[arg(long)]
    pub cell_labels: PathBuf,
    /// `id,label` file for the genes; label 0 marks noise.
    #[arg(long)]
    pub gene_labels: Option<PathBuf>,
    /// Clusters for the cells; defaults to the number of distinct labels.
    #[arg(long)]
    pub cell_clusters: Option<usize>,
    #[arg(long)]
    pub gene_clusters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report file (one CSV row).
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum Method {
    Gap,
    Zigap,
    /// Sparse fit followed by a refit on the selected genes.
    Spcmf,
    PoissonNmf,
    Pca,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Gap,
        Method::Zigap,
        Method::Spcmf,
        Method::PoissonNmf,
        Method::Pca,
    ];
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,0.7,0.9")]
    pub dropouts: Vec<DropoutLevel>,
    #[arg(long, value_delimiter = ',', default_value = "0.4")]
    pub noises: Vec<f64>,
    /// Seeds `0..seeds` in every grid cell.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "gap,zigap,spcmf,poisson-nmf,pca"
    )]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub scenario: ScenarioFlags,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Results table (CSV).
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    /// The count matrix the fit was run on.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output directory of `fit`.
    #[arg(long)]
    pub fit_dir: PathBuf,
    /// Curve file (CSV).
    #[arg(long, short)]
    pub output: PathBuf,
}

pub fn run(config: RunConfig) -> Result<()> {
    match config.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::DevianceCurve(args) => cmd_deviance_curve(&args),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn factor_names(k: usize) -> Vec<String> {
    (1..=k).map(|l| format!("factor{l}")).collect()
}

// ---------------------------------------------------------------- simulate

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let scenario = args.scenario.scenario(args.noise, args.dropout, args.seed);
    scenario.validate()?;
    create_dir(&args.output)?;
    let sim = simulate(&scenario)?;
    let counts = LabeledCounts::with_default_ids(sim.x.clone());
    let matrix_path = match args.format {
        MatrixFormat::Csv => args.output.join("counts.csv"),
        MatrixFormat::Mtx => args.output.join("counts.mtx"),
    };
    write_counts(&matrix_path, &counts)?;
    write_labels(
        &args.output.join("cell_labels.csv"),
        "cell",
        &counts.cell_ids,
        &sim.cell_labels,
    )?;
    write_labels(
        &args.output.join("gene_labels.csv"),
        "gene",
        &counts.gene_ids,
        &sim.gene_labels,
    )?;
    let latent = factor_names(scenario.k);
    write_matrix_csv(
        &args.output.join("u_true.csv"),
        "cell",
        &counts.cell_ids,
        &latent,
        &sim.u_true,
    )?;
    write_matrix_csv(
        &args.output.join("v_true.csv"),
        "gene",
        &counts.gene_ids,
        &latent,
        &sim.v_true,
    )?;
    let pi = DMatrix::from_column_slice(sim.pi_d.len(), 1, &sim.pi_d);
    write_matrix_csv(
        &args.output.join("pi_d.csv"),
        "gene",
        &counts.gene_ids,
        &["pi_d".to_owned()],
        &pi,
    )?;
    println!("{}", simulation_summary(&sim, &matrix_path));
    Ok(())
}

fn simulation_summary(sim: &SimOutput, path: &Path) -> String {
    let (n, m) = (sim.x.n_rows(), sim.x.n_cols());
    let noise = sim.gene_labels.iter().filter(|&&g| g == 0).count();
    let zero_frac = 1.0 - sim.x.nnz() as f64 / (n * m) as f64;
    let mean_pi = sim.pi_d.iter().sum::<f64>() / m as f64;
    format!(
        "wrote {}: {n} cells x {m} genes, {noise} noise genes, {:.1}% zeros, mean observation probability {mean_pi:.3}",
        path.display(),
        100.0 * zero_frac
    )
}

// --------------------------------------------------------------------- fit

/// Genes kept by the two pre-filters: detected in at least
/// `min_expr_frac` of the cells, then (when `threshold > 0`) initial
/// selection probability above `threshold`.
pub fn gene_filter(x: &CountMatrix, min_expr_frac: f64, threshold: f64) -> Vec<bool> {
    let n = x.n_rows() as f64;
    let expressed: Vec<bool> = x
        .column_nonzeros()
        .iter()
        .map(|&c| c as f64 / n >= min_expr_frac)
        .collect();
    if threshold <= 0.0 {
        return expressed;
    }
    let prior = selection_prior(x);
    expressed
        .iter()
        .zip(prior)
        .map(|(&e, p)| e && p > threshold)
        .collect()
}

/// A finished fit on the kept genes, whatever the family.
struct FitResult {
    model: FittedModel,
    pct_dev: f64,
    /// Selection on the kept genes.
    selected: Vec<bool>,
    /// `(stage, report)` in run order.
    stages: Vec<(&'static str, FitReport)>,
    fell_back: Option<bool>,
}

fn run_fit(x: &CountMatrix, config: &FitConfig, reestimate: bool) -> Result<FitResult> {
    if config.family == ModelFamily::SparseZiGap && reestimate {
        let res = fit_sparse_reestimate(x, config)?;
        let pct_dev = res.explained_deviance(x)?;
        let mut stages = vec![("sparse", res.first_report)];
        if !res.fell_back {
            stages.push(("refit", res.report));
        }
        return Ok(FitResult {
            model: res.model,
            pct_dev,
            selected: res.selected,
            stages,
            fell_back: Some(res.fell_back),
        });
    }
    let (model, report) = fit(x, config)?;
    let selected = report
        .selected_genes
        .clone()
        .unwrap_or_else(|| vec![true; x.n_cols()]);
    Ok(FitResult {
        model,
        pct_dev: report.explained_deviance,
        selected,
        stages: vec![("fit", report)],
        fell_back: None,
    })
}

fn load_manifest(path: &Path, output: &Path) -> Result<FitArgs> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut argv = vec![
        "fit".to_owned(),
        "--output".to_owned(),
        output.display().to_string(),
    ];
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: "expected key=value".into(),
        })?;
        match key {
            "command" if value == "fit" => {}
            "command" => {
                return Err(Error::InvalidInput(format!(
                    "manifest is for '{value}', not fit"
                )))
            }
            "filter_mask" => {}
            "no_reestimate" => {
                if value == "true" {
                    argv.push("--no-reestimate".into());
                }
            }
            _ => {
                argv.push(format!("--{}", key.replace('_', "-")));
                argv.push(value.to_owned());
            }
        }
    }

    #[derive(Parser)]
    struct Replay {
        #[command(flatten)]
        args: FitArgs,
    }
    Replay::try_parse_from(argv)
        .map(|r| r.args)
        .map_err(|e| Error::InvalidInput(format!("manifest {}: {e}", path.display())))
}

fn manifest_text(args: &FitArgs, input: &Path, kept: &[bool]) -> String {
    let s = &args.solver;
    let mask: String = kept.iter().map(|&k| if k { '1' } else { '0' }).collect();
    [
        "command=fit".to_owned(),
        format!("input={}", input.display()),
        format!("family={}", value_name(&args.family)),
        format!("k={}", s.k),
        format!("seed={}", args.seed),
        format!("restarts={}", s.restarts),
        format!("tol={}", s.tol),
        format!("max_sweeps={}", s.max_sweeps),
        format!("tau={}", s.tau),
        format!("fix_scale={}", value_name(&s.fix_scale)),
        format!("no_reestimate={}", args.no_reestimate),
        format!("filter_threshold={}", args.filter_threshold),
        format!("min_expr_frac={}", args.min_expr_frac),
        format!("filter_mask={mask}"),
    ]
    .join("\n")
        + "\n"
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let replayed;
    let args = match &args.manifest {
        Some(path) => {
            replayed = load_manifest(path, &args.output)?;
            &replayed
        }
        None => args,
    };
    let input = args
        .input
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("no input matrix".into()))?;
    let family = ModelFamily::from(args.family);
    let config = args.solver.fit_config(family, args.seed);
    config.validate()?;
    if !input.is_file() {
        return Err(Error::InvalidInput(format!(
            "{} is not a readable file",
            input.display()
        )));
    }
    create_dir(&args.output)?;

    let counts = read_counts(input)?;
    let kept = gene_filter(&counts.x, args.min_expr_frac, args.filter_threshold);
    let kept_idx: Vec<usize> = kept
        .iter()
        .enumerate()
        .filter_map(|(j, &k)| k.then_some(j))
        .collect();
    if kept_idx.is_empty() {
        return Err(Error::InvalidInput("all genes filtered out".into()));
    }
    info!(
        "{} of {} genes pass the pre-filters",
        kept_idx.len(),
        kept.len()
    );
    let x = counts.x.select_columns(&kept_idx)?;
    let result = run_fit(&x, &config, !args.no_reestimate)?;

    write_fit_outputs(&args.output, family, &counts, &kept_idx, &result)?;
    write_text(
        &args.output.join("manifest.txt"),
        &manifest_text(args, input, &kept),
    )?;
    println!(
        "fitted {} (K={}) on {} genes: {:.2}% explained deviance",
        family.as_str(),
        config.k,
        kept_idx.len(),
        100.0 * result.pct_dev
    );
    Ok(())
}

fn write_fit_outputs(
    dir: &Path,
    family: ModelFamily,
    counts: &LabeledCounts,
    kept_idx: &[usize],
    result: &FitResult,
) -> Result<()> {
    let model = &result.model;
    let (m, k) = (counts.x.n_cols(), model.k());
    let names = factor_names(k);
    write_matrix_csv(
        &dir.join("u.csv"),
        "cell",
        &counts.cell_ids,
        &names,
        &model.u_mean,
    )?;
    write_matrix_csv(
        &dir.join("log_u.csv"),
        "cell",
        &counts.cell_ids,
        &names,
        &model.u_log,
    )?;

    let mut v = DMatrix::zeros(m, k);
    let mut v_log = DMatrix::from_element(m, k, UNSELECTED_LOG_LOADING);
    let mut selected = vec![false; m];
    for (sub, &j) in kept_idx.iter().enumerate() {
        v.set_row(j, &model.v_mean.row(sub));
        v_log.set_row(j, &model.v_log.row(sub));
        selected[j] = result.selected[sub];
    }
    write_matrix_csv(&dir.join("v.csv"), "gene", &counts.gene_ids, &names, &v)?;
    write_matrix_csv(
        &dir.join("log_v.csv"),
        "gene",
        &counts.gene_ids,
        &names,
        &v_log,
    )?;

    let mut w = csv::Writer::from_path(dir.join("selection.csv"))?;
    w.write_record(["gene", "kept", "selected"])?;
    let mut kept = vec![false; m];
    kept_idx.iter().for_each(|&j| kept[j] = true);
    for (j, id) in counts.gene_ids.iter().enumerate() {
        w.write_record([id.as_str(), flag(kept[j]), flag(selected[j])])?;
    }
    w.flush()
        .map_err(|e| Error::io(dir.join("selection.csv"), e))?;

    let mut w = csv::Writer::from_path(dir.join("elbo.csv"))?;
    w.write_record(["stage", "sweep", "elbo"])?;
    for (stage, report) in &result.stages {
        for (s, value) in report.elbo_trace.iter().enumerate() {
            w.write_record([stage.to_string(), (s + 1).to_string(), value.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(dir.join("elbo.csv"), e))?;

    let (_, last) = result.stages.last().expect("at least one stage");
    let mut summary = vec![
        format!("family={}", family.as_str()),
        format!("cells={}", counts.x.n_rows()),
        format!("genes={m}"),
        format!("genes_kept={}", kept_idx.len()),
        format!("genes_selected={}", selected.iter().filter(|&&s| s).count()),
        format!("k={k}"),
        format!("pct_dev={}", result.pct_dev),
        format!(
            "elbo={}",
            last.elbo_trace.last().copied().unwrap_or(f64::NAN)
        ),
        format!("sweeps={}", last.sweeps),
        format!("converged={}", last.converged),
        format!("restart={}", last.restart),
        format!(
            "elbo_decreases={}",
            result
                .stages
                .iter()
                .map(|(_, r)| r.elbo_decreases.len())
                .sum::<usize>()
        ),
    ];
    if let Some(fell_back) = result.fell_back {
        summary.push(format!("fell_back={fell_back}"));
    }
    write_text(&dir.join("summary.txt"), &(summary.join("\n") + "\n"))
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

// ---------------------------------------------------------------- evaluate

/// Scores of one fitted representation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Evaluation {
    pub ari_u: f64,
    pub ari_v: Option<f64>,
    pub pct_dev: Option<f64>,
    pub selection_accuracy: Option<f64>,
}

fn distinct(labels: &[usize]) -> usize {
    labels.iter().collect::<HashSet<_>>().len()
}

/// ARI between k-means clusters of `points` (κ = number of distinct truth
/// labels unless given) and `truth`.
pub fn cluster_ari(
    points: &DMatrix<f64>,
    truth: &[usize],
    kappa: Option<usize>,
    seed: u64,
) -> Result<f64> {
    let kappa = kappa.unwrap_or_else(|| distinct(truth));
    let clusters = kmeans(points, kappa, seed, KMEANS_RESTARTS)?;
    adjusted_rand_index(&clusters.labels, truth)
}

fn labels_for(path: &Path, ids: &[String]) -> Result<Vec<usize>> {
    let (label_ids, labels) = read_labels(path)?;
    if label_ids.len() != ids.len() {
        return Err(Error::shape(
            format!("{} labels in {}", ids.len(), path.display()),
            label_ids.len(),
        ));
    }
    if let Some(row) = label_ids.iter().zip(ids).position(|(a, b)| a != b) {
        return Err(Error::InvalidInput(format!(
            "{}: label id '{}' at row {} does not match '{}'",
            path.display(),
            label_ids[row],
            row + 1,
            ids[row]
        )));
    }
    Ok(labels)
}

fn read_summary(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect())
}

pub fn evaluate_fit_dir(args: &EvaluateArgs) -> Result<Evaluation> {
    let dir = &args.fit_dir;
    let (cell_ids, _, u_log) = read_matrix_csv(&dir.join("log_u.csv"))?;
    let cell_truth = labels_for(&args.cell_labels, &cell_ids)?;
    let mut eval = Evaluation {
        ari_u: cluster_ari(&u_log, &cell_truth, args.cell_clusters, args.seed)?,
        ..Default::default()
    };
    if let Some(path) = &args.gene_labels {
        let (gene_ids, _, v_log) = read_matrix_csv(&dir.join("log_v.csv"))?;
        let gene_truth = labels_for(path, &gene_ids)?;
        eval.ari_v = Some(cluster_ari(
            &v_log,
            &gene_truth,
            args.gene_clusters,
            args.seed,
        )?);
        let mut reader = csv::Reader::from_path(dir.join("selection.csv"))?;
        let mut selected = Vec::with_capacity(gene_ids.len());
        for record in reader.records() {
            selected.push(&record?[2] == "1");
        }
        let truth: Vec<bool> = gene_truth.iter().map(|&g| g != 0).collect();
        eval.selection_accuracy = Some(selection_accuracy(&selected, &truth)?);
    }
    eval.pct_dev = read_summary(&dir.join("summary.txt"))?
        .into_iter()
        .find(|(k, _)| k == "pct_dev")
        .and_then(|(_, v)| v.parse().ok());
    Ok(eval)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let eval = evaluate_fit_dir(args)?;
    let mut w = csv::Writer::from_path(&args.output)?;
    w.write_record(["ari_u", "ari_v", "pct_dev", "selection_accuracy"])?;
    w.write_record([
        eval.ari_u.to_string(),
        opt(eval.ari_v),
        opt(eval.pct_dev),
        opt(eval.selection_accuracy),
    ])?;
    w.flush().map_err(|e| Error::io(&args.output, e))?;
    println!(
        "ari_u={} ari_v={} pct_dev={} selection_accuracy={}",
        eval.ari_u,
        opt(eval.ari_v),
        opt(eval.pct_dev),
        opt(eval.selection_accuracy)
    );
    Ok(())
}

// ----------------------------------------------------------------- compare

/// One method run on one simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodScore {
    pub method: Method,
    pub ari_u: f64,
    pub ari_v: f64,
    /// Explained deviance for the count models, explained variance of the
    /// log counts for PCA.
    pub pct_dev: f64,
    /// Sparse method only.
    pub selection_accuracy: Option<f64>,
    pub runtime_s: f64,
}

/// Fits `method` to `sim.x` and scores cells and genes with k-means
/// (κ = number of true groups) on the method's representation: log scores
/// and log loadings for the Gamma-Poisson models, raw factors for NMF and
/// PCA.
pub fn run_method(
    method: Method,
    sim: &SimOutput,
    solver: &SolverFlags,
    seed: u64,
) -> Result<MethodScore> {
    let x = &sim.x;
    let start = Instant::now();
    let config = |family| solver.fit_config(family, seed);
    let (u, v, pct_dev, selected) = match method {
        Method::Gap | Method::Zigap => {
            let family = if method == Method::Gap {
                ModelFamily::Gap
            } else {
                ModelFamily::ZiGap
            };
            let (model, report) = fit(x, &config(family))?;
            (model.u_log, model.v_log, report.explained_deviance, None)
        }
        Method::Spcmf => {
            let res = fit_sparse_reestimate(x, &config(ModelFamily::SparseZiGap))?;
            let pct_dev = res.explained_deviance(x)?;
            (
                res.model.u_log,
                res.model.v_log,
                pct_dev,
                Some(res.selected),
            )
        }
        Method::PoissonNmf => {
            let nmf = poisson_nmf(x, solver.k, NmfConfig::default(), &mut restart_rng(seed, 0))?;
            let pct_dev = explained_deviance(x, &(&nmf.u * nmf.v.transpose()))?;
            (nmf.u, nmf.v, pct_dev, None)
        }
        Method::Pca => {
            let pca = pca_logcounts(x, solver.k)?;
            let pct_dev = pca
                .explained_variance
                .expect("PCA reports explained variance");
            (pca.u, pca.v, pct_dev, None)
        }
    };
    let runtime_s = start.elapsed().as_secs_f64();
    let truth: Vec<bool> = sim.gene_labels.iter().map(|&g| g != 0).collect();
    Ok(MethodScore {
        method,
        ari_u: cluster_ari(&u, &sim.cell_labels, None, seed)?,
        ari_v: cluster_ari(&v, &sim.gene_labels, None, seed)?,
        pct_dev,
        selection_accuracy: selected
            .map(|s| selection_accuracy(&s, &truth))
            .transpose()?,
        runtime_s,
    })
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: Method,
    pub dropout: DropoutLevel,
    pub noise: f64,
    pub seed: u64,
    /// `Err` holds the failure message.
    pub score: std::result::Result<MethodScore, String>,
}

pub const COMPARE_COLUMNS: [&str; 8] = [
    "method",
    "dropout",
    "noise",
    "seed",
    "ari_u",
    "ari_v",
    "pct_dev",
    "runtime_s",
];

/// Runs every method on every `(dropout, noise, seed)` cell of the grid;
/// cells run in parallel, rows come back in grid order.
pub fn compare_grid(args: &CompareArgs) -> Vec<CompareRow> {
    let mut cells = Vec::new();
    for &dropout in &args.dropouts {
        for &noise in &args.noises {
            for seed in 0..args.seeds {
                cells.push((dropout, noise, seed));
            }
        }
    }
    cells
        .par_iter()
        .flat_map_iter(|&(dropout, noise, seed)| {
            let scenario = args.scenario.scenario(noise, dropout, seed);
            let sim = simulate(&scenario);
            args.methods
                .iter()
                .map(|&method| {
                    let score = match &sim {
                        Ok(sim) => {
                            run_method(method, sim, &args.solver, seed).map_err(|e| e.to_string())
                        }
                        Err(e) => Err(format!("simulation failed: {e}")),
                    };
                    if let Err(e) = &score {
                        warn!(
                            "{} at dropout {dropout}, noise {noise}, seed {seed}: {e}",
                            value_name(&method)
                        );
                    }
                    CompareRow {
                        method,
                        dropout,
                        noise,
                        seed,
                        score,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn write_compare_table(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COMPARE_COLUMNS)?;
    for row in rows {
        let mut record = vec![
            value_name(&row.method),
            row.dropout.to_string(),
            row.noise.to_string(),
            row.seed.to_string(),
        ];
        match &row.score {
            Ok(s) => {
                record.extend([s.ari_u, s.ari_v, s.pct_dev, s.runtime_s].map(|v| v.to_string()))
            }
            Err(_) => record.extend(["failed"; 4].map(str::to_owned)),
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    if args.methods.is_empty()
        || args.dropouts.is_empty()
        || args.noises.is_empty()
        || args.seeds == 0
    {
        return Err(Error::InvalidInput("empty comparison grid".into()));
    }
    args.scenario
        .scenario(args.noises[0], args.dropouts[0], 0)
        .validate()?;
    args.solver.fit_config(ModelFamily::Gap, 0).validate()?;
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let rows = compare_grid(args);
    write_compare_table(&args.output, &rows)?;
    let failed = rows.iter().filter(|r| r.score.is_err()).count();
    println!(
        "wrote {} rows to {} ({failed} failed)",
        rows.len(),
        args.output.display()
    );
    Ok(())
}

// ---------------------------------------------------------- deviance curve

/// `(original factor index, cumulative divergence)` after greedy ordering.
pub fn ordered_deviance_curve(model: &FactorPair, x: &CountMatrix) -> Result<Vec<(usize, f64)>> {
    let order = order_factors(model, x)?;
    let reorder =
        |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), order.len(), |r, c| m[(r, order[c])]);
    let ordered = FactorPair::new(reorder(model.u()), reorder(model.v()))?;
    Ok(order
        .iter()
        .copied()
        .zip(deviance_curve(&ordered, x)?)
        .collect())
}

pub fn cmd_deviance_curve(args: &CurveArgs) -> Result<()> {
    let counts = read_counts(&args.input)?;
    let (cell_ids, _, u) = read_matrix_csv(&args.fit_dir.join("u.csv"))?;
    let (gene_ids, _, v) = read_matrix_csv(&args.fit_dir.join("v.csv"))?;
    if cell_ids != counts.cell_ids || gene_ids != counts.gene_ids {
        return Err(Error::InvalidInput(format!(
            "{} does not match the fit in {}",
            args.input.display(),
            args.fit_dir.display()
        )));
    }
    let mut reader = csv::Reader::from_path(args.fit_dir.join("selection.csv"))?;
    let mut kept = Vec::new();
    for (j, record) in reader.records().enumerate() {
        if &record?[1] == "1" {
            kept.push(j);
        }
    }
    let x = counts.x.select_columns(&kept)?;
    let v_kept = DMatrix::from_fn(kept.len(), v.ncols(), |r, c| v[(kept[r], c)]);
    let curve = ordered_deviance_curve(&FactorPair::new(u, v_kept)?, &x)?;

    let mut w = csv::Writer::from_path(&args.output)?;
    w.write_record(["k", "factor", "divergence"])?;
    for (k, (factor, d)) in curve.iter().enumerate() {
        w.write_record([(k + 1).to_string(), (factor + 1).to_string(), d.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&args.output, e))
}

/// Process exit code for an error: 3 for numerical failures, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        3
    } else {
        2
    }
}
