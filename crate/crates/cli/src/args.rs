use std::path::PathBuf;

use carlevel_core::models::Family;
use carlevel_core::simulate::StudyKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "carlevel", version, about = "Bayesian multilevel CAR models for areal data")]
pub struct Cli {
    /// `key = value` file supplying any flag not given on the command line
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one replicate of a scenario on a lattice
    Simulate(SimulateArgs),
    /// Fit a model with parallel chains
    Fit(FitArgs),
    /// Convergence diagnostics for chain files
    Diagnose(DiagnoseArgs),
    /// Bias, RMSE, coverage and DIC across fitted replicates
    Compare(CompareArgs),
    /// Simulate, fit and compare a whole scenario study
    Study(StudyArgs),
    /// Re-run the command recorded in a manifest
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Diagnose(_) => "diagnose",
            Command::Compare(_) => "compare",
            Command::Study(_) => "study",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub kind: StudyKind,
    /// Scenario id; omit to give the variance parameters explicitly
    #[arg(long)]
    pub scenario: Option<usize>,
    /// Scenario ids refer to the full 3^k grid
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long)]
    pub tau_sq: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub tau_s_sq: Option<f64>,
    #[arg(long)]
    pub rho_s: Option<f64>,
    #[arg(long)]
    pub tau_t_sq: Option<f64>,
    #[arg(long)]
    pub rho_t: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub rows: usize,
    #[arg(long, default_value_t = 10)]
    pub cols: usize,
    #[arg(long, default_value_t = 5)]
    pub n_per_area: usize,
    /// Defaults to 5 (longitudinal) or 1 (cross-sectional)
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long, env = "CARLEVEL_SEED")]
    pub seed: u64,
    /// Replicate index; replicates share covariates and errors
    #[arg(long, default_value_t = 0)]
    pub replicate: usize,
    #[arg(long, default_value = "carlevel-sim")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub model: Family,
    #[arg(long)]
    pub data: PathBuf,
    /// Edge list or 0/1 matrix CSV
    #[arg(long)]
    pub adjacency: PathBuf,
    /// Total sweeps per chain; defaults to burn-in + 20000
    #[arg(long)]
    pub iters: Option<usize>,
    /// Defaults to the model's burn-in
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    #[arg(long, env = "CARLEVEL_SEED")]
    pub seed: u64,
    /// Also store individual random effects
    #[arg(long)]
    pub store_individual: bool,
    /// Do not store area effects
    #[arg(long)]
    pub no_store_area: bool,
    #[arg(long, default_value_t = 2)]
    pub max_retries: usize,
    #[arg(long, default_value_t = 1.02)]
    pub threshold: f64,
    #[arg(long, default_value = "carlevel-fit")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Chain CSV files
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub chains: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.02)]
    pub threshold: f64,
    /// Defaults to the directory of the first chain
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Output directories of `fit` runs on simulated data
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub fits: Vec<PathBuf>,
    #[arg(long, default_value = "carlevel-compare")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub kind: StudyKind,
    /// Comma-separated scenario ids; defaults to every published scenario
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<usize>,
    #[arg(long)]
    pub full_grid: bool,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long, env = "CARLEVEL_SEED")]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub rows: usize,
    #[arg(long, default_value_t = 10)]
    pub cols: usize,
    #[arg(long, default_value_t = 5)]
    pub n_per_area: usize,
    #[arg(long)]
    pub periods: Option<usize>,
    /// Comma-separated models; defaults to every model of the kind
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<Family>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub thin: usize,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    /// Concurrent fits; 0 uses every core
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long, default_value_t = 2)]
    pub max_retries: usize,
    #[arg(long, default_value_t = 1.02)]
    pub threshold: f64,
    #[arg(long, default_value = "carlevel-study")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one
    #[arg(long)]
    pub out: Option<PathBuf>,
}
