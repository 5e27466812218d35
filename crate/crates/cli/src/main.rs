//! Command-line front end: ingestion, estimation, experiments, and
//! portfolio tools wired into reproducible runs.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 numeric error.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use monocov::samplers::PriorKind;

#[derive(Parser)]
#[command(
    name = "monocov",
    version,
    about = "Mean/covariance estimation for near-monotone missing data via Bayesian shrinkage regressions, with portfolio balancing tools"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Posterior sampling of (mu, Sigma) through the monotone factorization.
    Fit(FitArgs),
    /// Point estimation (OLS/ridge recursion); complete or monotone data only.
    Mle(MleArgs),
    /// Generate synthetic truth and data, optionally with monotone missingness.
    Simulate(SimulateArgs),
    /// Expected log likelihood of a truth summary under an estimate summary.
    Ell(EllArgs),
    /// Normal-vs-Student-t Bayes factor frequency experiment.
    Bf(BfArgs),
    /// Balance a portfolio from a summary CSV or a draws file.
    Balance(BalanceArgs),
    /// Rolling-window buy-and-hold backtest.
    Backtest(BacktestArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PriorArg {
    Lasso,
    Ng,
    Ridge,
    Flat,
}

impl From<PriorArg> for PriorKind {
    fn from(p: PriorArg) -> Self {
        match p {
            PriorArg::Lasso => PriorKind::Lasso,
            PriorArg::Ng => PriorKind::Ng,
            PriorArg::Ridge => PriorKind::Ridge,
            PriorArg::Flat => PriorKind::Flat,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Directory for all outputs (created if absent).
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
    /// Root seed; every stream in the run derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker count for parallel columns/replications (0 = all cores).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct InputArgs {
    /// Input table (CSV/TSV with a header row).
    #[arg(long)]
    input: PathBuf,
    /// Token marking missing cells.
    #[arg(long, default_value = "NA")]
    na_token: String,
    /// Field delimiter; auto-detected when omitted.
    #[arg(long)]
    delimiter: Option<char>,
}

#[derive(Args)]
struct EngineArgs {
    /// Shrinkage prior for the per-column regressions.
    #[arg(long, value_enum, default_value_t = PriorArg::Lasso)]
    prior: PriorArg,
    /// Parsimony threshold: shrink when delta * n_j < j.
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    /// Student-t errors with unknown degrees of freedom.
    #[arg(long)]
    student_t: bool,
    /// Pool a single nu across all columns (forces a serial schedule).
    #[arg(long)]
    common_nu: bool,
    /// Impute non-monotone gap cells by data augmentation.
    #[arg(long)]
    mda: bool,
    /// Reversible-jump model averaging over predictor subsets.
    #[arg(long)]
    rj: bool,
    /// Saved posterior draws.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Burn-in sweeps (default: 20% of samples).
    #[arg(long)]
    burnin: Option<usize>,
    /// Sweeps between saves (default: 1, or n under Student-t).
    #[arg(long)]
    thin: Option<usize>,
    /// Exponential rate of the nu prior (mean 1/theta).
    #[arg(long, default_value_t = 0.1)]
    theta: f64,
    /// Fix the sparsity probability instead of the Beta(g,h) hyperprior.
    #[arg(long)]
    pi: Option<f64>,
    /// Beta prior shape g for the sparsity probability.
    #[arg(long, default_value_t = 1.0)]
    g: f64,
    /// Beta prior shape h for the sparsity probability.
    #[arg(long, default_value_t = 1.0)]
    h: f64,
    /// Completely observed factor columns to prepend (CSV).
    #[arg(long)]
    factors: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    common: CommonArgs,
    /// Also export the draws as a wide CSV.
    #[arg(long)]
    export_csv: bool,
    /// Also write the MAP summary next to the posterior-mean summary.
    #[arg(long)]
    map: bool,
}

#[derive(Args)]
struct MleArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Parsimony threshold: ridge when delta * n_j < j, OLS otherwise.
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Normwish,
    Parsimonious,
}

#[derive(Args)]
struct SimulateArgs {
    /// Truth generator.
    #[arg(long, value_enum, default_value_t = MethodArg::Normwish)]
    method: MethodArg,
    /// Variables (columns).
    #[arg(long, short)]
    m: usize,
    /// Observations (rows).
    #[arg(long, short)]
    n: usize,
    /// Nonzero rate of the parsimonious generator.
    #[arg(long, default_value_t = 0.1)]
    sparsity: f64,
    /// Impose a uniformly random monotone missingness pattern.
    #[arg(long)]
    mono: bool,
    /// Smallest per-column observed count under --mono.
    #[arg(long)]
    mono_floor: Option<usize>,
    /// Token written for missing cells.
    #[arg(long, default_value = "NA")]
    na_token: String,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EllArgs {
    /// Truth summary CSV (label,mu,<labels...>).
    #[arg(long)]
    truth: PathBuf,
    /// Estimate summary CSV.
    #[arg(long)]
    est: PathBuf,
    /// Use the bracket without the -N constant.
    #[arg(long)]
    paper_variant: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BfArgs {
    /// Sample sizes, comma separated.
    #[arg(long, default_value = "30,75,200")]
    n_grid: String,
    /// Degrees of freedom, comma separated; `inf` means normal errors.
    #[arg(long, default_value = "3,5,inf")]
    nu_grid: String,
    #[arg(long, default_value_t = 30)]
    reps: usize,
    #[arg(long, default_value_t = 600)]
    samples: usize,
    #[arg(long, default_value_t = 200)]
    burnin: usize,
    /// Sweeps between saves, as a multiple of n.
    #[arg(long, default_value_t = 0.5)]
    thin_per_n: f64,
    /// "Strong evidence" cutoff on |log10 BF|.
    #[arg(long, default_value_t = 1.0)]
    strong: f64,
    #[arg(long, value_enum, default_value_t = PriorArg::Lasso)]
    prior: PriorArg,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BalanceArgs {
    /// Summary CSV with the moments to balance on.
    #[arg(long, conflicts_with = "draws")]
    input: Option<PathBuf>,
    /// Draws file; enables --estimation-risk.
    #[arg(long)]
    draws: Option<PathBuf>,
    /// Use predictive moments (mean of Sigma draws + covariance of mu draws).
    #[arg(long, requires = "draws")]
    estimation_risk: bool,
    /// Minimum expected return; omits the constraint when absent.
    #[arg(long)]
    target_return: Option<f64>,
    /// Risk-free rate enabling the relaxed budget constraint.
    #[arg(long)]
    risk_free: Option<f64>,
    /// Per-asset weight cap in (0,1].
    #[arg(long, default_value_t = 1.0)]
    cap: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EstimatorArg {
    Equal,
    Sample,
    Mle,
    Blasso,
    Bridge,
    Bng,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Benchmark series CSV (single column with header), aligned by row.
    #[arg(long)]
    benchmark: PathBuf,
    /// Risk-free series CSV (single column with header), aligned by row.
    #[arg(long)]
    riskfree: PathBuf,
    /// Trailing estimation window, in rows.
    #[arg(long, default_value_t = 60)]
    window: usize,
    /// Holding period between rebalances, in rows.
    #[arg(long, default_value_t = 12)]
    rebalance: usize,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Sample)]
    estimator: EstimatorArg,
    /// Per-asset weight cap in (0,1].
    #[arg(long, default_value_t = 1.0)]
    cap: f64,
    /// Mean-variance with this target; minimum variance when absent.
    #[arg(long)]
    target_return: Option<f64>,
    /// Predictive moments under estimation risk (Bayes estimators).
    #[arg(long)]
    estimation_risk: bool,
    /// Eligibility: observed returns required inside the window.
    #[arg(long, default_value_t = 12)]
    min_history: usize,
    /// Parsimony threshold for mle/Bayes estimators.
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    /// Posterior draws per window for Bayes estimators.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long)]
    burnin: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Fit(a) => commands::cmd_fit(a),
        Cmd::Mle(a) => commands::cmd_mle(a),
        Cmd::Simulate(a) => commands::cmd_simulate(a),
        Cmd::Ell(a) => commands::cmd_ell(a),
        Cmd::Bf(a) => commands::cmd_bf(a),
        Cmd::Balance(a) => commands::cmd_balance(a),
        Cmd::Backtest(a) => commands::cmd_backtest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
