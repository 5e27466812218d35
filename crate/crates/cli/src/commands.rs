use std::fs;
use std::io::Write;
use std::path::Path;

use monocov::data_layout::{load_matrix, Cell, DataMatrix};
use monocov::engine::{self, EngineConfig, SummaryKind};
use monocov::evaluation::{self, BfExperimentConfig, GeneratorMethod};
use monocov::portfolio::{self, BacktestConfig, BacktestEstimator, PortfolioProblem};
use monocov::samplers::PriorKind;
use monocov::{io as mio, rng, Error, Result};

use monocov::nalgebra::DMatrix;

use crate::{
    BacktestArgs, BalanceArgs, BfArgs, EllArgs, EstimatorArg, FitArgs, MethodArg, MleArgs,
    SimulateArgs,
};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_input(input: &Path, na_token: &str, delimiter: Option<char>) -> Result<DataMatrix> {
    let file = fs::File::open(input)?;
    load_matrix(file, na_token, delimiter.map(|c| c as u8))
}

fn write_manifest(dir: &Path, manifest: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn engine_config(args: &crate::EngineArgs, common: &crate::CommonArgs) -> EngineConfig {
    EngineConfig {
        prior: args.prior.into(),
        delta: args.delta,
        student_t: args.student_t,
        common_nu: args.common_nu,
        mda: args.mda,
        model_averaging: args.rj,
        samples: args.samples,
        burnin: args.burnin,
        thin: args.thin,
        seed: common.seed,
        jobs: common.jobs,
        theta: args.theta,
        pi_fixed: args.pi,
        g: args.g,
        h: args.h,
        joint_flat_prior: false,
    }
}

fn read_factors(path: &Path) -> Result<DMatrix<f64>> {
    let d = load_input(path, "NA", None)?;
    if d.has_gaps() || (0..d.m).any(|j| d.column_missing_count(j) > 0) {
        return Err(Error::Config("factors must be completely observed".into()));
    }
    Ok(DMatrix::from_fn(d.n, d.m, |i, j| d.get(i, j).value().unwrap()))
}

pub fn cmd_fit(args: FitArgs) -> Result<()> {
    ensure_dir(&args.common.output_dir)?;
    let d = load_input(&args.input.input, &args.input.na_token, args.input.delimiter)?;
    let config = engine_config(&args.engine, &args.common);

    let draws = match &args.engine.factors {
        Some(fpath) => {
            let f = read_factors(fpath)?;
            engine::with_factors(&d, &f, &config)?
        }
        None => {
            let (dd, layout) = engine::prepare(&d);
            engine::bayes_path(&dd, &layout, &config)?
        }
    };

    let dir = &args.common.output_dir;
    let mut outputs = vec!["draws.bin".to_string(), "summary.csv".to_string()];
    mio::write_draws(&dir.join("draws.bin"), &draws)?;
    let mean = engine::summarize(&draws, SummaryKind::Mean)?;
    mio::write_summary_csv(&dir.join("summary.csv"), &mean, &draws.labels)?;
    if args.map {
        let map = engine::summarize(&draws, SummaryKind::Map)?;
        mio::write_summary_csv(&dir.join("map_summary.csv"), &map, &draws.labels)?;
        outputs.push("map_summary.csv".into());
    }
    if args.engine.rj {
        mio::write_inclusion_csv(&dir.join("inclusion.csv"), &draws)?;
        outputs.push("inclusion.csv".into());
    }
    if args.export_csv {
        mio::export_draws_csv(&dir.join("draws.csv"), &draws)?;
        outputs.push("draws.csv".into());
    }
    outputs.push("manifest.json".into());
    write_manifest(
        dir,
        &serde_json::json!({
            "command": "fit",
            "input": args.input.input,
            "na_token": args.input.na_token,
            "factors": args.engine.factors,
            "config": config,
            "outputs": outputs,
            "gap_cells": draws.gap_cells,
            "diagnostics": draws.diagnostics,
        }),
    )?;
    println!(
        "fit: {} draws over {} columns written to {}",
        draws.draws.len(),
        draws.m(),
        dir.display()
    );
    Ok(())
}

pub fn cmd_mle(args: MleArgs) -> Result<()> {
    ensure_dir(&args.common.output_dir)?;
    let d = load_input(&args.input.input, &args.input.na_token, args.input.delimiter)?;
    let config = EngineConfig {
        delta: args.delta,
        seed: args.common.seed,
        jobs: args.common.jobs,
        ..Default::default()
    };
    let (dd, layout) = engine::prepare(&d);
    let est = engine::mle_path(&dd, &layout, &config)?;
    let dir = &args.common.output_dir;
    mio::write_summary_csv(&dir.join("summary.csv"), &est, &d.labels)?;
    write_manifest(
        dir,
        &serde_json::json!({
            "command": "mle",
            "input": args.input.input,
            "na_token": args.input.na_token,
            "delta": args.delta,
            "config": config,
            "outputs": ["summary.csv", "manifest.json"],
        }),
    )?;
    println!("mle: point estimate over {} columns written to {}", d.m, dir.display());
    Ok(())
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    ensure_dir(&args.common.output_dir)?;
    let method = match args.method {
        MethodArg::Normwish => GeneratorMethod::Normwish,
        MethodArg::Parsimonious => GeneratorMethod::Parsimonious { rate: args.sparsity },
    };
    let mut stream = rng::tagged(args.common.seed, rng::TAG_SIMULATE);
    let truth = evaluation::randmvn_with(&mut stream, method, args.m)?;
    let complete = evaluation::sample_mvn_rows(&mut stream, &truth, args.n)?;
    let observed = if args.mono {
        evaluation::rmono(&mut stream, &complete, args.mono_floor)?
    } else {
        complete
    };

    let dir = &args.common.output_dir;
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("data.csv"))?);
    writeln!(w, "{}", observed.labels.join(","))?;
    for i in 0..observed.n {
        let row: Vec<String> = (0..observed.m)
            .map(|j| match observed.get(i, j) {
                Cell::Value(v) => format!("{v}"),
                _ => args.na_token.clone(),
            })
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    drop(w);
    mio::write_summary_csv(&dir.join("truth.csv"), &truth, &observed.labels)?;
    write_manifest(
        dir,
        &serde_json::json!({
            "command": "simulate",
            "method": format!("{:?}", args.method),
            "m": args.m,
            "n": args.n,
            "sparsity": args.sparsity,
            "mono": args.mono,
            "mono_floor": args.mono_floor,
            "seed": args.common.seed,
            "outputs": ["data.csv", "truth.csv", "manifest.json"],
        }),
    )?;
    println!("simulate: {}x{} written to {}", args.n, args.m, dir.display());
    Ok(())
}

pub fn cmd_ell(args: EllArgs) -> Result<()> {
    ensure_dir(&args.common.output_dir)?;
    let (truth, _) = mio::read_summary_csv(&args.truth)?;
    let (est, _) = mio::read_summary_csv(&args.est)?;
    let score = evaluation::ell(&est, &truth, args.paper_variant)?;
    let dir = &args.common.output_dir;
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("ell.csv"))?);
    writeln!(w, "value,entropy_term,divergence")?;
    writeln!(w, "{},{},{}", score.value, score.entropy_term, score.divergence)?;
    w.flush()?;
    write_manifest(
        dir,
        &serde_json::json!({
            "command": "ell",
            "truth": args.truth,
            "est": args.est,
            "paper_variant": args.paper_variant,
            "outputs": ["ell.csv", "manifest.json"],
        }),
    )?;
    println!(
        "ell: value {} (entropy {} divergence {})",
        score.value, score.entropy_term, score.divergence
    );
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad grid entry `{t}`"))))
        .collect()
}

pub fn cmd_bf(args: BfArgs) -> Result<()> {
    ensure_dir(&args.common.output_dir)?;
    let n_grid: Vec<usize> = parse_grid(&args.n_grid)?.into_iter().map(|v| v as usize).collect();
    let nu_grid: Vec<Option<f64>> = args
        .nu_grid
        .split(',')
        .map(|t| {
            let t = t.trim();
            if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("normal") {
                Ok(None)
            } else {
                t.parse::<f64>().map(Some).map_err(|_| Error::Config(format!("bad nu `{t}`")))
            }
        })
        .collect::<Result<_>>()?;
    let cfg = BfExperimentConfig {
        n_grid,
        nu_grid,
        reps: args.reps,
        samples: args.samples,
        burnin: args.burnin,
        thin_per_n: args.thin_per_n,
        strong_log10: args.strong,
        prior: args.prior.into(),
        seed: args.common.seed,
        jobs: args.common.jobs,
    };
    let cells = evaluation::bf_frequency_experiment(&cfg)?;
    let dir = &args.common.output_dir;
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("bf_frequency.csv"))?);
    writeln!(w, "n,nu,reps,freq_correct,freq_strong,mean_log_bf")?;
    for c in &cells {
        let nu = c.nu.map_or("inf".to_string(), |v| format!("{v}"));
        writeln!(
            w,
            "{},{},{},{},{},{}",
            c.n, nu, c.reps, c.freq_correct, c.freq_strong, c.mean_log_bf
        )?;
    }
    w.flush()?;
    write_manifest(
        dir,
        &serde_json::json!({
            "command": "bf",
            "n_grid": args.n_grid,
            "nu_grid": args.nu_grid,
            "reps": args.reps,
            "samples": args.samples,
            "burnin": args.burnin,
            "thin_per_n": args.thin_per_n,
            "strong": args.strong,
            "seed": args.common.seed,
            "outputs": ["bf_frequency.csv", "manifest.json"],
        }),
    )?;
    for c in &cells {
        let nu = c.nu.map_or("inf".to_string(), |v| format!("{v}"));
        println!(
            "bf: n={} nu={} correct {:.3} strong {:.3} mean log BF {:.3}",
            c.n, nu, c.freq_correct, c.freq_strong, c.mean_log_bf
        );
    }
    Ok(())
}

pub fn cmd_balance(args: BalanceArgs) -> Result<()> {
    ensure_dir(&args.common.output_dir)?;
    let (mu, sigma, labels, source): (_, _, Vec<String>, String) = match (&args.input, &args.draws)
    {
        (Some(path), None) => {
            let (est, labels) = mio::read_summary_csv(path)?;
            (est.mu, est.sigma, labels, path.display().to_string())
        }
        (None, Some(path)) => {
            let draws = mio::read_draws(path)?;
            if args.estimation_risk {
                let (mu, sigma) = portfolio::estimation_risk_moments(&draws)?;
                (mu, sigma, draws.labels.clone(), path.display().to_string())
            } else {
                let est = engine::summarize(&draws, SummaryKind::Mean)?;
                (est.mu, est.sigma, draws.labels.clone(), path.display().to_string())
            }
        }
        _ => {
            return Err(Error::Config(
                "balance needs exactly one of --input (summary CSV) or --draws".into(),
            ))
        }
    };
    let problem = PortfolioProblem {
        sigma,
        mu: Some(mu),
        target_return: args.target_return,
        risk_free: args.risk_free,
        cap: args.cap,
    };
    let weights = if args.target_return.is_some() {
        portfolio::solve_mean_variance(&problem)?
    } else {
        portfolio::solve_min_variance(&problem)?
    };
    let dir = &args.common.output_dir;
    mio::write_weights_csv(&dir.join("weights.csv"), &labels, &weights.w)?;
    write_manifest(
        dir,
        &serde_json::json!({
            "command": "balance",
            "source": source,
            "estimation_risk": args.estimation_risk,
            "target_return": args.target_return,
            "risk_free": args.risk_free,
            "cap": args.cap,
            "objective": weights.objective,
            "kkt_residual": weights.kkt_residual,
            "target_binding": weights.target_binding,
            "outputs": ["weights.csv", "manifest.json"],
        }),
    )?;
    for (l, v) in labels.iter().zip(weights.w.iter()) {
        println!("{l}: {v:.6}");
    }
    println!("objective {} kkt residual {:.3e}", weights.objective, weights.kkt_residual);
    Ok(())
}

pub fn cmd_backtest(args: BacktestArgs) -> Result<()> {
    ensure_dir(&args.common.output_dir)?;
    let returns = load_input(&args.input.input, &args.input.na_token, args.input.delimiter)?;
    let benchmark = mio::read_series_csv(&args.benchmark)?;
    let riskfree = mio::read_series_csv(&args.riskfree)?;

    let engine_cfg = EngineConfig {
        delta: args.delta,
        samples: args.samples,
        burnin: args.burnin,
        seed: args.common.seed,
        jobs: args.common.jobs,
        mda: true,
        ..Default::default()
    };
    let (name, estimator) = match args.estimator {
        EstimatorArg::Equal => ("equal", BacktestEstimator::EqualWeight),
        EstimatorArg::Sample => ("sample", BacktestEstimator::SampleCov),
        EstimatorArg::Mle => ("mle", BacktestEstimator::Mle(engine_cfg.clone())),
        EstimatorArg::Blasso => (
            "blasso",
            BacktestEstimator::Bayes(EngineConfig { prior: PriorKind::Lasso, ..engine_cfg.clone() }),
        ),
        EstimatorArg::Bridge => (
            "bridge",
            BacktestEstimator::Bayes(EngineConfig { prior: PriorKind::Ridge, ..engine_cfg.clone() }),
        ),
        EstimatorArg::Bng => (
            "bng",
            BacktestEstimator::Bayes(EngineConfig { prior: PriorKind::Ng, ..engine_cfg.clone() }),
        ),
    };
    let cfg = BacktestConfig {
        window: args.window,
        rebalance: args.rebalance,
        estimator,
        cap: args.cap,
        target_return: args.target_return,
        estimation_risk: args.estimation_risk,
        min_history: args.min_history,
    };
    let report = portfolio::backtest(&returns, &benchmark, &riskfree, &cfg)?;
    let dir = &args.common.output_dir;
    let mut w = std::io::BufWriter::new(fs::File::create(dir.join("backtest.csv"))?);
    writeln!(w, "strategy,mean,sd,sharpe,te,cm,wmin")?;
    writeln!(
        w,
        "{},{},{},{},{},{},{}",
        name,
        report.annual_mean,
        report.annual_sd,
        if report.sharpe_defined { format!("{}", report.sharpe) } else { "undefined".into() },
        report.tracking_error,
        report.correlation,
        report.avg_holdings
    )?;
    w.flush()?;
    write_manifest(
        dir,
        &serde_json::json!({
            "command": "backtest",
            "input": args.input.input,
            "benchmark": args.benchmark,
            "riskfree": args.riskfree,
            "estimator": name,
            "window": args.window,
            "rebalance": args.rebalance,
            "cap": args.cap,
            "target_return": args.target_return,
            "estimation_risk": args.estimation_risk,
            "min_history": args.min_history,
            "seed": args.common.seed,
            "report": report,
            "outputs": ["backtest.csv", "manifest.json"],
        }),
    )?;
    println!(
        "backtest[{name}]: mean {:.4} sd {:.4} sharpe {} te {:.4} cm {:.3} wmin {:.1} ({} periods, {} flagged)",
        report.annual_mean,
        report.annual_sd,
        if report.sharpe_defined { format!("{:.4}", report.sharpe) } else { "undefined".into() },
        report.tracking_error,
        report.correlation,
        report.avg_holdings,
        report.periods,
        report.flagged_periods
    );
    Ok(())
}
