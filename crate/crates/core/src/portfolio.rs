//! Mean-variance portfolio construction over estimated moments, predictive
//! moments under estimation risk, and a rolling-window backtest.
//!
//! The QP solver is a primal active-set method on the simplex-with-box
//! feasible region: exact KKT certificates, no tuning, adequate for dense
//! problems of a few hundred assets.

use nalgebra::{DMatrix, DVector};

use crate::data_layout::DataMatrix;
use crate::dist;
use crate::engine::{self, EngineConfig, MvnEstimate, PosteriorDrawSet, SummaryKind};
use crate::stats;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct PortfolioProblem {
    pub sigma: DMatrix<f64>,
    pub mu: Option<DVector<f64>>,
    pub target_return: Option<f64>,
    pub risk_free: Option<f64>,
    /// Per-asset upper bound in (0, 1].
    pub cap: f64,
}

impl PortfolioProblem {
    pub fn min_variance(sigma: DMatrix<f64>) -> Self {
        PortfolioProblem { sigma, mu: None, target_return: None, risk_free: None, cap: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    Free,
    AtZero,
    AtCap,
}

#[derive(Clone, Debug)]
pub struct Weights {
    pub w: DVector<f64>,
    /// w' Sigma w at the solution.
    pub objective: f64,
    pub kkt_residual: f64,
    pub binding: Vec<Binding>,
    pub target_binding: bool,
}

impl Weights {
    /// Count of weights above the reporting threshold (0.5% by default).
    pub fn holdings_above(&self, threshold: f64) -> usize {
        self.w.iter().filter(|&&x| x > threshold).count()
    }
}

// --- active set machinery ---------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Constraint {
    /// a'w = b
    Eq(DVector<f64>, f64),
    /// a'w >= b
    Ge(DVector<f64>, f64),
    /// w_i >= 0
    Lo(usize),
    /// w_i <= cap
    Hi(usize, f64),
}

impl Constraint {
    fn gradient(&self, m: usize) -> DVector<f64> {
        match self {
            Constraint::Eq(a, _) | Constraint::Ge(a, _) => a.clone(),
            Constraint::Lo(i) => DVector::from_fn(m, |r, _| if r == *i { 1.0 } else { 0.0 }),
            Constraint::Hi(i, _) => DVector::from_fn(m, |r, _| if r == *i { -1.0 } else { 0.0 }),
        }
    }
    fn slack(&self, w: &DVector<f64>) -> f64 {
        match self {
            Constraint::Eq(a, b) => a.dot(w) - b,
            Constraint::Ge(a, b) => a.dot(w) - b,
            Constraint::Lo(i) => w[*i],
            Constraint::Hi(i, cap) => cap - w[*i],
        }
    }
    fn is_equality(&self) -> bool {
        matches!(self, Constraint::Eq(..))
    }
}

struct ActiveSetQp {
    q: DMatrix<f64>,
    constraints: Vec<Constraint>,
}

impl ActiveSetQp {
    /// Minimize 1/2 w'Qw from the feasible start, returning (w, multipliers
    /// over the final working set, working set, stationarity residual).
    fn solve(&self, mut w: DVector<f64>) -> Result<(DVector<f64>, Vec<(usize, f64)>, f64)> {
        let m = w.len();
        let mut working: Vec<usize> = self
            .constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_equality() || c.slack(&w).abs() < 1e-12)
            .map(|(i, _)| i)
            .collect();
        let max_iter = 50 * (m + self.constraints.len()) + 100;
        let mut last_lambda: Vec<(usize, f64)> = Vec::new();
        for _ in 0..max_iter {
            let nw = working.len();
            let dim = m + nw;
            let mut kkt = DMatrix::<f64>::zeros(dim, dim);
            kkt.view_mut((0, 0), (m, m)).copy_from(&self.q);
            for (r, &ci) in working.iter().enumerate() {
                let g = self.constraints[ci].gradient(m);
                for row in 0..m {
                    kkt[(row, m + r)] = g[row];
                    kkt[(m + r, row)] = g[row];
                }
            }
            let grad = &self.q * &w;
            let mut rhs = DVector::zeros(dim);
            for i in 0..m {
                rhs[i] = -grad[i];
            }
            let sol = match kkt.clone().lu().solve(&rhs) {
                Some(s) => s,
                None => {
                    // degenerate working set: drop the newest inequality
                    if let Some(pos) =
                        working.iter().rposition(|&ci| !self.constraints[ci].is_equality())
                    {
                        working.remove(pos);
                        continue;
                    }
                    return Err(Error::Numeric("singular KKT system".into()));
                }
            };
            let d = sol.rows(0, m).into_owned();
            let lambda: Vec<(usize, f64)> =
                working.iter().enumerate().map(|(r, &ci)| (ci, -sol[m + r])).collect();
            last_lambda = lambda.clone();
            if d.amax() < 1e-11 {
                // multiplier signs: inequalities need lambda >= 0
                let mut worst: Option<(usize, f64)> = None;
                for &(ci, l) in &lambda {
                    if !self.constraints[ci].is_equality() && l < -1e-10 {
                        if worst.map_or(true, |(_, wl)| l < wl) {
                            worst = Some((ci, l));
                        }
                    }
                }
                match worst {
                    None => {
                        let resid = self.stationarity_residual(&w, &lambda);
                        return Ok((w, lambda, resid));
                    }
                    Some((ci, _)) => {
                        let pos = working.iter().position(|&x| x == ci).unwrap();
                        working.remove(pos);
                    }
                }
            } else {
                // longest feasible step toward w + d
                let mut alpha = 1.0f64;
                let mut blocker: Option<usize> = None;
                for (ci, c) in self.constraints.iter().enumerate() {
                    if working.contains(&ci) {
                        continue;
                    }
                    let g = c.gradient(m);
                    let rate = g.dot(&d);
                    if rate < -1e-13 {
                        let room = c.slack(&w);
                        let step = (room / -rate).max(0.0);
                        if step < alpha {
                            alpha = step;
                            blocker = Some(ci);
                        }
                    }
                }
                w += d * alpha;
                if let Some(ci) = blocker {
                    working.push(ci);
                }
            }
        }
        let resid = self.stationarity_residual(&w, &last_lambda);
        if resid < 1e-8 {
            Ok((w, last_lambda, resid))
        } else {
            Err(Error::Numeric("active-set iteration limit reached".into()))
        }
    }

    fn stationarity_residual(&self, w: &DVector<f64>, lambda: &[(usize, f64)]) -> f64 {
        let m = w.len();
        let mut r = &self.q * w;
        for &(ci, l) in lambda {
            r -= self.constraints[ci].gradient(m) * l;
        }
        let mut resid = r.amax();
        for (ci, c) in self.constraints.iter().enumerate() {
            let s = c.slack(w);
            if c.is_equality() {
                resid = resid.max(s.abs());
            } else {
                resid = resid.max((-s).max(0.0));
                if let Some(&(_, l)) = lambda.iter().find(|(i, _)| *i == ci) {
                    resid = resid.max((l * s).abs().min(l.abs().max(s.abs())));
                    resid = resid.max((-l).max(0.0));
                }
            }
        }
        resid
    }
}

fn validate_sigma(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = sigma.nrows();
    if sigma.ncols() != m || m == 0 {
        return Err(Error::Dimension("covariance must be square and nonempty".into()));
    }
    let mut s = sigma.clone();
    let scale = s.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-300);
    for a in 0..m {
        for b in (a + 1)..m {
            if (s[(a, b)] - s[(b, a)]).abs() > 1e-8 * scale {
                return Err(Error::Config("covariance is not symmetric".into()));
            }
            let v = 0.5 * (s[(a, b)] + s[(b, a)]);
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    let min_eig = dist::min_symmetric_eigenvalue(&s);
    if min_eig < -1e-8 * s.trace().max(1e-300) {
        return Err(Error::NotPositiveDefinite {
            context: format!("portfolio covariance (min eigenvalue {min_eig})"),
        });
    }
    Ok(s)
}

fn base_constraints(m: usize, cap: f64) -> Vec<Constraint> {
    let mut cs = vec![Constraint::Eq(DVector::from_element(m, 1.0), 1.0)];
    for i in 0..m {
        cs.push(Constraint::Lo(i));
        if cap < 1.0 {
            cs.push(Constraint::Hi(i, cap));
        }
    }
    cs
}

fn finish(qp: &ActiveSetQp, w: DVector<f64>, lambda: &[(usize, f64)], resid: f64, cap: f64, target_ci: Option<usize>) -> Weights {
    let m = w.len();
    let binding = (0..m)
        .map(|i| {
            if w[i] < 1e-9 {
                Binding::AtZero
            } else if cap < 1.0 && (cap - w[i]).abs() < 1e-9 {
                Binding::AtCap
            } else {
                Binding::Free
            }
        })
        .collect();
    // qp.q holds 2 Sigma; report w' Sigma w
    let objective = 0.5 * (qp.q.clone() * &w).dot(&w);
    let target_binding = target_ci
        .map(|ci| lambda.iter().any(|&(i, l)| i == ci && l.abs() > 1e-10))
        .unwrap_or(false);
    Weights { w, objective, kkt_residual: resid, binding, target_binding }
}

/// Minimize w' Sigma w subject to full investment and the box constraints.
pub fn solve_min_variance(p: &PortfolioProblem) -> Result<Weights> {
    let sigma = validate_sigma(&p.sigma)?;
    let m = sigma.nrows();
    if !(p.cap > 0.0 && p.cap <= 1.0) {
        return Err(Error::Config(format!("cap must lie in (0,1], got {}", p.cap)));
    }
    if p.cap * (m as f64) < 1.0 - 1e-12 {
        return Err(Error::Infeasible(format!("cap {} times {m} assets cannot reach full investment", p.cap)));
    }
    let qp = ActiveSetQp { q: sigma * 2.0, constraints: base_constraints(m, p.cap) };
    let start = DVector::from_element(m, 1.0 / m as f64);
    let (w, lambda, resid) = qp.solve(start)?;
    Ok(finish(&qp, w, &lambda, resid, p.cap, None))
}

/// Greedy vertex maximizing score' w over the simplex-with-box.
fn greedy_vertex(score: &DVector<f64>, cap: f64, budget: f64) -> DVector<f64> {
    let m = score.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| score[b].partial_cmp(&score[a]).unwrap());
    let mut w = DVector::zeros(m);
    let mut left = budget;
    for &i in &order {
        let take = cap.min(left);
        w[i] = take;
        left -= take;
        if left <= 0.0 {
            break;
        }
    }
    w
}

/// Minimize variance subject to a minimum expected return, full investment
/// (or, with a risk-free rate, at-most-full investment with the remainder
/// earning the risk-free return), and the box constraints.
pub fn solve_mean_variance(p: &PortfolioProblem) -> Result<Weights> {
    let sigma = validate_sigma(&p.sigma)?;
    let m = sigma.nrows();
    let mu = p
        .mu
        .as_ref()
        .ok_or_else(|| Error::Config("mean-variance balancing needs expected returns".into()))?;
    if mu.len() != m {
        return Err(Error::Dimension(format!("{} means for {m} assets", mu.len())));
    }
    let target = p
        .target_return
        .ok_or_else(|| Error::Config("mean-variance balancing needs a target return".into()))?;
    if !(p.cap > 0.0 && p.cap <= 1.0) {
        return Err(Error::Config(format!("cap must lie in (0,1], got {}", p.cap)));
    }

    match p.risk_free {
        None => {
            if p.cap * (m as f64) < 1.0 - 1e-12 {
                return Err(Error::Infeasible(format!(
                    "cap {} times {m} assets cannot reach full investment",
                    p.cap
                )));
            }
            // if the unconstrained-minimum-variance portfolio already meets the
            // target, the return constraint is slack
            let mv = solve_min_variance(&PortfolioProblem {
                sigma: sigma.clone(),
                mu: None,
                target_return: None,
                risk_free: None,
                cap: p.cap,
            })?;
            if mu.dot(&mv.w) >= target - 1e-12 {
                return Ok(mv);
            }
            let best = greedy_vertex(mu, p.cap, 1.0);
            let best_ret = mu.dot(&best);
            if best_ret < target - 1e-12 {
                return Err(Error::Infeasible(format!(
                    "target return {target} exceeds the maximum attainable {best_ret}"
                )));
            }
            // blend from the min-variance point to the max-return vertex to
            // hit the target exactly, then optimize with the return equality
            let base_ret = mu.dot(&mv.w);
            let t = ((target - base_ret) / (best_ret - base_ret)).clamp(0.0, 1.0);
            let start = &mv.w * (1.0 - t) + best * t;
            let mut constraints = base_constraints(m, p.cap);
            let target_ci = constraints.len();
            constraints.push(Constraint::Eq(mu.clone(), target));
            let qp = ActiveSetQp { q: sigma * 2.0, constraints };
            let (w, lambda, resid) = qp.solve(start)?;
            let mut out = finish(&qp, w, &lambda, resid, p.cap, Some(target_ci));
            out.target_binding = true;
            Ok(out)
        }
        Some(rf) => {
            // total return w'mu + (1 - w'1) rf >= target, w'1 <= 1
            let excess = mu.map(|v| v) - DVector::from_element(m, rf);
            let ones = DVector::from_element(m, 1.0);
            let mut constraints = Vec::new();
            let budget_ci = 0usize;
            constraints.push(Constraint::Ge(-ones.clone(), -1.0)); // w'1 <= 1
            let target_ci = constraints.len();
            constraints.push(Constraint::Ge(excess.clone(), target - rf));
            for i in 0..m {
                constraints.push(Constraint::Lo(i));
                if p.cap < 1.0 {
                    constraints.push(Constraint::Hi(i, p.cap));
                }
            }
            let _ = budget_ci;
            // feasible start: all cash if that meets the target, else blend
            // toward the vertex maximizing excess return
            let start = if rf >= target - 1e-12 {
                DVector::zeros(m)
            } else {
                let vertex = greedy_vertex(&excess, p.cap, 1.0);
                let vertex_total = excess.dot(&vertex) + rf;
                if vertex_total < target - 1e-12 {
                    return Err(Error::Infeasible(format!(
                        "target return {target} exceeds the maximum attainable {vertex_total}"
                    )));
                }
                let t = ((target - rf) / (vertex_total - rf)).clamp(0.0, 1.0);
                vertex * t
            };
            let qp = ActiveSetQp { q: sigma * 2.0, constraints };
            let (w, lambda, resid) = qp.solve(start)?;
            Ok(finish(&qp, w, &lambda, resid, p.cap, Some(target_ci)))
        }
    }
}

/// Predictive moments under estimation risk: mean of the mu draws, and the
/// mean of the Sigma draws plus the (population) covariance of the mu draws.
pub fn estimation_risk_moments(draws: &PosteriorDrawSet) -> Result<(DVector<f64>, DMatrix<f64>)> {
    estimation_risk_from(&draws.draws)
}

/// Same, from raw (mu, Sigma) pairs.
pub fn estimation_risk_from(draws: &[MvnEstimate]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if draws.len() < 2 {
        return Err(Error::Config("estimation risk needs at least 2 draws".into()));
    }
    let m = draws[0].dim();
    let t = draws.len() as f64;
    let mut mu = DVector::zeros(m);
    let mut sigma = DMatrix::zeros(m, m);
    for d in draws {
        mu += &d.mu;
        sigma += &d.sigma;
    }
    mu /= t;
    sigma /= t;
    let mut spread = DMatrix::zeros(m, m);
    for d in draws {
        let c = &d.mu - &mu;
        spread += &c * c.transpose();
    }
    spread /= t;
    Ok((mu, sigma + spread))
}

// --- backtest ----------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum BacktestEstimator {
    EqualWeight,
    /// Complete-row sample covariance within the window.
    SampleCov,
    Mle(EngineConfig),
    Bayes(EngineConfig),
}

#[derive(Clone, Debug)]
pub struct BacktestConfig {
    pub window: usize,
    pub rebalance: usize,
    pub estimator: BacktestEstimator,
    pub cap: f64,
    /// Mean-variance with this target when set; minimum variance otherwise.
    pub target_return: Option<f64>,
    /// Use mu/Sigma predictive moments from the draw set (Bayes only).
    pub estimation_risk: bool,
    /// Eligibility: observed returns needed inside the window.
    pub min_history: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            window: 60,
            rebalance: 12,
            estimator: BacktestEstimator::SampleCov,
            cap: 1.0,
            target_return: None,
            estimation_risk: false,
            min_history: 12,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct BacktestReport {
    pub annual_mean: f64,
    pub annual_sd: f64,
    pub sharpe: f64,
    pub sharpe_defined: bool,
    pub tracking_error: f64,
    pub correlation: f64,
    /// Average count of weights above 0.5% across rebalances.
    pub avg_holdings: f64,
    pub periods: usize,
    pub flagged_periods: usize,
}

fn submatrix(returns: &DataMatrix, rows: std::ops::Range<usize>, cols: &[usize]) -> DataMatrix {
    let mut cells = Vec::with_capacity(rows.len() * cols.len());
    for i in rows.clone() {
        for &j in cols {
            cells.push(returns.get(i, j));
        }
    }
    let labels = cols.iter().map(|&j| returns.labels[j].clone()).collect();
    DataMatrix::new(rows.len(), cols.len(), cells, labels)
}

fn estimate_window(
    window: &DataMatrix,
    cfg: &BacktestConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    match &cfg.estimator {
        BacktestEstimator::EqualWeight => unreachable!("equal weight skips estimation"),
        BacktestEstimator::SampleCov => {
            let complete: Vec<usize> = (0..window.n)
                .filter(|&i| (0..window.m).all(|j| window.get(i, j).value().is_some()))
                .collect();
            if complete.len() < 2 {
                return Err(Error::Numeric("too few complete rows in the window".into()));
            }
            let n = complete.len() as f64;
            let m = window.m;
            let mut mu = DVector::zeros(m);
            for &i in &complete {
                for j in 0..m {
                    mu[j] += window.get(i, j).value().unwrap();
                }
            }
            mu /= n;
            let mut sigma = DMatrix::zeros(m, m);
            for &i in &complete {
                let d = DVector::from_fn(m, |j, _| window.get(i, j).value().unwrap() - mu[j]);
                sigma += &d * d.transpose();
            }
            sigma /= n;
            Ok((mu, sigma))
        }
        BacktestEstimator::Mle(config) => {
            let (dd, layout) = engine::prepare(window);
            let est = engine::mle_path(&dd, &layout, config)?;
            Ok((est.mu, est.sigma))
        }
        BacktestEstimator::Bayes(config) => {
            let (dd, layout) = engine::prepare(window);
            let draws = engine::bayes_path(&dd, &layout, config)?;
            if cfg.estimation_risk {
                estimation_risk_moments(&draws)
            } else {
                let est = engine::summarize(&draws, SummaryKind::Mean)?;
                Ok((est.mu, est.sigma))
            }
        }
    }
}

/// Rolling-window buy-and-hold backtest. Rows are months, oldest first.
pub fn backtest(
    returns: &DataMatrix,
    benchmark: &[f64],
    riskfree: &[f64],
    cfg: &BacktestConfig,
) -> Result<BacktestReport> {
    let n = returns.n;
    let m = returns.m;
    if benchmark.len() != n || riskfree.len() != n {
        return Err(Error::Dimension(format!(
            "benchmark ({}) and risk-free ({}) series must have {n} rows",
            benchmark.len(),
            riskfree.len()
        )));
    }
    if cfg.rebalance == 0 || cfg.window == 0 {
        return Err(Error::Config("window and rebalance must be positive".into()));
    }
    let first = cfg.min_history.max(2);
    if first >= n {
        return Err(Error::Config(format!(
            "series of length {n} leaves no room after the {first}-month warmup"
        )));
    }

    let mut port = Vec::new();
    let mut bench = Vec::new();
    let mut rf = Vec::new();
    let mut holdings = Vec::new();
    let mut flagged = 0usize;
    let mut periods = 0usize;
    let mut prev_weights: Option<(Vec<usize>, DVector<f64>)> = None;

    let mut r = first;
    while r < n {
        periods += 1;
        let lo = r.saturating_sub(cfg.window);
        // eligibility inside the estimation window
        let eligible: Vec<usize> = (0..m)
            .filter(|&j| {
                (lo..r).filter(|&i| returns.get(i, j).value().is_some()).count() >= cfg.min_history
            })
            .collect();

        let solved: Option<(Vec<usize>, DVector<f64>)> = if let BacktestEstimator::EqualWeight =
            cfg.estimator
        {
            let k = eligible.len();
            if k == 0 {
                None
            } else {
                Some((eligible.clone(), DVector::from_element(k, 1.0 / k as f64)))
            }
        } else if eligible.len() < 2 {
            None
        } else {
            let mut window = submatrix(returns, lo..r, &eligible);
            // excess returns over the risk-free rate inside the window
            for i in 0..window.n {
                for j in 0..window.m {
                    if let Some(v) = window.get(i, j).value() {
                        window.set(i, j, crate::data_layout::Cell::Value(v - riskfree[lo + i]));
                    }
                }
            }
            match estimate_window(&window, cfg).and_then(|(mu, sigma)| {
                let problem = PortfolioProblem {
                    sigma,
                    mu: Some(mu),
                    target_return: cfg.target_return,
                    risk_free: None,
                    cap: cfg.cap.min(1.0),
                };
                if cfg.target_return.is_some() {
                    solve_mean_variance(&problem)
                } else {
                    solve_min_variance(&problem)
                }
            }) {
                Ok(wts) => Some((eligible.clone(), wts.w)),
                Err(_) => None,
            }
        };

        let held = match solved {
            Some(pair) => {
                prev_weights = Some(pair.clone());
                pair
            }
            None => {
                flagged += 1;
                match &prev_weights {
                    Some(pair) => pair.clone(),
                    None => {
                        r += cfg.rebalance;
                        continue;
                    }
                }
            }
        };
        holdings.push(held.1.iter().filter(|&&x| x > 0.005).count() as f64);

        let hold_end = (r + cfg.rebalance).min(n);
        for i in r..hold_end {
            let mut ret = 0.0;
            let mut missing = false;
            for (slot, &j) in held.0.iter().enumerate() {
                match returns.get(i, j).value() {
                    Some(v) => ret += held.1[slot] * v,
                    None => missing = true,
                }
            }
            if missing {
                flagged += 1;
            }
            port.push(ret);
            bench.push(benchmark[i]);
            rf.push(riskfree[i]);
        }
        r = hold_end;
        if r >= n {
            break;
        }
    }

    if port.len() < 2 {
        return Err(Error::Numeric("backtest produced fewer than 2 portfolio returns".into()));
    }
    let excess: Vec<f64> = port.iter().zip(&rf).map(|(p, r)| p - r).collect();
    let diff: Vec<f64> = port.iter().zip(&bench).map(|(p, b)| p - b).collect();
    let sd_m = stats::var_sample(&port).sqrt();
    let annual_mean = 12.0 * stats::mean(&port);
    let annual_sd = 12f64.sqrt() * sd_m;
    let sharpe_defined = sd_m > 1e-14 * (stats::mean(&port).abs() + 1.0);
    let sharpe = if sharpe_defined {
        12.0 * stats::mean(&excess) / (12f64.sqrt() * sd_m)
    } else {
        f64::NAN
    };
    Ok(BacktestReport {
        annual_mean,
        annual_sd,
        sharpe,
        sharpe_defined,
        tracking_error: 12f64.sqrt() * stats::var_sample(&diff).sqrt(),
        correlation: stats::correlation(&port, &bench),
        avg_holdings: stats::mean(&holdings),
        periods,
        flagged_periods: flagged,
    })
}
