//! Synthetic truth generation, expected log likelihood scoring, the
//! normal-vs-Student-t Bayes factor, and the two experiment harnesses
//! (estimator ranking by ELL, and correct-model frequency for the BF).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::data_layout::{Cell, DataMatrix};
use crate::dist;
use crate::engine::{self, EngineConfig, MvnEstimate, SummaryKind};
use crate::exec;
use crate::rng::{self, Stream};
use crate::samplers::{PriorKind, RegressionDraw, RegressionHyperParams};
use crate::{Error, Result};

// --- generators ----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeneratorMethod {
    /// Dense covariance: Wishart-style draw with no independencies.
    Normwish,
    /// Sequential build with sparse regressions; rate is the per-entry
    /// inclusion probability of each column's coefficient vector.
    Parsimonious { rate: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct GeneratorSpec {
    pub method: GeneratorMethod,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
}

/// Random MVN truth (mu, Sigma), positive definite by construction.
pub fn randmvn(spec: &GeneratorSpec) -> Result<MvnEstimate> {
    let mut r = rng::tagged(spec.seed, rng::TAG_SIMULATE);
    randmvn_with(&mut r, spec.method, spec.m)
}

pub fn randmvn_with(r: &mut Stream, method: GeneratorMethod, m: usize) -> Result<MvnEstimate> {
    if m == 0 {
        return Err(Error::Config("generator needs m >= 1".into()));
    }
    match method {
        GeneratorMethod::Normwish => {
            let mu = DVector::from_fn(m, |_, _| r.sample::<f64, _>(StandardNormal));
            let sigma = dist::draw_wishart_identity(r, m, (m + 2) as f64)?;
            Ok(MvnEstimate { mu, sigma })
        }
        GeneratorMethod::Parsimonious { rate } => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("sparsity rate must lie in [0,1], got {rate}")));
            }
            let mut mu = DVector::zeros(m);
            let mut sigma = DMatrix::zeros(m, m);
            mu[0] = r.sample::<f64, _>(StandardNormal);
            sigma[(0, 0)] = 0.25 + dist::draw_gamma_rate(r, 2.0, 2.0)?;
            for j in 1..m {
                let beta0: f64 = r.sample(StandardNormal);
                let s2 = 0.25 + dist::draw_gamma_rate(r, 2.0, 2.0)?;
                let nonzero = if rate > 0.0 {
                    Binomial::new(j as u64, rate)
                        .map_err(|e| Error::Numeric(e.to_string()))?
                        .sample(r) as usize
                } else {
                    0
                };
                let mut idx: Vec<usize> = (0..j).collect();
                idx.shuffle(r);
                let mut beta = vec![0.0; j];
                for &l in idx.iter().take(nonzero) {
                    beta[l] = r.sample::<f64, _>(StandardNormal);
                }
                let mu_prev = mu.rows(0, j).into_owned();
                let sig_prev = sigma.view((0, 0), (j, j)).into_owned();
                let (mu_j, col) = engine::phi_inverse(beta0, &beta, s2, &mu_prev, &sig_prev)?;
                mu[j] = mu_j;
                for l in 0..j {
                    sigma[(l, j)] = col[l];
                    sigma[(j, l)] = col[l];
                }
                sigma[(j, j)] = col[j];
            }
            Ok(MvnEstimate { mu, sigma })
        }
    }
}

/// Draw n rows from MVN(truth).
pub fn sample_mvn_rows(r: &mut Stream, truth: &MvnEstimate, n: usize) -> Result<DataMatrix> {
    let chol = Cholesky::new(truth.sigma.clone()).ok_or(Error::NotPositiveDefinite {
        context: "generator covariance".into(),
    })?;
    let l = chol.l();
    let m = truth.dim();
    let mut vals = Vec::with_capacity(n * m);
    for _ in 0..n {
        let row = dist::mvn_sample(r, &truth.mu, &l);
        vals.extend(row.iter());
    }
    Ok(DataMatrix::from_complete(n, m, &vals))
}

/// Impose a uniformly random monotone missingness pattern: per-column
/// observed counts are i.i.d. uniform on [floor, n], sorted non-increasing,
/// with column 1 complete.
pub fn rmono(r: &mut Stream, d: &DataMatrix, floor: Option<usize>) -> Result<DataMatrix> {
    let n = d.n;
    let m = d.m;
    let floor = floor.unwrap_or_else(|| (n as f64 * 0.1).ceil().max(2.0) as usize);
    if floor > n {
        return Err(Error::Config(format!("rmono floor {floor} exceeds n {n}")));
    }
    let mut counts: Vec<usize> = (1..m).map(|_| r.gen_range(floor..=n)).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let mut out = d.clone();
    for (jm1, &nj) in counts.iter().enumerate() {
        let j = jm1 + 1;
        for i in nj..n {
            out.set(i, j, Cell::Missing);
        }
    }
    Ok(out)
}

// --- expected log likelihood ------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct EllScore {
    /// E_truth[ln q], nats.
    pub value: f64,
    /// E_truth[ln truth] = -H(truth).
    pub entropy_term: f64,
    /// KL(truth || q) >= 0.
    pub divergence: f64,
}

/// Expected log likelihood of the true MVN under the estimated one.
/// `paper_variant` reproduces the printed bracket, which omits the -N inside
/// the divergence (a constant offset; rankings are unaffected).
pub fn ell(est: &MvnEstimate, truth: &MvnEstimate, paper_variant: bool) -> Result<EllScore> {
    let m = truth.dim();
    if est.dim() != m {
        return Err(Error::Dimension(format!("estimate dim {} vs truth {m}", est.dim())));
    }
    let chol_t = Cholesky::new(truth.sigma.clone()).ok_or(Error::NotPositiveDefinite {
        context: "truth covariance in ELL".into(),
    })?;
    let chol_e = Cholesky::new(est.sigma.clone()).ok_or(Error::NotPositiveDefinite {
        context: "estimated covariance in ELL".into(),
    })?;
    let logdet_t: f64 = 2.0 * chol_t.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let logdet_e: f64 = 2.0 * chol_e.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    // tr(est^{-1} truth)
    let inv_t = chol_e.solve(&truth.sigma);
    let trace = inv_t.trace();
    let dmu = &est.mu - &truth.mu;
    let quad = dmu.dot(&chol_e.solve(&DMatrix::from_column_slice(m, 1, dmu.as_slice())).column(0).into_owned());
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    let entropy_term = -0.5 * (m as f64 * two_pi_e.ln() + logdet_t);
    let kl = 0.5 * (logdet_e - logdet_t + trace + quad - m as f64);
    let divergence = if paper_variant { kl + m as f64 / 2.0 } else { kl };
    Ok(EllScore { value: entropy_term - divergence, entropy_term, divergence })
}

// --- Bayes factor -------------------------------------------------------------

/// log Bayes factor of the normal model over the Student-t model, computed
/// as the posterior expectation of the ratio of un-normalized likelihoods
/// over draws from the Student-t posterior (log-sum-exp stabilized).
pub fn bayes_factor_normal_vs_t(
    draws: &[RegressionDraw],
    xrows: &[Vec<f64>],
    y: &[f64],
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::Config("bayes factor needs posterior draws".into()));
    }
    let log_ratios = bayes_factor_log_ratios(draws, xrows, y);
    let max = log_ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + log_ratios.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - (draws.len() as f64).ln())
}

/// Per-draw log ratio ln p(y | psi, normal) - ln p(y | psi, nu, Student-t).
pub fn bayes_factor_log_ratios(
    draws: &[RegressionDraw],
    xrows: &[Vec<f64>],
    y: &[f64],
) -> Vec<f64> {
    draws
        .iter()
        .map(|d| {
            let mut acc = 0.0;
            for (row, &yi) in xrows.iter().zip(y) {
                let mut f = d.beta0;
                for (j, &x) in row.iter().enumerate() {
                    f += d.beta[j] * x;
                }
                acc += dist::normal_logpdf(yi, f, d.sigma2)
                    - dist::student_t_logpdf(yi, f, d.sigma2, d.nu);
            }
            acc
        })
        .collect()
}

// --- ranking experiment ---------------------------------------------------------

#[derive(Clone, Debug)]
pub enum EstimatorSpec {
    Bayes { prior: PriorKind, delta: f64, rj: bool, student_t: bool },
    /// Classical path: OLS when the parsimony rule allows, ridge otherwise.
    Classical { delta: f64 },
}

impl EstimatorSpec {
    fn fit(
        &self,
        d: &DataMatrix,
        samples: usize,
        burnin: usize,
        seed: u64,
    ) -> Result<MvnEstimate> {
        match self {
            EstimatorSpec::Bayes { prior, delta, rj, student_t } => {
                let config = EngineConfig {
                    prior: *prior,
                    delta: *delta,
                    model_averaging: *rj,
                    student_t: *student_t,
                    samples,
                    burnin: Some(burnin),
                    thin: Some(1),
                    seed,
                    ..Default::default()
                };
                let (dd, layout) = engine::prepare(d);
                let draws = engine::bayes_path(&dd, &layout, &config)?;
                engine::summarize(&draws, SummaryKind::Mean)
            }
            EstimatorSpec::Classical { delta } => {
                let config = EngineConfig { delta: *delta, ..Default::default() };
                let (dd, layout) = engine::prepare(d);
                engine::mle_path(&dd, &layout, &config)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RankSummary {
    pub name: String,
    pub min_rank: usize,
    pub mean_rank: f64,
    pub max_rank: usize,
    pub failures: usize,
}

#[derive(Clone, Debug)]
pub struct RankTable {
    /// ranks[rep][estimator], 1 = best ELL.
    pub ranks: Vec<Vec<usize>>,
    /// ELL values per rep per estimator (NaN on failure).
    pub scores: Vec<Vec<f64>>,
    pub summaries: Vec<RankSummary>,
}

#[derive(Clone, Debug)]
pub struct RankExperimentConfig {
    pub method: GeneratorMethod,
    pub m: usize,
    pub n: usize,
    pub reps: usize,
    pub samples: usize,
    pub burnin: usize,
    pub mono_floor: Option<usize>,
    pub seed: u64,
    pub jobs: usize,
}

/// Ranks per replication: 1 is the highest expected log likelihood; failed
/// estimators take the worst rank (stable ties).
pub fn rank_experiment(
    cfg: &RankExperimentConfig,
    estimators: &[(String, EstimatorSpec)],
) -> Result<RankTable> {
    if estimators.is_empty() {
        return Err(Error::Config("rank experiment needs at least one estimator".into()));
    }
    let rows: Vec<(Vec<f64>, Vec<usize>)> = exec::try_map_indexed(cfg.jobs, cfg.reps, |rep| {
        let mut r = rng::replication(cfg.seed, rng::TAG_RANK_EXPERIMENT, rep);
        let truth = randmvn_with(&mut r, cfg.method, cfg.m)?;
        let complete = sample_mvn_rows(&mut r, &truth, cfg.n)?;
        let observed = rmono(&mut r, &complete, cfg.mono_floor)?;
        let mut scores = Vec::with_capacity(estimators.len());
        for (i, (_, est)) in estimators.iter().enumerate() {
            let run_seed = cfg.seed ^ ((rep as u64) << 20) ^ ((i as u64) << 52) ^ 0x5eed;
            let score = est
                .fit(&observed, cfg.samples, cfg.burnin, run_seed)
                .and_then(|fitted| ell(&fitted, &truth, false))
                .map(|s| s.value)
                .unwrap_or(f64::NAN);
            scores.push(score);
        }
        // rank: higher ELL is better; NaN (failure) sorts worst; stable ties
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            match (scores[a].is_nan(), scores[b].is_nan()) {
                (true, true) => a.cmp(&b),
                (true, false) => std::cmp::Ordering::Greater,
                (false, true) => std::cmp::Ordering::Less,
                (false, false) => scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap()
                    .then(a.cmp(&b)),
            }
        });
        let mut ranks = vec![0usize; scores.len()];
        for (pos, &est_idx) in order.iter().enumerate() {
            ranks[est_idx] = pos + 1;
        }
        Ok((scores, ranks))
    })?;

    let ranks: Vec<Vec<usize>> = rows.iter().map(|(_, r)| r.clone()).collect();
    let scores: Vec<Vec<f64>> = rows.iter().map(|(s, _)| s.clone()).collect();
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let col: Vec<usize> = ranks.iter().map(|r| r[i]).collect();
            RankSummary {
                name: name.clone(),
                min_rank: *col.iter().min().unwrap(),
                mean_rank: col.iter().sum::<usize>() as f64 / col.len() as f64,
                max_rank: *col.iter().max().unwrap(),
                failures: scores.iter().filter(|s| s[i].is_nan()).count(),
            }
        })
        .collect();
    Ok(RankTable { ranks, scores, summaries })
}

// --- BF frequency experiment ----------------------------------------------------

#[derive(Clone, Debug)]
pub struct BfExperimentConfig {
    pub n_grid: Vec<usize>,
    /// None encodes normal errors (nu = infinity).
    pub nu_grid: Vec<Option<f64>>,
    pub reps: usize,
    pub samples: usize,
    pub burnin: usize,
    /// Sweeps between saves as a multiple of n; the conditional count of
    /// latent scales grows with n, so thinning should too.
    pub thin_per_n: f64,
    /// "Strong" evidence cutoff on |log10 BF|.
    pub strong_log10: f64,
    pub prior: PriorKind,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for BfExperimentConfig {
    fn default() -> Self {
        BfExperimentConfig {
            n_grid: vec![30, 75, 200],
            nu_grid: vec![Some(3.0), Some(5.0), None],
            reps: 30,
            samples: 600,
            burnin: 200,
            thin_per_n: 0.5,
            strong_log10: 1.0,
            prior: PriorKind::Lasso,
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfCell {
    pub n: usize,
    /// None = normal data.
    pub nu: Option<f64>,
    pub reps: usize,
    /// Share of replications with the correct sign of log BF.
    pub freq_correct: f64,
    /// Share with the correct sign and |log10 BF| above the cutoff.
    pub freq_strong: f64,
    pub mean_log_bf: f64,
}

/// The coefficient vector of the synthetic design (fixed by the experiment).
pub fn bf_truth_beta() -> (f64, Vec<f64>) {
    (1.0, vec![2.0, -3.0, 0.0, 0.75, 0.0, 0.0, -0.9])
}

/// One synthetic draw + chain + log BF. Exposed for the harness tests.
pub fn bf_single_run(
    n: usize,
    nu_true: Option<f64>,
    prior: PriorKind,
    samples: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
) -> Result<f64> {
    let (beta0, beta) = bf_truth_beta();
    let p = beta.len();
    let mut r = rng::tagged(seed, rng::TAG_BF_EXPERIMENT);
    let xrows: Vec<Vec<f64>> =
        (0..n).map(|_| (0..p).map(|_| r.gen::<f64>()).collect()).collect();
    let y: Vec<f64> = xrows
        .iter()
        .map(|row| {
            let f = beta0 + row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>();
            let eps = match nu_true {
                Some(nu) => dist::draw_student_t(&mut r, 1.0, nu),
                None => Ok(r.sample::<f64, _>(StandardNormal)),
            };
            eps.map(|e| f + e)
        })
        .collect::<Result<_>>()?;
    let hyper = RegressionHyperParams { prior, student_t: true, ..Default::default() };
    let run = crate::samplers::run_regression(&xrows, &y, hyper, samples, burnin, thin, seed ^ 0xbf)?;
    bayes_factor_normal_vs_t(&run.draws, &xrows, &y)
}

/// Correct-model frequency across the (n, nu) grid.
pub fn bf_frequency_experiment(cfg: &BfExperimentConfig) -> Result<Vec<BfCell>> {
    let mut cells = Vec::new();
    for &n in &cfg.n_grid {
        for &nu in &cfg.nu_grid {
            let thin = ((cfg.thin_per_n * n as f64).round() as usize).max(1);
            let logs: Vec<f64> = exec::try_map_indexed(cfg.jobs, cfg.reps, |rep| {
                let seed = cfg.seed
                    ^ ((n as u64) << 32)
                    ^ ((nu.unwrap_or(0.0).to_bits()) >> 12)
                    ^ ((rep as u64) << 8);
                bf_single_run(n, nu, cfg.prior, cfg.samples, cfg.burnin, thin, seed)
            })?;
            let correct = |l: &f64| if nu.is_some() { *l < 0.0 } else { *l > 0.0 };
            let strong_cut = cfg.strong_log10 * std::f64::consts::LN_10;
            let n_correct = logs.iter().filter(|l| correct(l)).count();
            let n_strong =
                logs.iter().filter(|l| correct(l) && l.abs() > strong_cut).count();
            cells.push(BfCell {
                n,
                nu,
                reps: cfg.reps,
                freq_correct: n_correct as f64 / cfg.reps as f64,
                freq_strong: n_strong as f64 / cfg.reps as f64,
                mean_log_bf: crate::stats::mean(&logs),
            });
        }
    }
    Ok(cells)
}
