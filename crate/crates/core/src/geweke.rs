//! Getting-it-right validation of the Gibbs sampler.
//!
//! Two ways to sample the joint p(theta, y): (a) marginal-conditional, i.e.
//! theta from the prior then y | theta from the likelihood, all independent;
//! and (b) successive-conditional, alternating the production Gibbs kernel
//! theta' | theta, y with a fresh y | theta'. If the sampler is correct both
//! streams share every moment; z-scores far outside +/-4 flag a bug.
//!
//! The regression here is the intercept-marginalized lasso model on centered
//! data, which is exactly what the production conditionals target. Hyper
//! parameters must be proper (and are chosen with finite fourth moments so
//! the z statistics behave).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{self, Stream};
use crate::samplers::{
    standardize, FixedParams, PriorKind, RegressionHyperParams, RegressionSampler,
};
use crate::stats;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GewekeConfig {
    pub n: usize,
    pub p: usize,
    pub iterations: usize,
    /// sigma^2 ~ IG(a_sigma/2, b_sigma/2): needs a_sigma > 4 for variances.
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// lambda^2 ~ Gamma(a_lambda, rate b_lambda): a_lambda > 4 keeps tau^2
    /// fourth moments finite.
    pub a_lambda: f64,
    pub b_lambda: f64,
    pub marginal_sigma2: bool,
    pub seed: u64,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        GewekeConfig {
            n: 10,
            p: 2,
            iterations: 100_000,
            a_sigma: 8.0,
            b_sigma: 8.0,
            a_lambda: 5.0,
            b_lambda: 5.0,
            marginal_sigma2: false,
            seed: 20260810,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GewekeStat {
    pub name: String,
    pub forward_mean: f64,
    pub chain_mean: f64,
    pub z: f64,
}

#[derive(Clone, Debug)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

struct ThetaDraw {
    sigma2: f64,
    lambda2: f64,
    tau2: Vec<f64>,
    beta: Vec<f64>,
}

fn forward_theta(rng: &mut Stream, cfg: &GewekeConfig) -> Result<ThetaDraw> {
    let sigma2 = crate::dist::draw_inv_gamma(rng, cfg.a_sigma / 2.0, cfg.b_sigma / 2.0)?;
    let lambda2 = crate::dist::draw_gamma_rate(rng, cfg.a_lambda, cfg.b_lambda)?;
    let tau2: Vec<f64> = (0..cfg.p)
        .map(|_| crate::dist::draw_gamma_rate(rng, 1.0, lambda2 / 2.0))
        .collect::<Result<_>>()?;
    let beta: Vec<f64> = tau2
        .iter()
        .map(|t| rng.sample::<f64, _>(StandardNormal) * (sigma2 * t).sqrt())
        .collect();
    Ok(ThetaDraw { sigma2, lambda2, tau2, beta })
}

/// y = X beta + eps, re-centered (the intercept-marginalized likelihood).
fn forward_data(rng: &mut Stream, x: &nalgebra::DMatrix<f64>, theta: &ThetaDraw) -> Vec<f64> {
    let n = x.nrows();
    let mut y = vec![0.0; n];
    let sd = theta.sigma2.sqrt();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut f = 0.0;
        for j in 0..x.ncols() {
            f += x[(i, j)] * theta.beta[j];
        }
        *yi = f + sd * rng.sample::<f64, _>(StandardNormal);
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    for yi in y.iter_mut() {
        *yi -= mean;
    }
    y
}

fn monitored(theta: &ThetaDraw, y: &[f64]) -> Vec<f64> {
    let yty: f64 = y.iter().map(|v| v * v).sum();
    vec![
        theta.beta[0],
        theta.beta[1],
        theta.beta[0] * theta.beta[0],
        theta.beta[0] * theta.beta[1],
        theta.sigma2,
        theta.sigma2.ln(),
        theta.lambda2.ln(),
        theta.tau2[0].ln(),
        yty,
    ]
}

const NAMES: [&str; 9] = [
    "beta1", "beta2", "beta1^2", "beta1*beta2", "sigma2", "ln_sigma2", "ln_lambda2", "ln_tau2_1",
    "yty",
];

/// Run the joint-distribution test on the lasso sampler.
pub fn run_lasso_geweke(cfg: &GewekeConfig) -> Result<GewekeReport> {
    let hyper = RegressionHyperParams {
        prior: PriorKind::Lasso,
        a_sigma: cfg.a_sigma,
        b_sigma: cfg.b_sigma,
        a_lambda: cfg.a_lambda,
        b_lambda: Some(cfg.b_lambda),
        marginal_sigma2: cfg.marginal_sigma2,
        fixed: FixedParams::default(),
        ..Default::default()
    };
    run_with_kernel(cfg, hyper)
}

/// Same harness with an explicit kernel configuration; a kernel whose hyper
/// parameters disagree with the forward prior must fail the test.
pub fn run_with_kernel(cfg: &GewekeConfig, hyper: RegressionHyperParams) -> Result<GewekeReport> {
    if cfg.p < 2 {
        return Err(Error::Config("geweke harness monitors two coefficients".into()));
    }
    let mut r_design = rng::tagged(cfg.seed, 11);
    // fixed standardized design shared by both streams
    let xrows: Vec<Vec<f64>> = (0..cfg.n)
        .map(|_| (0..cfg.p).map(|_| r_design.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let y0 = vec![0.0; cfg.n];
    let pre = standardize(&xrows, &y0)?;
    let x = pre.x.clone();

    // stream A: marginal-conditional (independent) draws
    let mut ra = rng::tagged(cfg.seed, 12);
    let mut forward: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.iterations); NAMES.len()];
    for _ in 0..cfg.iterations {
        let theta = forward_theta(&mut ra, cfg)?;
        let y = forward_data(&mut ra, &x, &theta);
        for (slot, g) in monitored(&theta, &y).into_iter().enumerate() {
            forward[slot].push(g);
        }
    }

    // stream B: successive-conditional using the production sweep
    let mut rb = rng::tagged(cfg.seed, 13);
    let theta0 = forward_theta(&mut rb, cfg)?;
    let y = forward_data(&mut rb, &x, &theta0);
    let xview: Vec<Vec<f64>> = (0..cfg.n).map(|i| (0..cfg.p).map(|j| x[(i, j)]).collect()).collect();
    let mut sampler = RegressionSampler::new(standardize(&xview, &y)?, hyper)?;
    // the standardized design of xview equals x itself; seed the exact state
    sampler.state.sigma2 = theta0.sigma2;
    sampler.state.lambda2 = theta0.lambda2;
    sampler.state.tau2 = theta0.tau2.clone();
    sampler.state.beta = theta0.beta.clone();
    sampler.end_tuning();

    let mut chain: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.iterations); NAMES.len()];
    for _ in 0..cfg.iterations {
        sampler.sweep(&mut rb)?;
        let theta = ThetaDraw {
            sigma2: sampler.state.sigma2,
            lambda2: sampler.state.lambda2,
            tau2: sampler.state.tau2.clone(),
            beta: sampler.state.beta.clone(),
        };
        let y = forward_data(&mut rb, &x, &theta);
        sampler.replace_response(&y);
        for (slot, g) in monitored(&theta, &y).into_iter().enumerate() {
            chain[slot].push(g);
        }
    }

    let stats = NAMES
        .iter()
        .enumerate()
        .map(|(slot, name)| {
            let fm = stats::mean(&forward[slot]);
            let cm = stats::mean(&chain[slot]);
            let se_f = stats::se_mean(&forward[slot]);
            let se_c = stats::se_mean_batch(&chain[slot]);
            GewekeStat { name: name.to_string(), forward_mean: fm, chain_mean: cm, z: stats::z_score(fm, se_f, cm, se_c) }
        })
        .collect();
    Ok(GewekeReport { stats })
}
