//! Hierarchical Bayesian shrinkage regression by Gibbs sampling.
//!
//! One `RegressionSampler` owns the state of a single regression y ~ X under
//! a lasso, normal-gamma, ridge, or flat prior, optionally with Student-t
//! errors (via the per-observation scale mixture) and reversible-jump moves
//! over the set of active predictors. The engine instantiates one sampler
//! per data column and chains the draws through the monotone factorization.

mod draws;
pub mod nu;
mod rj;

pub use draws::{
    draw_beta, draw_lambda2, draw_omega2, draw_pi, draw_sigma2, draw_tau2_lasso, draw_tau2_ng,
    empirical_bayes_bsigma, gamma_mh_log_accept, SigmaSpec,
};
pub use rj::{ln_model_prior, ln_q_move, rj_step};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dist;
use crate::rng::Stream;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PriorKind {
    Lasso,
    Ng,
    Ridge,
    Flat,
}

impl PriorKind {
    pub fn is_shrinkage(&self) -> bool {
        !matches!(self, PriorKind::Flat)
    }
    pub fn per_coefficient_tau(&self) -> bool {
        matches!(self, PriorKind::Lasso | PriorKind::Ng)
    }
}

/// Pins for individual parameters, used by validation harnesses and tests.
#[derive(Clone, Copy, Debug, Default)]
pub struct FixedParams {
    pub sigma2: Option<f64>,
    pub tau2: Option<f64>,
    pub nu: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda2: Option<f64>,
    pub pi: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RegressionHyperParams {
    pub prior: PriorKind,
    /// sigma^2 ~ IG(a_sigma/2, b_sigma/2); 0,0 is the sigma^{-2} default.
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// lambda^2 ~ Gamma(a_lambda, rate b_lambda); None picks M/2 empirically.
    pub a_lambda: f64,
    pub b_lambda: Option<f64>,
    /// ridge: tau^2 ~ IG(a_tau/2, b_tau/2).
    pub a_tau: f64,
    pub b_tau: f64,
    /// Scale M in the gamma prior pi(gamma); None picks it empirically.
    pub m_scale: Option<f64>,
    /// Exponential rate of the nu prior (mean 1/theta).
    pub theta: f64,
    /// Initial random-walk scale of the gamma MH update (tuned in burn-in).
    pub sigma_gamma: f64,
    /// Beta(g, h) hyper prior for the sparsity probability pi.
    pub g: f64,
    pub h: f64,
    /// Some(pi) fixes the sparsity probability instead of the Beta update.
    pub pi_fixed: Option<f64>,
    pub model_averaging: bool,
    pub student_t: bool,
    /// Draw sigma^2 from the beta-marginalized conditional (lower autocorrelation).
    pub marginal_sigma2: bool,
    /// When the engine pools a common nu across columns, the per-column
    /// sweep must not draw its own.
    pub nu_external: bool,
    pub fixed: FixedParams,
}

impl Default for RegressionHyperParams {
    fn default() -> Self {
        RegressionHyperParams {
            prior: PriorKind::Lasso,
            a_sigma: 0.0,
            b_sigma: 0.0,
            a_lambda: 2.0,
            b_lambda: None,
            a_tau: 0.0,
            b_tau: 0.0,
            m_scale: None,
            theta: 0.1,
            sigma_gamma: 0.3,
            g: 1.0,
            h: 1.0,
            pi_fixed: None,
            model_averaging: false,
            student_t: false,
            marginal_sigma2: true,
            nu_external: false,
            fixed: FixedParams::default(),
        }
    }
}

/// Design with zero-mean, unit-L2-norm columns and the recorded transform.
#[derive(Clone, Debug)]
pub struct StandardizedDesign {
    pub x: DMatrix<f64>,
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
    pub y: DVector<f64>,
    pub ytilde: DVector<f64>,
    pub ybar: f64,
    pub n: usize,
    pub p: usize,
}

/// Center each column and scale it to unit L2 norm; center the response.
pub fn standardize(xrows: &[Vec<f64>], y: &[f64]) -> Result<StandardizedDesign> {
    let n = y.len();
    if n < 2 {
        return Err(Error::Config(format!("standardize needs n >= 2, got {n}")));
    }
    if xrows.len() != n {
        return Err(Error::Dimension(format!("{} design rows vs {} responses", xrows.len(), n)));
    }
    let p = xrows.first().map_or(0, Vec::len);
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut centers = vec![0.0; p];
    let mut scales = vec![0.0; p];
    for j in 0..p {
        let mut mean = 0.0;
        for row in xrows {
            mean += row[j];
        }
        mean /= n as f64;
        let mut norm2 = 0.0;
        for (i, row) in xrows.iter().enumerate() {
            let v = row[j] - mean;
            x[(i, j)] = v;
            norm2 += v * v;
        }
        if norm2 <= 0.0 {
            return Err(Error::ConstantColumn { col: j + 1 });
        }
        let norm = norm2.sqrt();
        for i in 0..n {
            x[(i, j)] /= norm;
        }
        centers[j] = mean;
        scales[j] = norm;
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    let yv = DVector::from_column_slice(y);
    let ytilde = yv.map(|v| v - ybar);
    Ok(StandardizedDesign { x, centers, scales, y: yv, ytilde, ybar, n, p })
}

/// Map a draw on the standardized scale back to raw coordinates; inactive
/// columns get exact zeros.
pub fn unstandardize_draw(
    beta0: f64,
    beta: &[f64],
    active: &[usize],
    d: &StandardizedDesign,
) -> (f64, Vec<f64>) {
    let mut raw = vec![0.0; d.p];
    let mut b0 = beta0;
    for (slot, &col) in active.iter().enumerate() {
        let bj = beta[slot] / d.scales[col];
        raw[col] = bj;
        b0 -= bj * d.centers[col];
    }
    (b0, raw)
}

/// Precomputed Gram pieces of a fixed design.
#[derive(Clone, Debug)]
pub struct DesignCache {
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
}

impl DesignCache {
    pub fn new(d: &StandardizedDesign) -> Self {
        let gram = d.x.transpose() * &d.x;
        let xty = d.x.transpose() * &d.ytilde;
        let yty = d.ytilde.dot(&d.ytilde);
        DesignCache { gram, xty, yty }
    }
}

/// Posterior pieces of the current (sub)model: Cholesky of A, the
/// conditional mean, its quadratic form, and ln|A|.
pub struct ModelFit {
    pub chol: Option<Cholesky<f64, Dyn>>,
    pub beta_tilde: DVector<f64>,
    pub quad: f64,
    pub logdet: f64,
}

impl ModelFit {
    /// Normal-errors fit over the active columns: A = X'X + D_tau^{-1}.
    pub fn normal(cache: &DesignCache, active: &[usize], tau2_inv: &[f64]) -> Result<ModelFit> {
        let k = active.len();
        if k == 0 {
            return Ok(ModelFit {
                chol: None,
                beta_tilde: DVector::zeros(0),
                quad: 0.0,
                logdet: 0.0,
            });
        }
        let mut a = DMatrix::<f64>::zeros(k, k);
        for r in 0..k {
            for c in 0..k {
                a[(r, c)] = cache.gram[(active[r], active[c])];
            }
            a[(r, r)] += tau2_inv[r];
        }
        let rhs = DVector::from_fn(k, |r, _| cache.xty[active[r]]);
        Self::finish(a, rhs)
    }

    /// Student-t fit with intercept-extended design:
    /// A = Xe' D_omega^{-1} Xe + diag(0, tau^{-2}).
    pub fn student_t(
        d: &StandardizedDesign,
        active: &[usize],
        tau2_inv: &[f64],
        omega2: &[f64],
    ) -> Result<ModelFit> {
        let k = active.len();
        let q = k + 1;
        let mut a = DMatrix::<f64>::zeros(q, q);
        let mut rhs = DVector::<f64>::zeros(q);
        let mut xe = vec![0.0; q];
        for i in 0..d.n {
            let w = 1.0 / omega2[i];
            xe[0] = 1.0;
            for (slot, &col) in active.iter().enumerate() {
                xe[slot + 1] = d.x[(i, col)];
            }
            for r in 0..q {
                let wr = w * xe[r];
                for c in r..q {
                    a[(r, c)] += wr * xe[c];
                }
                rhs[r] += wr * d.y[i];
            }
        }
        for r in 0..q {
            for c in 0..r {
                a[(r, c)] = a[(c, r)];
            }
        }
        for slot in 0..k {
            a[(slot + 1, slot + 1)] += tau2_inv[slot];
        }
        Self::finish(a, rhs)
    }

    fn finish(a: DMatrix<f64>, rhs: DVector<f64>) -> Result<ModelFit> {
        let chol = Cholesky::new(a).ok_or_else(|| Error::NotPositiveDefinite {
            context: "regression precision matrix A".into(),
        })?;
        let beta_tilde = chol.solve(&rhs);
        let quad = beta_tilde.dot(&rhs);
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(ModelFit { chol: Some(chol), beta_tilde, quad, logdet })
    }

    /// Draw from N(beta_tilde, sigma2 A^{-1}).
    pub fn draw<R: Rng>(&self, rng: &mut R, sigma2: f64) -> DVector<f64> {
        let q = self.beta_tilde.len();
        if q == 0 {
            return DVector::zeros(0);
        }
        let chol = self.chol.as_ref().expect("nonempty fit has a factor");
        let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        // A = L L^T, so cov sigma2 A^{-1} comes from solving L^T u = z
        let u = chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("triangular solve");
        &self.beta_tilde + u * sigma2.sqrt()
    }
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct SamplerDiagnostics {
    pub gamma_proposals: u64,
    pub gamma_accepts: u64,
    pub rj_proposals: u64,
    pub rj_accepts: u64,
    pub nu_draws: u64,
    pub nu_attempts: u64,
    pub sigma_gamma_final: f64,
}

impl SamplerDiagnostics {
    pub fn gamma_rate(&self) -> f64 {
        if self.gamma_proposals == 0 {
            return f64::NAN;
        }
        self.gamma_accepts as f64 / self.gamma_proposals as f64
    }
    pub fn rj_rate(&self) -> f64 {
        if self.rj_proposals == 0 {
            return f64::NAN;
        }
        self.rj_accepts as f64 / self.rj_proposals as f64
    }
}

/// One Bayesian shrinkage regression chain.
#[derive(Clone, Debug)]
pub struct RegressionState {
    pub beta0: f64,
    /// Coefficients of the active columns, standardized scale.
    pub beta: Vec<f64>,
    /// Design column index per slot.
    pub active: Vec<usize>,
    pub sigma2: f64,
    /// Per-slot scales (lasso/NG), a single shared entry (ridge), or empty (flat).
    pub tau2: Vec<f64>,
    pub lambda2: f64,
    pub gamma: f64,
    pub omega2: Vec<f64>,
    pub nu: f64,
    pub pi: f64,
}

pub struct RegressionSampler {
    pub design: StandardizedDesign,
    pub hyper: RegressionHyperParams,
    pub state: RegressionState,
    pub diag: SamplerDiagnostics,
    pub cache: DesignCache,
    pub p_star: usize,
    b_lambda: f64,
    m_scale: f64,
    sigma_gamma: f64,
    tuning: bool,
    gamma_batch: (u32, u32),
    gamma_batches: u32,
}

impl RegressionSampler {
    pub fn new(design: StandardizedDesign, mut hyper: RegressionHyperParams) -> Result<Self> {
        let n = design.n;
        let p = design.p;
        if hyper.prior == PriorKind::Flat && hyper.model_averaging {
            return Err(Error::Config(
                "model averaging requires a proper coefficient prior; use lasso, ng or ridge".into(),
            ));
        }
        let cache = DesignCache::new(&design);
        // proper sigma^2 prior is required once p >= n (empirical Bayes default)
        if p >= n && hyper.a_sigma == 0.0 && hyper.b_sigma == 0.0 && !hyper.model_averaging {
            hyper.a_sigma = 3.0; // IG(3/2, .) in the model's halved convention
            if cache.yty > 0.0 {
                hyper.b_sigma = 2.0 * empirical_bayes_bsigma(cache.yty, hyper.a_sigma / 2.0, 0.05)?;
            }
        }
        if hyper.prior == PriorKind::Flat && p >= n && hyper.a_sigma <= (p as f64 - n as f64 - 1.0)
        {
            return Err(Error::Config(format!(
                "flat prior with p {p} >= n {n} needs a_sigma > p - n - 1"
            )));
        }
        let m_scale = hyper.m_scale.unwrap_or_else(|| {
            // moment match: E beta_j^2 ~ sigma^2 M / 2 against the marginal
            // covariances of the unit-norm columns
            let s2y = (cache.yty / (n as f64 - 1.0)).max(1e-12);
            let mut acc = 0.0;
            for j in 0..p {
                acc += cache.xty[j].powi(2);
            }
            let avg = if p > 0 { acc / p as f64 } else { s2y };
            (2.0 * avg / s2y).max(1e-6)
        });
        let b_lambda = hyper.b_lambda.unwrap_or(m_scale / 2.0);
        if hyper.prior == PriorKind::Ridge && hyper.a_tau == 0.0 && hyper.b_tau == 0.0 {
            // match the shared scale to the lasso hierarchy's empirical-Bayes
            // coefficient size: tau^2 ~ IG(3, 2M), prior mean M. The improper
            // 1/tau^2 default lets tau^2 run away on dense designs with
            // p close to n, degenerating the fit toward unshrunk OLS.
            hyper.a_tau = 6.0;
            hyper.b_tau = 4.0 * m_scale;
        }
        let p_star = p.min(n.saturating_sub(1));
        let active: Vec<usize> = if hyper.model_averaging { Vec::new() } else { (0..p).collect() };
        let k = active.len();
        let tau2 = match hyper.prior {
            PriorKind::Lasso | PriorKind::Ng => vec![hyper.fixed.tau2.unwrap_or(1.0); k],
            PriorKind::Ridge => vec![hyper.fixed.tau2.unwrap_or(1.0)],
            PriorKind::Flat => Vec::new(),
        };
        let sigma2 = hyper
            .fixed
            .sigma2
            .unwrap_or_else(|| (cache.yty / (n as f64 - 1.0)).max(1e-8));
        let state = RegressionState {
            beta0: design.ybar,
            beta: vec![0.0; k],
            active,
            sigma2,
            tau2,
            lambda2: hyper.fixed.lambda2.unwrap_or(hyper.a_lambda / b_lambda.max(1e-12)),
            gamma: hyper.fixed.gamma.unwrap_or(1.0),
            omega2: if hyper.student_t { vec![1.0; n] } else { Vec::new() },
            nu: hyper.fixed.nu.unwrap_or(1.0 / hyper.theta),
            pi: hyper.fixed.pi.unwrap_or(hyper.pi_fixed.unwrap_or(0.5)),
        };
        let sigma_gamma = hyper.sigma_gamma;
        Ok(RegressionSampler {
            design,
            hyper,
            state,
            diag: SamplerDiagnostics::default(),
            cache,
            p_star,
            b_lambda,
            m_scale,
            sigma_gamma,
            tuning: true,
            gamma_batch: (0, 0),
            gamma_batches: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.state.active.len()
    }

    /// Effective gamma for the tau^2 conditionals: pinned to 1 under lasso.
    fn gamma_eff(&self) -> f64 {
        if self.hyper.prior == PriorKind::Lasso {
            1.0
        } else {
            self.state.gamma
        }
    }

    /// Per-slot precisions 1/tau^2 for the active columns.
    pub fn tau2_inv(&self) -> Vec<f64> {
        match self.hyper.prior {
            PriorKind::Lasso | PriorKind::Ng => self.state.tau2.iter().map(|t| 1.0 / t).collect(),
            PriorKind::Ridge => vec![1.0 / self.state.tau2[0]; self.k()],
            PriorKind::Flat => vec![0.0; self.k()],
        }
    }

    pub fn fit(&self) -> Result<ModelFit> {
        let tau2_inv = self.tau2_inv();
        if self.hyper.student_t {
            ModelFit::student_t(&self.design, &self.state.active, &tau2_inv, &self.state.omega2)
        } else {
            ModelFit::normal(&self.cache, &self.state.active, &tau2_inv)
        }
    }

    /// Stop hyperparameter tuning (end of burn-in) and freeze sigma_gamma.
    pub fn end_tuning(&mut self) {
        self.tuning = false;
        self.diag.sigma_gamma_final = self.sigma_gamma;
    }

    pub fn sigma_gamma(&self) -> f64 {
        self.sigma_gamma
    }

    /// Refresh the design values (MDA: imputed predictor cells moved).
    pub fn refresh_design(&mut self, xrows: &[Vec<f64>]) {
        for (i, row) in xrows.iter().enumerate() {
            for j in 0..self.design.p {
                self.design.x[(i, j)] = (row[j] - self.design.centers[j]) / self.design.scales[j];
            }
        }
        self.cache = DesignCache::new(&self.design);
    }

    /// Replace the response (validation harnesses redraw y each iteration).
    pub fn replace_response(&mut self, y: &[f64]) {
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        self.design.ybar = ybar;
        for i in 0..self.design.n {
            self.design.y[i] = y[i];
            self.design.ytilde[i] = y[i] - ybar;
        }
        self.cache.xty = self.design.x.transpose() * &self.design.ytilde;
        self.cache.yty = self.design.ytilde.dot(&self.design.ytilde);
    }

    fn update_omega2(&mut self, rng: &mut Stream) -> Result<()> {
        let d = &self.design;
        for i in 0..d.n {
            let mut fit = self.state.beta0;
            for (slot, &col) in self.state.active.iter().enumerate() {
                fit += d.x[(i, col)] * self.state.beta[slot];
            }
            let r = d.y[i] - fit;
            self.state.omega2[i] = draw_omega2(rng, r, self.state.sigma2, self.state.nu)?;
        }
        Ok(())
    }

    fn update_tau2(&mut self, rng: &mut Stream) -> Result<()> {
        if self.hyper.fixed.tau2.is_some() {
            return Ok(());
        }
        match self.hyper.prior {
            PriorKind::Lasso | PriorKind::Ng => {
                let gamma = self.gamma_eff();
                for slot in 0..self.k() {
                    let beta_j = self.state.beta[slot];
                    let chi = beta_j * beta_j / self.state.sigma2;
                    self.state.tau2[slot] = if chi < 1e-300 {
                        // transient beta_j = 0: draw from the prior
                        dist::draw_gamma_rate(rng, gamma, self.state.lambda2 / 2.0)?
                    } else {
                        dist::draw_gig(rng, gamma - 0.5, chi, self.state.lambda2)?
                    };
                }
            }
            PriorKind::Ridge => {
                let k = self.k();
                if k > 0 {
                    let bb: f64 = self.state.beta.iter().map(|b| b * b).sum();
                    let shape = (self.hyper.a_tau + k as f64) / 2.0;
                    let scale = (self.hyper.b_tau + bb / self.state.sigma2) / 2.0;
                    if shape > 0.0 && scale > 0.0 {
                        self.state.tau2[0] = dist::draw_inv_gamma(rng, shape, scale)?;
                    }
                } else if self.hyper.a_tau > 0.0 && self.hyper.b_tau > 0.0 {
                    self.state.tau2[0] = dist::draw_inv_gamma(
                        rng,
                        self.hyper.a_tau / 2.0,
                        self.hyper.b_tau / 2.0,
                    )?;
                }
            }
            PriorKind::Flat => {}
        }
        Ok(())
    }

    fn update_lambda2_gamma(&mut self, rng: &mut Stream) -> Result<()> {
        if !self.hyper.prior.per_coefficient_tau() {
            return Ok(());
        }
        if self.hyper.fixed.lambda2.is_none() {
            self.state.lambda2 = draw_lambda2(
                rng,
                &self.state.tau2,
                self.gamma_eff(),
                self.hyper.a_lambda,
                self.b_lambda,
            )?;
        }
        if self.hyper.prior == PriorKind::Ng && self.hyper.fixed.gamma.is_none() {
            let z: f64 = rng.sample(StandardNormal);
            let proposal = self.state.gamma * (self.sigma_gamma * z).exp();
            let log_a = gamma_mh_log_accept(
                self.state.gamma,
                proposal,
                &self.state.tau2,
                self.state.lambda2,
                self.m_scale,
            );
            self.diag.gamma_proposals += 1;
            self.gamma_batch.0 += 1;
            let u: f64 = rng.gen();
            if u.ln() < log_a {
                self.state.gamma = proposal;
                self.diag.gamma_accepts += 1;
                self.gamma_batch.1 += 1;
            }
            if self.tuning && self.gamma_batch.0 >= 50 {
                self.gamma_batches += 1;
                let rate = self.gamma_batch.1 as f64 / self.gamma_batch.0 as f64;
                let step = 1.5 / (self.gamma_batches as f64).sqrt();
                self.sigma_gamma =
                    (self.sigma_gamma * ((rate - 0.25) * step).exp()).clamp(1e-3, 10.0);
                self.gamma_batch = (0, 0);
            }
        }
        Ok(())
    }

    fn update_sigma2(&mut self, rng: &mut Stream, fit: &ModelFit) -> Result<()> {
        if let Some(s2) = self.hyper.fixed.sigma2 {
            self.state.sigma2 = s2;
            return Ok(());
        }
        // RJ moves integrate beta out, so the marginal draw is forced there
        let marginal = self.hyper.marginal_sigma2 || self.hyper.model_averaging;
        let spec = SigmaSpec {
            a_sigma: self.hyper.a_sigma,
            b_sigma: self.hyper.b_sigma,
            marginal,
            flat: self.hyper.prior == PriorKind::Flat,
            student_t: self.hyper.student_t,
        };
        self.state.sigma2 = draw_sigma2(
            rng,
            &self.design,
            &self.cache,
            &self.state,
            &self.tau2_inv(),
            fit,
            &spec,
        )?;
        Ok(())
    }

    fn update_beta(&mut self, rng: &mut Stream, fit: &ModelFit) -> Result<()> {
        let (beta0, beta) = draw_beta(
            rng,
            &self.design,
            fit,
            self.state.sigma2,
            self.hyper.student_t,
        );
        self.state.beta0 = beta0;
        self.state.beta = beta;
        Ok(())
    }

    /// One full Gibbs scan. Order: Student-t latents, local scales, global
    /// shrinkage, transdimensional moves, then the (sigma^2, beta) block and
    /// the sparsity probability.
    pub fn sweep(&mut self, rng: &mut Stream) -> Result<()> {
        if self.hyper.student_t {
            self.update_omega2(rng)?;
            if !self.hyper.nu_external && self.hyper.fixed.nu.is_none() {
                let eta = nu::eta_from_omega2(&self.state.omega2, self.hyper.theta);
                let (nu_draw, attempts) = nu::draw_nu_given_eta(rng, eta, self.design.n)?;
                self.state.nu = nu_draw;
                self.diag.nu_draws += 1;
                self.diag.nu_attempts += attempts;
            }
        }
        self.update_tau2(rng)?;
        self.update_lambda2_gamma(rng)?;
        if self.hyper.model_averaging {
            for _ in 0..self.design.p.max(1) {
                rj::rj_step(self, rng)?;
            }
        }
        let fit = self.fit()?;
        self.update_sigma2(rng, &fit)?;
        self.update_beta(rng, &fit)?;
        if self.hyper.model_averaging && self.hyper.pi_fixed.is_none() {
            if self.hyper.fixed.pi.is_none() {
                self.state.pi =
                    draw_pi(rng, self.k(), self.p_star, self.hyper.g, self.hyper.h)?;
            }
        }
        Ok(())
    }

    /// Coefficient draw mapped back to raw coordinates:
    /// (intercept, full-length beta with exact zeros, sigma2).
    pub fn raw_draw(&self) -> (f64, Vec<f64>, f64) {
        let (b0, beta) = unstandardize_draw(
            self.state.beta0,
            &self.state.beta,
            &self.state.active,
            &self.design,
        );
        (b0, beta, self.state.sigma2)
    }

    /// Inclusion mask over all p design columns.
    pub fn inclusion_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.design.p];
        for &c in &self.state.active {
            mask[c] = true;
        }
        mask
    }

    /// Observed-data log likelihood at the current draw (raw coordinates).
    pub fn log_likelihood(&self) -> f64 {
        let d = &self.design;
        let mut ll = 0.0;
        for i in 0..d.n {
            let mut fit = self.state.beta0;
            for (slot, &col) in self.state.active.iter().enumerate() {
                fit += d.x[(i, col)] * self.state.beta[slot];
            }
            ll += if self.hyper.student_t {
                dist::student_t_logpdf(d.y[i], fit, self.state.sigma2, self.state.nu)
            } else {
                dist::normal_logpdf(d.y[i], fit, self.state.sigma2)
            };
        }
        ll
    }
}

/// One saved draw of a standalone regression chain, raw coordinates.
#[derive(Clone, Debug)]
pub struct RegressionDraw {
    pub beta0: f64,
    /// Full-length coefficient vector (exact zeros on inactive columns).
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub nu: f64,
    pub log_likelihood: f64,
}

#[derive(Clone, Debug)]
pub struct RegressionRun {
    pub draws: Vec<RegressionDraw>,
    pub diag: SamplerDiagnostics,
}

/// Run a single regression chain and return thinned post-burn-in draws.
pub fn run_regression(
    xrows: &[Vec<f64>],
    y: &[f64],
    hyper: RegressionHyperParams,
    samples: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
) -> Result<RegressionRun> {
    let design = standardize(xrows, y)?;
    let mut sampler = RegressionSampler::new(design, hyper)?;
    let mut stream = crate::rng::column(seed, 1);
    let thin = thin.max(1);
    let total = burnin + samples * thin;
    let mut draws = Vec::with_capacity(samples);
    for it in 0..total {
        if it == burnin {
            sampler.end_tuning();
        }
        sampler.sweep(&mut stream)?;
        if it >= burnin && (it - burnin + 1) % thin == 0 {
            let (beta0, beta, sigma2) = sampler.raw_draw();
            draws.push(RegressionDraw {
                beta0,
                beta,
                sigma2,
                nu: sampler.state.nu,
                log_likelihood: sampler.log_likelihood(),
            });
        }
    }
    Ok(RegressionRun { draws, diag: sampler.diag.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stats;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn standardize_basic_column() {
        let d = standardize(&[vec![1.0], vec![2.0], vec![3.0]], &[1.0, 2.0, 3.0]).unwrap();
        let expect = [-1.0 / 2.0f64.sqrt(), 0.0, 1.0 / 2.0f64.sqrt()];
        for i in 0..3 {
            assert_relative_eq!(d.x[(i, 0)], expect[i], epsilon = 1e-12);
        }
        assert_relative_eq!(d.centers[0], 2.0);
        assert_relative_eq!(d.scales[0], 2.0f64.sqrt());
    }

    #[test]
    fn standardize_idempotent_and_invariants() {
        let mut r = rng::root(3);
        let n = 23;
        let xrows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..4).map(|_| r.gen::<f64>() * 5.0 - 1.0).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let d = standardize(&xrows, &y).unwrap();
        for j in 0..4 {
            let col = d.x.column(j);
            assert!(col.iter().sum::<f64>().abs() <= 1e-12);
            assert!((col.norm() - 1.0).abs() <= 1e-12);
        }
        // already standardized input is unchanged
        let xrows2: Vec<Vec<f64>> =
            (0..n).map(|i| (0..4).map(|j| d.x[(i, j)]).collect()).collect();
        let d2 = standardize(&xrows2, &y).unwrap();
        for j in 0..4 {
            assert_relative_eq!(d2.scales[j], 1.0, epsilon = 1e-9);
            assert!(d2.centers[j].abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let err = standardize(&[vec![2.0], vec![2.0], vec![2.0]], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::ConstantColumn { col: 1 }));
    }

    #[test]
    fn unstandardize_identity_and_algebra() {
        let d = StandardizedDesign {
            x: DMatrix::zeros(2, 1),
            centers: vec![0.0],
            scales: vec![1.0],
            y: DVector::zeros(2),
            ytilde: DVector::zeros(2),
            ybar: 0.0,
            n: 2,
            p: 1,
        };
        let (b0, b) = unstandardize_draw(1.5, &[2.0], &[0], &d);
        assert_eq!((b0, b[0]), (1.5, 2.0));

        let d2 = StandardizedDesign { centers: vec![3.0], scales: vec![2.0], ..d };
        let (b0, b) = unstandardize_draw(1.0, &[4.0], &[0], &d2);
        assert_relative_eq!(b[0], 2.0);
        assert_relative_eq!(b0, -5.0);
    }

    #[test]
    fn unstandardize_preserves_fitted_values() {
        let mut r = rng::root(17);
        let n = 15;
        let p = 3;
        let xrows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| r.gen::<f64>() * 3.0 + 1.0).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
        let d = standardize(&xrows, &y).unwrap();
        let beta_std = [0.7, -1.2, 0.4];
        let beta0_std = 0.9;
        let (b0, braw) = unstandardize_draw(beta0_std, &beta_std, &[0, 1, 2], &d);
        for i in 0..n {
            let f_std = beta0_std + (0..p).map(|j| d.x[(i, j)] * beta_std[j]).sum::<f64>();
            let f_raw = b0 + (0..p).map(|j| xrows[i][j] * braw[j]).sum::<f64>();
            assert_relative_eq!(f_std, f_raw, epsilon = 1e-12);
        }
    }

    #[test]
    fn lasso_and_ng_sweeps_identical_at_gamma_one() {
        let mut r = rng::root(5);
        let n = 20;
        let p = 3;
        let xrows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| r.gen::<f64>()).collect()).collect();
        let y: Vec<f64> = (0..n).map(|i| xrows[i][0] * 2.0 + r.gen::<f64>()).collect();
        let d = standardize(&xrows, &y).unwrap();

        let mut lasso = RegressionSampler::new(
            d.clone(),
            RegressionHyperParams {
                prior: PriorKind::Lasso,
                b_lambda: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        let mut ng = RegressionSampler::new(
            d,
            RegressionHyperParams {
                prior: PriorKind::Ng,
                b_lambda: Some(1.0),
                fixed: FixedParams { gamma: Some(1.0), ..Default::default() },
                ..Default::default()
            },
        )
        .unwrap();
        let mut ra = rng::column(99, 1);
        let mut rb = rng::column(99, 1);
        for _ in 0..50 {
            lasso.sweep(&mut ra).unwrap();
            ng.sweep(&mut rb).unwrap();
        }
        assert_eq!(lasso.state.beta, ng.state.beta);
        assert_eq!(lasso.state.sigma2, ng.state.sigma2);
        assert_eq!(lasso.state.tau2, ng.state.tau2);
        assert_eq!(lasso.state.lambda2, ng.state.lambda2);
    }

    #[test]
    fn ridge_with_fixed_tau_matches_closed_form_posterior_mean() {
        let mut r = rng::root(8);
        let n = 50;
        let p = 5;
        let xrows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + xrows[i][0] - 0.5 * xrows[i][3] + 0.3 * r.gen::<f64>())
            .collect();
        let d = standardize(&xrows, &y).unwrap();
        let tau2 = 0.5;
        let cache = DesignCache::new(&d);
        let gram = cache.gram.clone();
        let mut a = gram;
        for j in 0..p {
            a[(j, j)] += 1.0 / tau2;
        }
        let expect = a.lu().solve(&cache.xty).unwrap();

        let mut s = RegressionSampler::new(
            d,
            RegressionHyperParams {
                prior: PriorKind::Ridge,
                fixed: FixedParams { tau2: Some(tau2), ..Default::default() },
                ..Default::default()
            },
        )
        .unwrap();
        let mut rs = rng::column(4, 1);
        for _ in 0..200 {
            s.sweep(&mut rs).unwrap();
        }
        let t = 4000;
        let mut sums = vec![Vec::with_capacity(t); p];
        for _ in 0..t {
            s.sweep(&mut rs).unwrap();
            for j in 0..p {
                sums[j].push(s.state.beta[j]);
            }
        }
        for j in 0..p {
            let mc = stats::mean(&sums[j]);
            let se = stats::se_mean_batch(&sums[j]);
            assert!(
                (mc - expect[j]).abs() < 4.0 * se.max(1e-4),
                "beta[{j}]: mc {mc} vs {} (se {se})",
                expect[j]
            );
        }
    }

    #[test]
    fn flat_prior_chain_matches_conjugate_posterior() {
        // flat prior, p < n: posterior mean of beta is the OLS solution and
        // E[sigma^2] = RSS / (n - 1 - p - 2) from IG((n-1-p)/2, RSS/2)
        let mut r = rng::root(41);
        let n = 40;
        let p = 3;
        let xrows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 0.3 + xrows[i][0] - 0.6 * xrows[i][2] + 0.4 * (r.gen::<f64>() - 0.5))
            .collect();
        let d = standardize(&xrows, &y).unwrap();
        let cache = DesignCache::new(&d);
        let active: Vec<usize> = (0..p).collect();
        let ols = ModelFit::normal(&cache, &active, &[0.0; 3]).unwrap();
        let resid = &d.ytilde - &d.x * &ols.beta_tilde;
        let rss = resid.dot(&resid);
        let s2_mean = (rss / 2.0) / ((n as f64 - 1.0 - p as f64) / 2.0 - 1.0);

        let mut s = RegressionSampler::new(
            d,
            RegressionHyperParams { prior: PriorKind::Flat, ..Default::default() },
        )
        .unwrap();
        let mut rs = rng::column(6, 1);
        for _ in 0..200 {
            s.sweep(&mut rs).unwrap();
        }
        let t = 6000;
        let mut betas = vec![Vec::with_capacity(t); p];
        let mut sig = Vec::with_capacity(t);
        for _ in 0..t {
            s.sweep(&mut rs).unwrap();
            for j in 0..p {
                betas[j].push(s.state.beta[j]);
            }
            sig.push(s.state.sigma2);
        }
        for j in 0..p {
            let mc = stats::mean(&betas[j]);
            let se = stats::se_mean_batch(&betas[j]);
            assert!(
                (mc - ols.beta_tilde[j]).abs() < 3.0 * se,
                "beta[{j}]: {mc} vs {} (se {se})",
                ols.beta_tilde[j]
            );
        }
        let mc = stats::mean(&sig);
        let se = stats::se_mean_batch(&sig);
        assert!((mc - s2_mean).abs() < 3.0 * se, "sigma2 {mc} vs {s2_mean}");
    }

    #[test]
    fn gamma_mh_tuning_reaches_target_band() {
        // NG prior on synthetic data: after Robbins-Monro burn-in tuning the
        // long-run gamma acceptance rate sits in the target band
        let mut r = rng::root(43);
        let n = 40;
        let p = 6;
        let xrows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| r.gen::<f64>()).collect()).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| xrows[i][0] * 1.5 - xrows[i][1] + 0.5 * (r.gen::<f64>() - 0.5))
            .collect();
        let d = standardize(&xrows, &y).unwrap();
        let mut s = RegressionSampler::new(
            d,
            RegressionHyperParams {
                prior: PriorKind::Ng,
                sigma_gamma: 3.0, // deliberately far off
                ..Default::default()
            },
        )
        .unwrap();
        let mut rs = rng::column(8, 1);
        for _ in 0..4000 {
            s.sweep(&mut rs).unwrap();
        }
        s.end_tuning();
        let before = (s.diag.gamma_proposals, s.diag.gamma_accepts);
        for _ in 0..20_000 {
            s.sweep(&mut rs).unwrap();
        }
        let rate = (s.diag.gamma_accepts - before.1) as f64
            / (s.diag.gamma_proposals - before.0) as f64;
        assert!(
            (0.15..=0.35).contains(&rate),
            "post-tuning acceptance {rate} (sigma_gamma {})",
            s.sigma_gamma()
        );
    }

    #[test]
    fn student_t_with_huge_nu_matches_normal_run() {
        let mut r = rng::root(21);
        let n = 60;
        let p = 2;
        let xrows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| r.gen::<f64>()).collect()).collect();
        let y: Vec<f64> =
            (0..n).map(|i| 0.5 + 2.0 * xrows[i][0] + 0.4 * (r.gen::<f64>() - 0.5)).collect();
        let d = standardize(&xrows, &y).unwrap();

        let run = |student: bool, seed| -> (f64, f64) {
            let mut s = RegressionSampler::new(
                d.clone(),
                RegressionHyperParams {
                    prior: PriorKind::Lasso,
                    student_t: student,
                    fixed: FixedParams {
                        nu: if student { Some(1e6) } else { None },
                        ..Default::default()
                    },
                    ..Default::default()
                },
            )
            .unwrap();
            let mut rs = rng::column(seed, 1);
            for _ in 0..300 {
                s.sweep(&mut rs).unwrap();
            }
            let t = 3000;
            let mut b0 = Vec::new();
            let mut b1 = Vec::new();
            for _ in 0..t {
                s.sweep(&mut rs).unwrap();
                let (raw0, raw, _) = s.raw_draw();
                b0.push(raw0);
                b1.push(raw[0]);
            }
            (stats::mean(&b0), stats::mean(&b1))
        };
        let (n0, n1) = run(false, 31);
        let (t0, t1) = run(true, 77);
        assert!((n0 - t0).abs() < 0.05, "{n0} vs {t0}");
        assert!((n1 - t1).abs() < 0.06, "{n1} vs {t1}");
    }
}
