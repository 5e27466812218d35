//! Full-conditional draws of the shrinkage regression hierarchy.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::{DesignCache, ModelFit, RegressionState, StandardizedDesign};
use crate::dist;
use crate::{Error, Result};

/// Coefficient block draw. Normal errors: beta ~ N(beta_tilde, sigma2 A^{-1})
/// on the active columns plus an independent beta0 ~ N(ybar, sigma2/n).
/// Student-t errors: the fit is intercept-extended, one joint draw.
pub fn draw_beta<R: Rng>(
    rng: &mut R,
    d: &StandardizedDesign,
    fit: &ModelFit,
    sigma2: f64,
    student_t: bool,
) -> (f64, Vec<f64>) {
    if student_t {
        let joint = fit.draw(rng, sigma2);
        let beta0 = joint[0];
        let beta = joint.as_slice()[1..].to_vec();
        (beta0, beta)
    } else {
        let beta = fit.draw(rng, sigma2);
        let z: f64 = rng.sample(StandardNormal);
        let beta0 = d.ybar + z * (sigma2 / d.n as f64).sqrt();
        (beta0, beta.as_slice().to_vec())
    }
}

/// Which sigma^2 conditional to draw from.
#[derive(Clone, Copy, Debug)]
pub struct SigmaSpec {
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// Integrate beta out (lower autocorrelation).
    pub marginal: bool,
    /// Flat prior: tau^2 = infinity, no coefficient prior mass.
    pub flat: bool,
    pub student_t: bool,
}

/// sigma^2 full conditional (or beta-marginalized conditional).
pub fn draw_sigma2<R: Rng>(
    rng: &mut R,
    d: &StandardizedDesign,
    cache: &DesignCache,
    state: &RegressionState,
    tau2_inv: &[f64],
    fit: &ModelFit,
    spec: &SigmaSpec,
) -> Result<f64> {
    let n = d.n as f64;
    let k = state.active.len() as f64;
    let base = if spec.student_t { n } else { n - 1.0 };
    let mut shape_num = spec.a_sigma + base + if spec.flat { 0.0 } else { k };
    if spec.marginal {
        shape_num -= k + if spec.student_t { 1.0 } else { 0.0 };
    }
    let shape = shape_num / 2.0;
    if shape <= 0.0 {
        return Err(Error::Numeric(format!(
            "sigma^2 conditional has nonpositive shape {shape}; posterior is improper"
        )));
    }

    let psi = if spec.marginal {
        let total = if spec.student_t {
            let mut ywy = 0.0;
            for i in 0..d.n {
                ywy += d.y[i] * d.y[i] / state.omega2[i];
            }
            ywy
        } else {
            cache.yty
        };
        total - fit.quad
    } else {
        let mut rss = 0.0;
        if spec.student_t {
            for i in 0..d.n {
                let mut f = state.beta0;
                for (slot, &col) in state.active.iter().enumerate() {
                    f += d.x[(i, col)] * state.beta[slot];
                }
                rss += (d.y[i] - f).powi(2) / state.omega2[i];
            }
        } else {
            for i in 0..d.n {
                let mut f = 0.0;
                for (slot, &col) in state.active.iter().enumerate() {
                    f += d.x[(i, col)] * state.beta[slot];
                }
                rss += (d.ytilde[i] - f).powi(2);
            }
        }
        let mut prior_term = 0.0;
        if !spec.flat {
            for (slot, ti) in tau2_inv.iter().enumerate() {
                prior_term += state.beta[slot] * state.beta[slot] * ti;
            }
        }
        rss + prior_term
    };
    let tol = 1e-10 * (cache.yty.abs() + 1.0);
    if psi < -tol {
        return Err(Error::Numeric(format!("sigma^2 quadratic form is negative ({psi})")));
    }
    let scale = (spec.b_sigma + psi.max(0.0)) / 2.0;
    if scale <= 0.0 {
        return Err(Error::Numeric(
            "sigma^2 conditional has zero scale (perfect fit with b_sigma = 0)".into(),
        ));
    }
    dist::draw_inv_gamma(rng, shape, scale)
}

/// Lasso local scale: tau_j^{-2} ~ Inv-Gauss(sqrt(lambda2 sigma2 / beta_j^2), lambda2),
/// falling back to the Exp(lambda2/2) prior when beta_j = 0.
pub fn draw_tau2_lasso<R: Rng>(rng: &mut R, beta_j: f64, sigma2: f64, lambda2: f64) -> Result<f64> {
    let mean = (lambda2 * sigma2 / (beta_j * beta_j)).sqrt();
    if !mean.is_finite() || mean > 1e8 {
        // beta_j (numerically) zero: the conditional degenerates; use the prior
        return dist::draw_gamma_rate(rng, 1.0, lambda2 / 2.0);
    }
    let inv = dist::draw_inv_gauss(rng, mean, lambda2)?;
    Ok(1.0 / inv)
}

/// Normal-gamma local scale: tau_j^2 ~ GIG(gamma - 1/2, beta_j^2/sigma2, lambda2).
pub fn draw_tau2_ng<R: Rng>(
    rng: &mut R,
    beta_j: f64,
    sigma2: f64,
    lambda2: f64,
    gamma: f64,
) -> Result<f64> {
    dist::draw_gig(rng, gamma - 0.5, beta_j * beta_j / sigma2, lambda2)
}

/// Global shrinkage: lambda^2 ~ Gamma(a + k gamma, b/gamma + sum tau^2 / 2)
/// in the rate parameterization.
pub fn draw_lambda2<R: Rng>(
    rng: &mut R,
    tau2: &[f64],
    gamma: f64,
    a_lambda: f64,
    b_lambda: f64,
) -> Result<f64> {
    let k = tau2.len() as f64;
    let shape = a_lambda + k * gamma;
    let rate = b_lambda / gamma + tau2.iter().sum::<f64>() / 2.0;
    dist::draw_gamma_rate(rng, shape, rate)
}

/// Log acceptance ratio of the multiplicative random-walk gamma update with
/// pi(gamma) = gamma^{-2} exp(-gamma - M lambda^2 / (2 gamma)).
pub fn gamma_mh_log_accept(
    gamma: f64,
    gamma_new: f64,
    tau2: &[f64],
    lambda2: f64,
    m_scale: f64,
) -> f64 {
    if gamma_new <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let k = tau2.len() as f64;
    let ln_pi = |g: f64| -2.0 * g.ln() - g - m_scale * lambda2 / (2.0 * g);
    let sum_ln_tau: f64 = tau2.iter().map(|t| t.ln()).sum();
    ln_pi(gamma_new) - ln_pi(gamma)
        + k * (ln_gamma(gamma) - ln_gamma(gamma_new))
        + (gamma_new - gamma) * (k * (lambda2 / 2.0).ln() + sum_ln_tau)
}

/// Student-t latent scale: omega_i^2 ~ IG((nu+1)/2, (nu + r_i^2/sigma2)/2).
pub fn draw_omega2<R: Rng>(rng: &mut R, residual: f64, sigma2: f64, nu: f64) -> Result<f64> {
    dist::draw_inv_gamma(rng, (nu + 1.0) / 2.0, (nu + residual * residual / sigma2) / 2.0)
}

/// Sparsity probability: pi ~ Beta(g + k, h + p* - k).
pub fn draw_pi<R: Rng>(rng: &mut R, k: usize, p_star: usize, g: f64, h: f64) -> Result<f64> {
    let b = Beta::new(g + k as f64, h + (p_star - k) as f64)
        .map_err(|e| Error::Numeric(format!("beta params: {e}")))?;
    Ok(b.sample(rng).clamp(1e-9, 1.0 - 1e-9))
}

/// Empirical-Bayes b_sigma: the IG(a_sigma, b_sigma) law gets its (1-alpha)
/// quantile at yty, via the incomplete gamma inverse.
pub fn empirical_bayes_bsigma(yty: f64, a_sigma: f64, alpha: f64) -> Result<f64> {
    if yty <= 0.0 {
        return Err(Error::Numeric("empirical Bayes needs yty > 0".into()));
    }
    // CDF_IG(a,b)(x) = Q(a, b/x); solving Q(a, b/yty) = 1 - alpha gives
    // b = yty * Pinv(a, alpha)
    Ok(yty * dist::inv_reg_gamma_lower(a_sigma, alpha)?)
}
