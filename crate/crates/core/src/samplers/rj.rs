//! Reversible-jump moves over the set of active predictors.
//!
//! Birth draws the new local scale from its prior, so the prior/proposal
//! densities cancel and the acceptance ratio reduces to the integrated
//! likelihood ratio times the model-prior and move-proposal ratios. The
//! model-size prior is Binomial(p*, pi), applied per model of size k.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::{ModelFit, PriorKind, RegressionSampler};
use crate::dist;
use crate::rng::Stream;
use crate::Result;

/// ln of the Binomial(p*, pi) model-size weight at k.
pub fn ln_model_prior(k: usize, p_star: usize, pi: f64) -> f64 {
    if k > p_star {
        return f64::NEG_INFINITY;
    }
    let (kf, pf) = (k as f64, p_star as f64);
    ln_gamma(pf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(pf - kf + 1.0)
        + kf * pi.ln()
        + (pf - kf) * (1.0 - pi).ln()
}

/// ln q(from -> to) for the one-step model moves, including the uniform
/// choice of which column moves.
pub fn ln_q_move(from: usize, to: usize, p: usize, p_star: usize) -> f64 {
    if to == from + 1 && from < p_star {
        if from == 0 {
            -(p as f64).ln()
        } else {
            -(2.0 * (p - from) as f64).ln()
        }
    } else if from == to + 1 && from >= 1 {
        if from == p_star {
            -(p_star as f64).ln()
        } else {
            -(2.0 * from as f64).ln()
        }
    } else {
        f64::NEG_INFINITY
    }
}

/// Integrated-likelihood part of the birth ratio: the determinant and
/// quadratic-form pieces of A_{k->k+1}, with ln tau2_new entering through
/// the prior determinant of the grown D_tau. Under the ridge prior the
/// shared tau^2 is not proposed, and its factor drops from every move
/// except the birth out of the empty model.
pub fn ln_birth_likelihood_ratio(
    fit_small: &ModelFit,
    fit_big: &ModelFit,
    tau2_new: Option<f64>,
    sigma2: f64,
) -> f64 {
    let tau_term = tau2_new.map_or(0.0, |t| -0.5 * t.ln());
    tau_term
        + 0.5 * (fit_small.logdet - fit_big.logdet)
        + (fit_big.quad - fit_small.quad) / (2.0 * sigma2)
}

/// One transdimensional move. Returns whether it was accepted.
pub fn rj_step(s: &mut RegressionSampler, rng: &mut Stream) -> Result<bool> {
    let p = s.design.p;
    let p_star = s.p_star;
    if p == 0 || p_star == 0 {
        return Ok(false);
    }
    let k = s.k();
    // move choice: forced birth at k=0, forced death at k=p*, else a coin
    let birth = if k == 0 {
        true
    } else if k >= p_star {
        false
    } else {
        rng.gen::<bool>()
    };
    s.diag.rj_proposals += 1;
    let pi = s.state.pi;
    let accepted = if birth {
        let absent: Vec<usize> =
            (0..p).filter(|c| !s.state.active.contains(c)).collect();
        let new_col = absent[rng.gen_range(0..absent.len())];
        let tau2_new = match s.hyper.prior {
            PriorKind::Lasso => dist::draw_gamma_rate(rng, 1.0, s.state.lambda2 / 2.0)?,
            PriorKind::Ng => {
                dist::draw_gamma_rate(rng, s.state.gamma, s.state.lambda2 / 2.0)?
            }
            PriorKind::Ridge => s.state.tau2[0],
            PriorKind::Flat => unreachable!("flat prior rejects model averaging"),
        };
        let mut active_big = s.state.active.clone();
        active_big.push(new_col);
        let tau2_inv_small = s.tau2_inv();
        let mut tau2_inv_big = tau2_inv_small.clone();
        tau2_inv_big.push(1.0 / tau2_new);
        let (fit_small, fit_big) = if s.hyper.student_t {
            (
                ModelFit::student_t(&s.design, &s.state.active, &tau2_inv_small, &s.state.omega2)?,
                ModelFit::student_t(&s.design, &active_big, &tau2_inv_big, &s.state.omega2)?,
            )
        } else {
            (
                ModelFit::normal(&s.cache, &s.state.active, &tau2_inv_small)?,
                ModelFit::normal(&s.cache, &active_big, &tau2_inv_big)?,
            )
        };
        let tau_factor = if s.hyper.prior.per_coefficient_tau() || k == 0 {
            Some(tau2_new)
        } else {
            None
        };
        let log_a = ln_birth_likelihood_ratio(&fit_small, &fit_big, tau_factor, s.state.sigma2)
            + ln_model_prior(k + 1, p_star, pi)
            - ln_model_prior(k, p_star, pi)
            + ln_q_move(k + 1, k, p, p_star)
            - ln_q_move(k, k + 1, p, p_star);
        if rng.gen::<f64>().ln() < log_a {
            s.state.active.push(new_col);
            s.state.beta.push(0.0);
            if s.hyper.prior.per_coefficient_tau() {
                s.state.tau2.push(tau2_new);
            }
            true
        } else {
            false
        }
    } else {
        let slot = rng.gen_range(0..k);
        let mut active_small = s.state.active.clone();
        active_small.remove(slot);
        let tau2_inv_big = s.tau2_inv();
        let mut tau2_inv_small = tau2_inv_big.clone();
        tau2_inv_small.remove(slot);
        let tau2_old = match s.hyper.prior {
            PriorKind::Lasso | PriorKind::Ng => s.state.tau2[slot],
            PriorKind::Ridge => s.state.tau2[0],
            PriorKind::Flat => unreachable!(),
        };
        let (fit_small, fit_big) = if s.hyper.student_t {
            (
                ModelFit::student_t(&s.design, &active_small, &tau2_inv_small, &s.state.omega2)?,
                ModelFit::student_t(&s.design, &s.state.active, &tau2_inv_big, &s.state.omega2)?,
            )
        } else {
            (
                ModelFit::normal(&s.cache, &active_small, &tau2_inv_small)?,
                ModelFit::normal(&s.cache, &s.state.active, &tau2_inv_big)?,
            )
        };
        let tau_factor = if s.hyper.prior.per_coefficient_tau() || k == 1 {
            Some(tau2_old)
        } else {
            None
        };
        // death ratio is the reciprocal construction of the birth ratio
        let log_a = -ln_birth_likelihood_ratio(&fit_small, &fit_big, tau_factor, s.state.sigma2)
            + ln_model_prior(k - 1, p_star, pi)
            - ln_model_prior(k, p_star, pi)
            + ln_q_move(k - 1, k, p, p_star)
            - ln_q_move(k, k - 1, p, p_star);
        if rng.gen::<f64>().ln() < log_a {
            s.state.active.remove(slot);
            s.state.beta.remove(slot);
            if s.hyper.prior.per_coefficient_tau() {
                s.state.tau2.remove(slot);
            }
            true
        } else {
            false
        }
    };
    if accepted {
        s.diag.rj_accepts += 1;
    }
    Ok(accepted)
}
