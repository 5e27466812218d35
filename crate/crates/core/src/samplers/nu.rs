//! Rejection sampler for the Student-t degrees of freedom.
//!
//! The conditional p(nu | omega^2, theta) ∝ (nu/2)^{n nu/2} Gamma(nu/2)^{-n}
//! exp(-eta nu) has no standard form. An exponential envelope with mean
//! nu_star is optimal when nu_star solves
//! (n/2)[ln(nu/2) + 1 - digamma(nu/2)] + 1/nu - eta = 0, and the resulting
//! acceptance probability equals one exactly at nu = nu_star.

use rand::Rng;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::{Error, Result};

/// eta = 1/2 sum_i (ln omega_i^2 + omega_i^{-2}) + theta.
pub fn eta_from_omega2(omega2: &[f64], theta: f64) -> f64 {
    0.5 * omega2.iter().map(|w| w.ln() + 1.0 / w).sum::<f64>() + theta
}

/// Residual of the optimal-envelope equation at nu.
pub fn root_residual(nu: f64, eta: f64, n: usize) -> f64 {
    let half = nu / 2.0;
    (n as f64 / 2.0) * (half.ln() + 1.0 - digamma(half)) + 1.0 / nu - eta
}

/// Solve for nu_star with safeguarded Newton on the bracket [1e-2, 1e3].
///
/// The residual is strictly decreasing from +inf toward n/2 - eta < 0
/// (eta > n/2 + theta always), so the root is unique.
pub fn nu_star(eta: f64, n: usize) -> Result<f64> {
    let (mut lo, mut hi) = (1e-2f64, 1e3f64);
    let mut f_lo = root_residual(lo, eta, n);
    let mut f_hi = root_residual(hi, eta, n);
    // expand the bracket if needed
    let mut expand = 0;
    while f_lo < 0.0 && expand < 60 {
        lo /= 10.0;
        f_lo = root_residual(lo, eta, n);
        expand += 1;
    }
    while f_hi > 0.0 && expand < 120 {
        hi *= 10.0;
        f_hi = root_residual(hi, eta, n);
        expand += 1;
    }
    if !(f_lo >= 0.0 && f_hi <= 0.0) {
        return Err(Error::Numeric(format!(
            "nu* bracket failed: f({lo}) = {f_lo}, f({hi}) = {f_hi}, eta = {eta}"
        )));
    }
    let mut x = (lo * hi).sqrt();
    for _ in 0..200 {
        let f = root_residual(x, eta, n);
        if f.abs() < 1e-12 {
            return Ok(x);
        }
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        // derivative of the residual
        let dpsi = trigamma(x / 2.0);
        let df = (n as f64 / 2.0) * (1.0 / x - 0.5 * dpsi) - 1.0 / (x * x);
        let newton = x - f / df;
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    let f = root_residual(x, eta, n);
    if f.abs() < 1e-10 {
        Ok(x)
    } else {
        Err(Error::Numeric(format!("nu* root finding stalled at {x} (residual {f})")))
    }
}

// Trigamma via the recurrence + asymptotic series.
fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        * (1.0
            + inv / 2.0
            + inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0))))
}

/// Log acceptance probability of a candidate nu under the envelope tuned at
/// nu_star; exactly zero at nu = nu_star.
pub fn log_accept(nu: f64, nu_star: f64, eta: f64, n: usize) -> f64 {
    let nf = n as f64;
    nf * (ln_gamma(nu_star / 2.0) - ln_gamma(nu / 2.0))
        + (nf / 2.0) * (nu * (nu / 2.0).ln() - nu_star * (nu_star / 2.0).ln())
        + (nu - nu_star) * (1.0 / nu_star - eta)
}

/// Draw nu from its conditional given eta over n latent scales.
/// Returns the draw and the number of proposals consumed.
pub fn draw_nu_given_eta<R: Rng>(rng: &mut R, eta: f64, n: usize) -> Result<(f64, u64)> {
    let star = nu_star(eta, n)?;
    for attempt in 1..=10_000u64 {
        // exponential envelope with mean nu_star
        let nu = -star * rng.gen::<f64>().ln();
        if rng.gen::<f64>().ln() <= log_accept(nu, star, eta, n) {
            return Ok((nu, attempt));
        }
    }
    Err(Error::Numeric(format!("nu rejection sampler exhausted 10^4 attempts (eta = {eta})")))
}

/// Convenience wrapper computing eta from the latent scales.
pub fn draw_nu<R: Rng>(rng: &mut R, omega2: &[f64], theta: f64) -> Result<(f64, u64)> {
    draw_nu_given_eta(rng, eta_from_omega2(omega2, theta), omega2.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stats;
    use rand::Rng;

    #[test]
    fn acceptance_is_exactly_one_at_nu_star() {
        let eta = 9.3;
        let n = 14;
        let star = nu_star(eta, n).unwrap();
        assert!(root_residual(star, eta, n).abs() <= 1e-10);
        assert_eq!(log_accept(star, star, eta, n), 0.0);
    }

    #[test]
    fn acceptance_never_exceeds_one() {
        let eta = 6.0;
        let n = 10;
        let star = nu_star(eta, n).unwrap();
        let mut r = rng::root(4);
        for _ in 0..10_000 {
            let nu = -star * r.gen::<f64>().ln();
            assert!(log_accept(nu, star, eta, n) <= 1e-12);
        }
    }

    #[test]
    fn trigamma_sanity() {
        // psi'(1) = pi^2/6
        assert!((trigamma(1.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-10);
        // psi'(1/2) = pi^2/2
        assert!((trigamma(0.5) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn draws_match_quadrature_density() {
        // KS of 10^5 accepted draws against the quadrature-normalized CDF
        let n = 8usize;
        let theta = 0.1;
        let mut r = rng::root(42);
        // a realistic omega configuration
        let omega2: Vec<f64> = (0..n).map(|_| (0.3 + r.gen::<f64>()) * 1.4).collect();
        let eta = eta_from_omega2(&omega2, theta);

        let log_dens = |nu: f64| {
            (n as f64 * nu / 2.0) * (nu / 2.0).ln() - n as f64 * ln_gamma(nu / 2.0) - eta * nu
        };
        // normalize on a grid (log-spaced near zero, linear beyond)
        let grid_n = 200_000;
        let hi = 400.0;
        let h = hi / grid_n as f64;
        let mut cum = vec![0.0; grid_n + 1];
        let mut prev = 0.0;
        let mut max_ld = f64::NEG_INFINITY;
        for i in 1..=grid_n {
            max_ld = max_ld.max(log_dens(i as f64 * h));
        }
        for i in 1..=grid_n {
            let f = (log_dens(i as f64 * h) - max_ld).exp();
            cum[i] = cum[i - 1] + 0.5 * (prev + f) * h;
            prev = f;
        }
        let z = cum[grid_n];
        let cdf = |x: f64| {
            if x <= 0.0 {
                return 0.0;
            }
            let pos = x / h;
            let i = pos.floor() as usize;
            if i >= grid_n {
                return 1.0;
            }
            let frac = pos - i as f64;
            (cum[i] * (1.0 - frac) + cum[i + 1] * frac) / z
        };

        let mut draws = Vec::with_capacity(100_000);
        let mut attempts_total = 0u64;
        for _ in 0..100_000 {
            let (nu, att) = draw_nu_given_eta(&mut r, eta, n).unwrap();
            draws.push(nu);
            attempts_total += att;
        }
        let (_, p) = stats::ks_test(&mut draws, cdf);
        assert!(p > 0.01, "KS p = {p}");
        // the envelope is tight: low rejection rate
        assert!(attempts_total < 300_000, "attempts {attempts_total}");
    }

    #[test]
    fn pooled_eta_is_sum_minus_repeated_theta() {
        let theta = 0.25;
        let a = [1.2, 0.8, 1.1];
        let b = [0.6, 2.0];
        let ea = eta_from_omega2(&a, theta);
        let eb = eta_from_omega2(&b, theta);
        let all: Vec<f64> = a.iter().chain(b.iter()).cloned().collect();
        let pooled = eta_from_omega2(&all, theta);
        assert!((pooled - (ea + eb - theta)).abs() < 1e-12);
    }
}
