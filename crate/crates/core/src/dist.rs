//! Distribution helpers: draws and densities beyond what rand_distr ships,
//! most importantly an exact generalized-inverse-Gaussian sampler.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, InverseGaussian, StandardNormal};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::{Error, Result};

/// Gamma(shape, rate) draw.
pub fn draw_gamma_rate<R: Rng>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) {
        return Err(Error::Numeric(format!("gamma draw with shape {shape}, rate {rate}")));
    }
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numeric(format!("gamma params: {e}")))?;
    Ok(g.sample(rng))
}

/// Inverse-gamma(shape, scale) draw; density ∝ x^{-shape-1} exp(-scale/x).
pub fn draw_inv_gamma<R: Rng>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0) || !(scale > 0.0) {
        return Err(Error::Numeric(format!(
            "inverse-gamma draw with shape {shape}, scale {scale}"
        )));
    }
    let g = draw_gamma_rate(rng, shape, scale)?;
    Ok(1.0 / g)
}

/// CDF of inverse-gamma(shape, scale) at x.
pub fn inv_gamma_cdf(x: f64, shape: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    // P(X <= x) = Q(shape, scale/x) = 1 - P_reg(shape, scale/x)
    1.0 - gamma_lr(shape, scale / x)
}

/// Inverse of the regularized lower incomplete gamma in its second argument:
/// returns z with P(shape, z) = prob.
pub fn inv_reg_gamma_lower(shape: f64, prob: f64) -> Result<f64> {
    if !(0.0 < prob && prob < 1.0) || !(shape > 0.0) {
        return Err(Error::Numeric(format!(
            "incomplete gamma inverse at shape {shape}, prob {prob}"
        )));
    }
    let g = GammaDist::new(shape, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(g.inverse_cdf(prob))
}

/// Inverse-Gaussian(mean, shape) draw.
pub fn draw_inv_gauss<R: Rng>(rng: &mut R, mean: f64, shape: f64) -> Result<f64> {
    let d = InverseGaussian::new(mean, shape)
        .map_err(|e| Error::Numeric(format!("inverse-gaussian params: {e}")))?;
    Ok(d.sample(rng))
}

/// Unnormalized log density of GIG(p, chi, psi): (p-1) ln x - (chi/x + psi x)/2.
pub fn gig_log_density_unnorm(x: f64, p: f64, chi: f64, psi: f64) -> f64 {
    (p - 1.0) * x.ln() - 0.5 * (chi / x + psi * x)
}

/// Exact GIG(p, chi, psi) draw, density ∝ x^{p-1} exp(-(chi/x + psi x)/2).
///
/// Works in u = ln x coordinates where the density exp(p u - omega cosh u)
/// (omega = sqrt(chi psi), after rescaling by sqrt(chi/psi)) is strictly
/// log-concave; rejection sampling from a three-piece tangent envelope is
/// then exact for any real p. Degenerate boundaries fall back to the gamma
/// and inverse-gamma laws they converge to.
pub fn draw_gig<R: Rng>(rng: &mut R, p: f64, chi: f64, psi: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    if chi < 0.0 || psi < 0.0 {
        return Err(Error::Numeric(format!("gig draw with chi {chi}, psi {psi}")));
    }
    if chi <= TINY {
        if p > 0.0 && psi > TINY {
            return draw_gamma_rate(rng, p, psi / 2.0);
        }
        return Err(Error::Numeric(format!("gig domain: p {p}, chi {chi}, psi {psi}")));
    }
    if psi <= TINY {
        if p < 0.0 {
            return draw_inv_gamma(rng, -p, chi / 2.0);
        }
        return Err(Error::Numeric(format!("gig domain: p {p}, chi {chi}, psi {psi}")));
    }

    let ln_omega = 0.5 * (chi.ln() + psi.ln());
    let scale = (chi.ln() - psi.ln()) / 2.0; // ln sqrt(chi/psi)

    // log target on u-scale: g(u) = p u - omega cosh(u)
    let om_cosh = |u: f64| 0.5 * ((ln_omega + u).exp() + (ln_omega - u).exp());
    let om_sinh = |u: f64| 0.5 * ((ln_omega + u).exp() - (ln_omega - u).exp());
    let g = |u: f64| p * u - om_cosh(u);

    // mode: p = omega sinh(u*)  =>  u* = asinh(p / omega)
    let u_star = (p / ln_omega.exp()).asinh();
    let g_star = g(u_star);
    // Laplace width at the mode; tangent points a fixed multiple out.
    let width = 1.0 / om_cosh(u_star).sqrt();
    let u_l = u_star - 1.34 * width;
    let u_r = u_star + 1.34 * width;
    let s_l = p - om_sinh(u_l); // > 0
    let s_r = p - om_sinh(u_r); // < 0
    if !(s_l > 0.0) || !(s_r < 0.0) {
        return Err(Error::Numeric("gig envelope construction failed".into()));
    }
    // level-crossing points of the two tangents with the mode plateau
    let b_l = u_l + (g_star - g(u_l)) / s_l;
    let b_r = u_r + (g_star - g(u_r)) / s_r;
    let mass_l = 1.0 / s_l;
    let mass_m = b_r - b_l;
    let mass_r = -1.0 / s_r;
    let total = mass_l + mass_m + mass_r;

    for _ in 0..1_000_000u32 {
        let pick = rng.gen::<f64>() * total;
        let (u, env) = if pick < mass_l {
            let u = b_l + rng.gen::<f64>().ln() / s_l;
            (u, g_star + s_l * (u - b_l))
        } else if pick < mass_l + mass_m {
            (b_l + rng.gen::<f64>() * mass_m, g_star)
        } else {
            let u = b_r + rng.gen::<f64>().ln() / s_r;
            (u, g_star + s_r * (u - b_r))
        };
        if rng.gen::<f64>().ln() <= g(u) - env {
            return Ok((scale + u).exp());
        }
    }
    Err(Error::Numeric("gig rejection sampler failed to accept".into()))
}

/// Log density of the Student-t with location mu, scale^2 sigma2, dof nu.
pub fn student_t_logpdf(x: f64, mu: f64, sigma2: f64, nu: f64) -> f64 {
    let z2 = (x - mu).powi(2) / sigma2;
    ln_gamma((nu + 1.0) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * (nu * std::f64::consts::PI * sigma2).ln()
        - 0.5 * (nu + 1.0) * (z2 / nu).ln_1p()
}

/// Normal log density.
pub fn normal_logpdf(x: f64, mu: f64, sigma2: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln() - (x - mu).powi(2) / (2.0 * sigma2)
}

/// Student-t(0, sigma2, nu) draw via the normal scale mixture.
pub fn draw_student_t<R: Rng>(rng: &mut R, sigma2: f64, nu: f64) -> Result<f64> {
    let w2 = draw_inv_gamma(rng, nu / 2.0, nu / 2.0)?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(z * (sigma2 * w2).sqrt())
}

/// Wishart(df, I_m)/df draw via the Bartlett decomposition; PD for df >= m.
pub fn draw_wishart_identity<R: Rng>(rng: &mut R, m: usize, df: f64) -> Result<DMatrix<f64>> {
    if df < m as f64 {
        return Err(Error::Numeric(format!("wishart df {df} below dimension {m}")));
    }
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::Numeric(format!("chi-squared params: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let w = &a * a.transpose();
    Ok(w / df)
}

/// One MVN(mu, Sigma) row; `chol_l` is the lower Cholesky factor of Sigma.
pub fn mvn_sample<R: Rng>(rng: &mut R, mu: &DVector<f64>, chol_l: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(mu.len(), |_, _| rng.sample(StandardNormal));
    mu + chol_l * z
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn gig_moment_by_quadrature(p: f64, chi: f64, psi: f64, power: f64) -> f64 {
        // adaptive-enough Simpson on a wide bracket in log space
        let n = 400_000;
        let (lo, hi) = (-40.0f64, 40.0f64);
        let h = (hi - lo) / n as f64;
        let f = |u: f64| {
            let x = u.exp();
            // include the Jacobian x
            (gig_log_density_unnorm(x, p, chi, psi) + u).exp()
        };
        let mut z = 0.0;
        let mut m1 = 0.0;
        for i in 0..=n {
            let u = lo + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let fu = f(u);
            z += w * fu;
            m1 += w * fu * u.exp().powf(power);
        }
        m1 / z
    }

    #[test]
    fn gig_mean_matches_quadrature() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for &(p, chi, psi) in &[(0.5, 1.0, 2.0), (2.3, 0.7, 1.1), (-1.2, 3.0, 0.5)] {
            let n = 100_000;
            let draws: Vec<f64> =
                (0..n).map(|_| draw_gig(&mut rng, p, chi, psi).unwrap()).collect();
            let mc = stats::mean(&draws);
            let se = stats::se_mean(&draws);
            let truth = gig_moment_by_quadrature(p, chi, psi, 1.0);
            assert!(
                (mc - truth).abs() < 3.0 * se,
                "p={p} chi={chi} psi={psi}: mc {mc} vs quad {truth} (se {se})"
            );
        }
    }

    #[test]
    fn gig_positive_output_and_degenerate_cases() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(draw_gig(&mut rng, 0.5, 1e-3, 4.0).unwrap() > 0.0);
        }
        // chi = 0, p > 0 is Gamma(p, psi/2)
        let draws: Vec<f64> =
            (0..50_000).map(|_| draw_gig(&mut rng, 2.0, 0.0, 3.0).unwrap()).collect();
        let mc = stats::mean(&draws);
        assert!((mc - 2.0 / 1.5).abs() < 3.0 * stats::se_mean(&draws));
        // psi = 0, p < 0 is InvGamma(-p, chi/2)
        let draws: Vec<f64> =
            (0..50_000).map(|_| draw_gig(&mut rng, -3.0, 4.0, 0.0).unwrap()).collect();
        let mc = stats::mean(&draws);
        assert!((mc - 2.0 / 2.0).abs() < 3.0 * stats::se_mean(&draws));
        assert!(draw_gig(&mut rng, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn gig_ks_against_quadrature_cdf() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let (p, chi, psi) = (1.7, 0.9, 2.4);
        let n_grid = 20_000;
        let (lo, hi) = (-30.0f64, 30.0f64);
        let h = (hi - lo) / n_grid as f64;
        let mut cum = Vec::with_capacity(n_grid + 1);
        let mut acc = 0.0;
        let mut prev = 0.0;
        for i in 0..=n_grid {
            let u = lo + i as f64 * h;
            let fu = (gig_log_density_unnorm(u.exp(), p, chi, psi) + u).exp();
            if i > 0 {
                acc += 0.5 * (prev + fu) * h;
            }
            prev = fu;
            cum.push((u, acc));
        }
        let z = acc;
        let cdf = |x: f64| {
            let u = x.ln();
            match cum.binary_search_by(|(uu, _)| uu.partial_cmp(&u).unwrap()) {
                Ok(i) => cum[i].1 / z,
                Err(0) => 0.0,
                Err(i) if i > n_grid => 1.0,
                Err(i) => {
                    let (u0, c0) = cum[i - 1];
                    let (u1, c1) = cum[i];
                    (c0 + (c1 - c0) * (u - u0) / (u1 - u0)) / z
                }
            }
        };
        let mut draws: Vec<f64> =
            (0..20_000).map(|_| draw_gig(&mut rng, p, chi, psi).unwrap()).collect();
        let (_, pval) = stats::ks_test(&mut draws, cdf);
        assert!(pval > 0.01, "KS p = {pval}");
    }

    #[test]
    fn inv_gauss_moments() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (mu, lam) = (1.3, 2.0);
        let draws: Vec<f64> =
            (0..100_000).map(|_| draw_inv_gauss(&mut rng, mu, lam).unwrap()).collect();
        let mc = stats::mean(&draws);
        assert!((mc - mu).abs() < 3.0 * stats::se_mean(&draws), "mc {mc}");
    }

    #[test]
    fn inv_gamma_cdf_and_inverse_consistent() {
        let (shape, scale) = (1.5, 2.7);
        let z = inv_reg_gamma_lower(shape, 0.05).unwrap();
        // X ~ IG(shape, scale): P(X <= scale/z) = Q(shape, z) = 1 - 0.05
        let x = scale / z;
        assert!((inv_gamma_cdf(x, shape, scale) - 0.95).abs() < 1e-10);
    }

    #[test]
    fn wishart_is_pd_with_unit_mean() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let m = 6;
        let w = draw_wishart_identity(&mut rng, m, (m + 2) as f64).unwrap();
        assert!(min_symmetric_eigenvalue(&w) > 0.0);
    }

    #[test]
    fn student_t_density_integrates_against_draws() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let (s2, nu) = (2.0, 5.0);
        let draws: Vec<f64> =
            (0..200_000).map(|_| draw_student_t(&mut rng, s2, nu).unwrap()).collect();
        // variance of St(0, s2; nu) is s2 * nu/(nu-2)
        let v = stats::var_pop(&draws);
        assert!((v - s2 * nu / (nu - 2.0)).abs() < 0.1, "v {v}");
        // density normalizes
        let n = 200_000;
        let h = 160.0 / n as f64;
        let mut z = 0.0;
        for i in 0..=n {
            let x = -80.0 + i as f64 * h;
            z += h * student_t_logpdf(x, 0.0, s2, nu).exp();
        }
        assert!((z - 1.0).abs() < 1e-6);
    }
}
