//! Small statistical utilities: moments, goodness-of-fit p-values, and
//! chain standard errors used by the validation harnesses and experiments.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divisor n).
pub fn var_pop(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Sample variance (divisor n-1).
pub fn var_sample(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    var_pop(xs) * n / (n - 1.0)
}

/// Standard error of the mean for (near) independent draws.
pub fn se_mean(xs: &[f64]) -> f64 {
    (var_sample(xs) / xs.len() as f64).sqrt()
}

/// Batch-means standard error of the mean for an autocorrelated chain.
/// Uses ~sqrt(n) batches.
pub fn se_mean_batch(xs: &[f64]) -> f64 {
    let n = xs.len();
    let b = (n as f64).sqrt().floor() as usize;
    let nb = n / b;
    if nb < 2 {
        return se_mean(xs);
    }
    let batch_means: Vec<f64> = (0..nb).map(|k| mean(&xs[k * b..(k + 1) * b])).collect();
    (var_sample(&batch_means) / nb as f64).sqrt()
}

/// Pearson correlation.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Asymptotic Kolmogorov distribution tail Q(lambda) = P(D_n * sqrt(n) > lambda).
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `sample` against a continuous CDF. Returns (D, p).
pub fn ks_test<F: Fn(f64) -> f64>(sample: &mut [f64], cdf: F) -> (f64, f64) {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    // Marsaglia-style small-sample adjustment of the asymptotic argument.
    let arg = d * (n.sqrt() + 0.12 + 0.11 / n.sqrt());
    (d, kolmogorov_tail(arg))
}

/// Two-sample KS test. Returns (D, p) with the effective-size adjustment.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> (f64, f64) {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len(), b.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    let arg = d * (ne.sqrt() + 0.12 + 0.11 / ne.sqrt());
    (d, kolmogorov_tail(arg))
}

/// Chi-square goodness-of-fit p-value for observed counts vs expected counts.
pub fn chi2_gof_pvalue(observed: &[f64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (o, e) in observed.iter().zip(expected) {
        if *e > 0.0 {
            stat += (o - e).powi(2) / e;
            dof += 1;
        }
    }
    if dof < 2 {
        return 1.0;
    }
    let chi = ChiSquared::new((dof - 1) as f64).expect("dof >= 1");
    1.0 - chi.cdf(stat)
}

/// Geweke-style z score comparing two estimates of the same expectation.
pub fn z_score(mean_a: f64, se_a: f64, mean_b: f64, se_b: f64) -> f64 {
    (mean_a - mean_b) / (se_a * se_a + se_b * se_b).sqrt()
}
