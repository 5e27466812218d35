//! Engine-level integration: factor columns, pooled nu, and gap imputation.

use monocov::data_layout::{Cell, DataMatrix};
use monocov::engine::{self, EngineConfig};
use monocov::evaluation::{self, GeneratorMethod};
use monocov::nalgebra::DMatrix;
use monocov::rng;
use monocov::stats;
use rand::Rng;

fn correlated_panel(seed: u64, n: usize, m: usize) -> DataMatrix {
    let mut r = rng::tagged(seed, 55);
    let truth = evaluation::randmvn_with(&mut r, GeneratorMethod::Normwish, m).unwrap();
    evaluation::sample_mvn_rows(&mut r, &truth, n).unwrap()
}

#[test]
fn factors_k0_is_plain_bayes_path() {
    let d = correlated_panel(1, 25, 3);
    let config = EngineConfig { samples: 30, burnin: Some(10), seed: 4, ..Default::default() };
    let f = DMatrix::<f64>::zeros(25, 0);
    let with = engine::with_factors(&d, &f, &config).unwrap();
    let (dd, layout) = engine::prepare(&d);
    let plain = engine::bayes_path(&dd, &layout, &config).unwrap();
    for t in 0..30 {
        assert_eq!(with.draws[t].mu, plain.draws[t].mu);
        assert_eq!(with.draws[t].sigma, plain.draws[t].sigma);
    }
}

#[test]
fn factors_extract_asset_block_dimensions() {
    let d = correlated_panel(2, 30, 4);
    let mut r = rng::tagged(3, 56);
    let f = DMatrix::from_fn(30, 2, |_, _| r.gen::<f64>());
    let config = EngineConfig { samples: 20, burnin: Some(10), seed: 5, ..Default::default() };
    let draws = engine::with_factors(&d, &f, &config).unwrap();
    assert_eq!(draws.m(), 4);
    assert_eq!(draws.n_factors, 2);
    for est in &draws.draws {
        assert_eq!(est.mu.len(), 4);
        assert_eq!(est.sigma.shape(), (4, 4));
    }
    // factor predictor slots appear in the inclusion matrix width
    let probs = draws.inclusion_probabilities();
    assert_eq!(probs.shape(), (4, 6));
}

#[test]
fn one_factor_data_gives_factor_top_inclusion() {
    // returns = loading * f + noise: the factor should dominate inclusion
    let n = 100usize;
    let m = 4usize;
    let mut r = rng::tagged(7, 57);
    let f_series: Vec<f64> = (0..n).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect();
    let loadings = [1.2, -0.8, 0.9, 1.5];
    let mut vals = Vec::with_capacity(n * m);
    for i in 0..n {
        for l in loadings {
            vals.push(l * f_series[i] + 1.0 * (r.gen::<f64>() - 0.5));
        }
    }
    let d = DataMatrix::from_complete(n, m, &vals);
    let f = DMatrix::from_fn(n, 1, |i, _| f_series[i]);
    let config = EngineConfig {
        samples: 200,
        burnin: Some(80),
        model_averaging: true,
        delta: 0.0, // force the shrinkage branch so inclusion is informative
        seed: 6,
        ..Default::default()
    };
    let draws = engine::with_factors(&d, &f, &config).unwrap();
    let probs = draws.inclusion_probabilities();
    // for every asset regression that has the factor available, the factor's
    // inclusion beats every return predictor's
    for j in 0..m {
        let factor_p = probs[(j, 0)];
        if factor_p.is_nan() {
            continue;
        }
        for c in 1..probs.ncols() {
            let other = probs[(j, c)];
            if !other.is_nan() {
                assert!(
                    factor_p > other,
                    "asset {j}: factor {factor_p} vs predictor {c}: {other}"
                );
            }
        }
        assert!(factor_p > 0.9, "asset {j}: factor inclusion {factor_p}");
    }
}

#[test]
fn common_nu_is_shared_across_columns() {
    let d = correlated_panel(11, 30, 3);
    let config = EngineConfig {
        student_t: true,
        common_nu: true,
        samples: 25,
        burnin: Some(10),
        thin: Some(2),
        seed: 9,
        ..Default::default()
    };
    let (dd, layout) = engine::prepare(&d);
    let draws = engine::bayes_path(&dd, &layout, &config).unwrap();
    assert_eq!(draws.nu.len(), 25);
    for nus in &draws.nu {
        assert!(nus.iter().all(|&v| v == nus[0]), "pooled nu differs: {nus:?}");
        assert!(nus[0] > 0.0);
    }
    // per-column nu: generally distinct
    let config2 = EngineConfig { common_nu: false, ..config };
    let draws2 = engine::bayes_path(&dd, &layout, &config2).unwrap();
    let distinct = draws2.nu.iter().any(|nus| nus[0] != nus[1] || nus[1] != nus[2]);
    assert!(distinct);
}

#[test]
fn mda_imputation_matches_conditional_mean_oracle() {
    // one gap at (row 5, middle column): per draw the imputation is
    // N(b0 + b1 * y_{5,1}, sigma2) where (b0, b1) is column 2's regression;
    // for m-chains the coefficients are recoverable from each (mu, Sigma)
    // draw exactly: b1 = S12/S11, b0 = mu2 - b1 mu1.
    let n = 50usize;
    let mut r = rng::tagged(13, 58);
    // strongly correlated three columns
    let mut vals = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let base: f64 = r.gen::<f64>() * 2.0;
        vals.push(base + 0.1 * r.gen::<f64>());
        vals.push(2.0 * base + 0.2 * r.gen::<f64>());
        vals.push(-base + 0.2 * r.gen::<f64>());
    }
    let mut d = DataMatrix::from_complete(n, 3, &vals);
    // short tail in the last column pins the ordering; the deleted middle
    // cell becomes a genuine gap
    for i in n - 5..n {
        d.set(i, 2, Cell::Missing);
    }
    d.set(5, 1, Cell::Missing);

    let config = EngineConfig {
        samples: 2000,
        burnin: Some(300),
        mda: true,
        seed: 17,
        ..Default::default()
    };
    let (dd, layout) = engine::prepare(&d);
    let draws = engine::bayes_path(&dd, &layout, &config).unwrap();
    assert_eq!(draws.gap_cells, vec![(5, 1)]);
    let y51 = vals[5 * 3];
    let cond_means: Vec<f64> = draws
        .draws
        .iter()
        .map(|est| {
            let b1 = est.sigma[(0, 1)] / est.sigma[(0, 0)];
            let b0 = est.mu[1] - b1 * est.mu[0];
            b0 + b1 * y51
        })
        .collect();
    let imputed: Vec<f64> = draws.gap_values.iter().map(|g| g[0]).collect();
    let diff = stats::mean(&imputed) - stats::mean(&cond_means);
    // the imputation noise has the draw's sigma2 scale; bound by its s.e.
    let se = (stats::var_sample(&imputed) / imputed.len() as f64
        + stats::var_sample(&cond_means) / cond_means.len() as f64)
        .sqrt();
    assert!(diff.abs() < 3.0 * se, "diff {diff}, se {se}");
}

#[test]
fn flat_path_matches_unfactorized_gibbs_oracle() {
    // complete data, joint noninformative prior |Sigma|^{-(m+1)/2}: the
    // factorized chain and a direct (mu, Sigma) Gibbs sampler on the
    // unfactorized likelihood sample the same posterior
    let n = 80usize;
    let m = 3usize;
    let mut r = rng::tagged(29, 59);
    let truth = evaluation::randmvn_with(&mut r, GeneratorMethod::Normwish, m).unwrap();
    let data = evaluation::sample_mvn_rows(&mut r, &truth, n).unwrap();

    let config = EngineConfig {
        prior: monocov::samplers::PriorKind::Flat,
        delta: 0.0,
        joint_flat_prior: true,
        samples: 4000,
        burnin: Some(200),
        seed: 31,
        ..Default::default()
    };
    // delta 0 would force shrinkage; flat must be explicit. With prior=Flat
    // the parsimony rule is moot: every column uses the flat regression.
    let (dd, layout) = engine::prepare(&data);
    let draws = engine::bayes_path(&dd, &layout, &config).unwrap();

    // direct Gibbs: mu | Sigma ~ N(ybar, Sigma/n); Sigma | mu ~ IW(n, S_mu)
    let ybar = monocov::nalgebra::DVector::from_fn(m, |j, _| {
        (0..n).map(|i| data.get(i, j).value().unwrap()).sum::<f64>() / n as f64
    });
    let rows: Vec<monocov::nalgebra::DVector<f64>> = (0..n)
        .map(|i| {
            monocov::nalgebra::DVector::from_fn(m, |j, _| data.get(i, j).value().unwrap())
        })
        .collect();
    let mut rg = rng::tagged(37, 60);
    let mut mu = ybar.clone();
    let mut sigma_draws: Vec<DMatrix<f64>> = Vec::new();
    let mut mu_draws: Vec<monocov::nalgebra::DVector<f64>> = Vec::new();
    let total = 4200;
    let mut sigma = DMatrix::<f64>::identity(m, m);
    for it in 0..total {
        // S_mu
        let mut s = DMatrix::<f64>::zeros(m, m);
        for row in &rows {
            let d = row - &mu;
            s += &d * d.transpose();
        }
        // Sigma ~ IW(n, S_mu): draw W ~ Wishart(n, S_mu^{-1}), invert
        let s_inv = s.clone().try_inverse().unwrap();
        let chol = monocov::nalgebra::Cholesky::new(s_inv).unwrap();
        // Bartlett: W = L A A' L'
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            let chi: f64 = {
                use rand_distr::{ChiSquared, Distribution};
                ChiSquared::new((n - i) as f64).unwrap().sample(&mut rg)
            };
            a[(i, i)] = chi.sqrt();
            for j in 0..i {
                a[(i, j)] = {
                    use rand_distr::{Distribution, StandardNormal};
                    StandardNormal.sample(&mut rg)
                };
            }
        }
        let la = chol.l() * a;
        let w = &la * la.transpose();
        sigma = w.try_inverse().unwrap();
        // mu ~ N(ybar, Sigma/n)
        let chol_s = monocov::nalgebra::Cholesky::new(sigma.clone() / n as f64).unwrap();
        mu = monocov::dist::mvn_sample(&mut rg, &ybar, &chol_s.l());
        if it >= 200 {
            sigma_draws.push(sigma.clone());
            mu_draws.push(mu.clone());
        }
    }

    // compare posterior means entrywise within 3 combined MC s.e.
    for a in 0..m {
        let mu_f: Vec<f64> = draws.draws.iter().map(|d| d.mu[a]).collect();
        let mu_g: Vec<f64> = mu_draws.iter().map(|d| d[a]).collect();
        let se = (stats::se_mean_batch(&mu_f).powi(2) + stats::se_mean_batch(&mu_g).powi(2))
            .sqrt();
        let z = (stats::mean(&mu_f) - stats::mean(&mu_g)).abs() / se;
        assert!(z < 3.0, "mu[{a}]: z = {z}");
        for b in 0..m {
            let s_f: Vec<f64> = draws.draws.iter().map(|d| d.sigma[(a, b)]).collect();
            let s_g: Vec<f64> = sigma_draws.iter().map(|d| d[(a, b)]).collect();
            let se = (stats::se_mean_batch(&s_f).powi(2)
                + stats::se_mean_batch(&s_g).powi(2))
            .sqrt();
            let z = (stats::mean(&s_f) - stats::mean(&s_g)).abs() / se;
            assert!(z < 3.0, "Sigma[{a},{b}]: z = {z}");
        }
    }
}

#[test]
fn zero_gaps_mda_equals_plain_run() {
    let d = correlated_panel(19, 25, 3);
    let (dd, layout) = engine::prepare(&d);
    let base = EngineConfig { samples: 40, burnin: Some(10), seed: 23, ..Default::default() };
    let plain = engine::bayes_path(&dd, &layout, &base).unwrap();
    let mda = engine::bayes_path(
        &dd,
        &layout,
        &EngineConfig { mda: true, ..base },
    )
    .unwrap();
    // no gaps: the mda flag only forces the serial schedule; columns use the
    // same per-column streams, so the draws agree exactly
    for t in 0..40 {
        assert_eq!(plain.draws[t].mu, mda.draws[t].mu);
        assert_eq!(plain.draws[t].sigma, mda.draws[t].sigma);
    }
    assert!(mda.gap_cells.is_empty());
}
