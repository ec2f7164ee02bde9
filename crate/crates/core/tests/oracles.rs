//! Monte Carlo checks against laws that are known in closed form.

use psboot::fda::{self, equispaced_grid, fourier_coeffs, simulate_gp, GpConfig};
use psboot::maxstat::{bootstrap_draws, column_stats, gaussian_max_draws, PartialStdConfig};
use psboot::model::{fit_decay_exponent, generate_sample, CorrelationSpec, CovarianceModel, NoiseKind};
use psboot::multinomial::{sample_counts, zipf_model};
use psboot::ratelab::{estimate_dk_gaussian, fit_rate, ks_two_sample};
use rand_distr::{Distribution, StandardNormal};

#[test]
fn multiplier_draws_follow_the_conditional_gaussian_law() {
    // given X, M* is the max of N(0, Sigma_hat) scaled by sigma_hat^-tau
    let model = CovarianceModel::new(
        CorrelationSpec::Autoregressive { rho0: 0.6 },
        (1..=20).map(|j| (j as f64).powf(-0.7)).collect(),
    )
    .unwrap();
    let x = generate_sample(&vec![0.3; 20], &model, 60, NoiseKind::SymmetricExponential, 4).unwrap();
    let tau = 0.6;
    let draws = bootstrap_draws(&x, tau, 10_000, 17).unwrap();

    let stats = column_stats(&x);
    let s = &stats.sigma_hat;
    let corr: Vec<Vec<f64>> = (0..20)
        .map(|i| (0..20).map(|j| if i == j { 1.0 } else { stats.cov_hat[(i, j)] / (s[i] * s[j]) }).collect())
        .collect();
    let fitted = CovarianceModel::new(CorrelationSpec::Explicit { matrix: corr }, s.clone()).unwrap();
    let direct = gaussian_max_draws(&fitted, &PartialStdConfig::true_sigma(tau, s.clone()), 100_000, 23).unwrap();
    let d = ks_two_sample(&draws.highs, &direct).unwrap();
    assert!(d < 0.02, "KS {d}");
}

#[test]
fn cell_proportions_concentrate_at_binomial_rate() {
    let model = zipf_model(50, 1.0).unwrap();
    let n = 1_000_000;
    let counts = sample_counts(&model, n, 8).unwrap();
    let within = model
        .pi()
        .iter()
        .zip(&counts.counts)
        .filter(|(&q, &c)| (c as f64 / n as f64 - q).abs() <= 3.0 * (q * (1.0 - q) / n as f64).sqrt())
        .count();
    assert!(within as f64 >= 0.99 * 50.0, "{within} of 50 within 3 s.e.");
}

#[test]
fn cell_counts_pass_chi_square_goodness_of_fit() {
    // chi-square(4) upper 1% point
    let critical = 13.2767;
    let model = zipf_model(5, 1.5).unwrap();
    let n = 2000;
    let rejections = (0..40)
        .filter(|&seed| {
            let c = sample_counts(&model, n, seed).unwrap();
            let stat: f64 = model
                .pi()
                .iter()
                .zip(&c.counts)
                .map(|(&q, &k)| (k as f64 - n as f64 * q).powi(2) / (n as f64 * q))
                .sum();
            stat > critical
        })
        .count();
    assert!(rejections <= 3, "{rejections} of 40 seeds rejected at level 0.01");
}

#[test]
fn same_law_ks_stays_within_noise_band() {
    let (m, reps) = (400, 200);
    let band = 3.0 * (2.0 / m as f64).sqrt();
    let ok = (0..reps)
        .filter(|&r| {
            let mut rng = psboot::rng::stream(r, 77, 0);
            let a: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            ks_two_sample(&a, &b).unwrap() < band
        })
        .count();
    assert!(ok as f64 >= 0.99 * reps as f64, "{ok} of {reps}");
}

#[test]
fn gp_pointwise_variance_is_one_sixteenth() {
    let cfg = GpConfig::default();
    let paths = simulate_gp(&cfg, 20_000, 12).unwrap();
    for k in [0, 25, 50, 100] {
        let col = paths.column(k);
        let m = col.mean();
        let v = col.iter().map(|y| (y - m).powi(2)).sum::<f64>() / col.len() as f64;
        assert!((v * 16.0 - 1.0).abs() < 0.05, "t={} var={v}", cfg.grid[k]);
    }
}

#[test]
fn fine_grid_coefficients_track_the_reference_decay_profile() {
    // on a fine grid the coefficient scales follow 0.15 j^-0.69; on the
    // default 101-point grid aliasing flattens the tail
    let cfg = GpConfig { grid: equispaced_grid(1001), ..GpConfig::default() };
    let paths = simulate_gp(&cfg, 3000, 5).unwrap();
    let x = fourier_coeffs(&paths, &cfg.grid, fda::DEFAULT_BASIS_SIZE).unwrap().coefficients;
    let mut s = column_stats(&x).sigma_hat;
    s.sort_by(|a, b| b.total_cmp(a));
    let profile = |j: usize| 0.15 * (j as f64).powf(-0.69);
    assert!((s[0] / profile(1) - 1.0).abs() < 0.1, "sigma_(1) = {}", s[0]);
    assert!((s[99] / profile(100) - 1.0).abs() < 0.25, "sigma_(100) = {}", s[99]);
    let (alpha, degenerate) = fit_decay_exponent(&s);
    assert!(!degenerate && (0.5..0.85).contains(&alpha), "alpha = {alpha}");
}

#[test]
fn larger_reference_populations_lower_the_noise_floor() {
    let model = CovarianceModel::new(CorrelationSpec::Identity, vec![1.0, 0.7, 0.5, 0.3]).unwrap();
    let mean_d = |draws: usize| {
        (0..8).map(|s| estimate_dk_gaussian(&model, 0.5, 10, NoiseKind::Gaussian, draws, s).unwrap()).sum::<f64>() / 8.0
    };
    let (small, large) = (mean_d(1000), mean_d(16_000));
    assert!(large < small, "{large} !< {small}");
}

#[test]
fn heavy_decay_gaussian_approximation_improves_with_n() {
    let sigma: Vec<f64> = (1..=20).map(|j| (j as f64).powf(-2.0)).collect();
    let model = CovarianceModel::new(CorrelationSpec::Autoregressive { rho0: 0.3 }, sigma).unwrap();
    let ns = [1, 2, 4, 8];
    let d: Vec<f64> = ns
        .iter()
        .map(|&n| estimate_dk_gaussian(&model, 0.5, n, NoiseKind::SymmetricExponential, 40_000, 3).unwrap())
        .collect();
    assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(d[0] > d[1] && d[1] > d[3], "{d:?}");
    assert!(fit_rate(&ns, &d, 1.0 / 80_000.0).unwrap().slope < -0.3, "{d:?}");
}
