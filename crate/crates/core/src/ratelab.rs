//! Monte Carlo study of Kolmogorov-distance convergence rates.
//!
//! For each sample size the study builds a reference population of the
//! partially standardized max statistic `M` (true scales), compares it with
//! the Gaussian counterpart and with the bootstrap law `M* | X` over many
//! datasets `X`, then fits a log-log line through the medians.
//!
//! `M` only depends on the data through `sqrt(n) (Xbar - mu) = A W` with
//! `W = n^{-1/2} sum_i Z_i`, so the mean cancels and the reference draws
//! sample `W` directly. Gaussian and symmetric-exponential noise have exact
//! sum laws (the latter as a difference of two Gamma(n) variables); uniform
//! noise is summed term by term.

use crate::error::{invalid, Result};
use crate::linalg::ols_line;
use crate::maxstat::{self, extremes_of_row, partial_weights, PartialStdConfig};
use crate::model::{generate_sample, CorrelationSpec, CovarianceModel, CovarianceModelSpec, NoiseKind, SigmaProfile};
use crate::report::fmt_f64;
use crate::rng::{self, derive_seed, tag};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

const REF_BLOCK: usize = 256;

/// Exact two-sample Kolmogorov-Smirnov statistic `sup_t |F_a(t) - F_b(t)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return invalid("KS distance needs two nonempty samples");
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return invalid("KS distance is undefined for NaN samples");
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(ks_sorted(&a, &b))
}

fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// How the dimension depends on the sample size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimensionRule {
    Fixed { p: usize },
    /// `p = ceil(c n^exponent)`.
    Power { c: f64, exponent: f64 },
}

impl DimensionRule {
    pub fn p(&self, n: usize) -> Result<usize> {
        let p = match *self {
            DimensionRule::Fixed { p } => p,
            DimensionRule::Power { c, exponent } => (c * (n as f64).powf(exponent)).ceil() as usize,
        };
        if p == 0 {
            return invalid("dimension rule gives p = 0");
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateStudyConfig {
    pub corr: CorrelationSpec,
    pub sigma: SigmaProfile,
    pub p_rule: DimensionRule,
    pub noise: NoiseKind,
    pub ns: Vec<usize>,
    pub tau: f64,
    pub ref_draws: usize,
    pub outer_reps: usize,
    pub b: usize,
    pub seed: u64,
}

impl Default for RateStudyConfig {
    fn default() -> Self {
        Self {
            corr: CorrelationSpec::Autoregressive { rho0: 0.5 },
            sigma: SigmaProfile::Power { c: 1.0, alpha: 0.7 },
            p_rule: DimensionRule::Fixed { p: 500 },
            noise: NoiseKind::SymmetricExponential,
            ns: vec![100, 200, 400, 800],
            tau: 0.8,
            ref_draws: 20_000,
            outer_reps: 50,
            b: 2000,
            seed: 0,
        }
    }
}

impl RateStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns[0] < 2 || self.ns.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("ns must be strictly increasing with every n >= 2");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return invalid(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.b == 0 || self.outer_reps == 0 {
            return invalid("B and outer_reps must be positive");
        }
        if self.ref_draws < 10 * self.b {
            return invalid(format!("ref_draws ({}) must be at least 10 B ({})", self.ref_draws, 10 * self.b));
        }
        Ok(())
    }

    pub fn model(&self, n: usize) -> Result<CovarianceModel> {
        CovarianceModel::from_spec(CovarianceModelSpec {
            p: self.p_rule.p(n)?,
            corr: self.corr.clone(),
            sigma: self.sigma.clone(),
        })
    }

    /// Smallest distance the log-log fit will use.
    pub fn floor(&self) -> f64 {
        0.5 / self.ref_draws as f64
    }
}

/// `n^{-1/2} sum_{i<=n} Z_i` for one coordinate.
fn noise_sum<R: Rng + ?Sized>(noise: NoiseKind, n: usize, gamma: Option<&Gamma<f64>>, rng: &mut R) -> f64 {
    match noise {
        NoiseKind::Gaussian => StandardNormal.sample(rng),
        NoiseKind::SymmetricExponential => {
            let g = gamma.expect("gamma law prepared");
            (g.sample(rng) - g.sample(rng)) * std::f64::consts::FRAC_1_SQRT_2 / (n as f64).sqrt()
        }
        NoiseKind::ScaledUniform => (0..n).map(|_| noise.sample(rng)).sum::<f64>() / (n as f64).sqrt(),
    }
}

/// `ref_draws` independent values of `M = max_j S_j / sigma_j^tau` at sample
/// size `n`, replicate `r` using stream `(seed, REFERENCE, r)`.
pub fn reference_population(
    model: &CovarianceModel,
    tau: f64,
    n: usize,
    noise: NoiseKind,
    ref_draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n == 0 || ref_draws == 0 {
        return invalid("reference population needs n >= 1 and at least one draw");
    }
    let p = model.p();
    let w = partial_weights(model.sigma(), tau);
    let root = model.sqrt()?;
    let gamma = Gamma::new(n as f64, 1.0).map_err(|e| crate::Error::Validation(e.to_string()))?;
    let blocks: Vec<Vec<f64>> = (0..ref_draws.div_ceil(REF_BLOCK))
        .into_par_iter()
        .map(|blk| {
            let start = blk * REF_BLOCK;
            let m = REF_BLOCK.min(ref_draws - start);
            let mut sums = DMatrix::zeros(m, p);
            for r in 0..m {
                let mut rng = rng::stream(seed, tag::REFERENCE, (start + r) as u64);
                for j in 0..p {
                    sums[(r, j)] = noise_sum(noise, n, Some(&gamma), &mut rng);
                }
            }
            let s = sums * root;
            (0..m).map(|r| extremes_of_row(s.row(r).iter().copied(), &w).high).collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

/// KS distance between a reference population of `M` and `ref_draws` draws
/// of the Gaussian counterpart with true scales.
pub fn estimate_dk_gaussian(
    model: &CovarianceModel,
    tau: f64,
    n: usize,
    noise: NoiseKind,
    ref_draws: usize,
    seed: u64,
) -> Result<f64> {
    let reference = reference_population(model, tau, n, noise, ref_draws, derive_seed(seed, tag::REFERENCE, 0))?;
    let cfg = PartialStdConfig::true_sigma(tau, model.sigma().to_vec());
    let gauss = maxstat::gaussian_max_draws(model, &cfg, ref_draws, derive_seed(seed, tag::GAUSSIAN, 0))?;
    ks_two_sample(&reference, &gauss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDistance {
    pub median: f64,
    pub q90: f64,
    /// One distance per dataset, in replicate order.
    pub all: Vec<f64>,
}

impl BootstrapDistance {
    pub fn from_values(all: Vec<f64>) -> Result<Self> {
        if all.is_empty() {
            return invalid("no distances to summarize");
        }
        let mut sorted = all.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        let q90 = maxstat::quantile_sorted(&sorted, 0.9)?;
        Ok(Self { median, q90: q90.max(median), all })
    }
}

/// KS distances between a sorted reference population and `M* | X` over
/// `outer_reps` datasets; dataset `k` is seeded by `(seed, OUTER_REP, k)`.
pub fn bootstrap_distances(
    model: &CovarianceModel,
    tau: f64,
    n: usize,
    noise: NoiseKind,
    reference: &[f64],
    outer_reps: usize,
    b: usize,
    seed: u64,
) -> Result<BootstrapDistance> {
    let mut sorted_ref = reference.to_vec();
    sorted_ref.sort_by(f64::total_cmp);
    let mu = vec![0.0; model.p()];
    let all = (0..outer_reps)
        .map(|k| {
            let rep_seed = derive_seed(seed, tag::OUTER_REP, k as u64);
            let x = generate_sample(&mu, model, n, noise, rep_seed)?;
            let mut draws = maxstat::bootstrap_draws(&x, tau, b, derive_seed(rep_seed, tag::MULTIPLIER, 0))?.highs;
            draws.sort_by(f64::total_cmp);
            Ok(ks_sorted(&sorted_ref, &draws))
        })
        .collect::<Result<Vec<_>>>()?;
    BootstrapDistance::from_values(all)
}

/// Reference population plus bootstrap distances over datasets.
pub fn estimate_dk_bootstrap(
    model: &CovarianceModel,
    tau: f64,
    n: usize,
    noise: NoiseKind,
    ref_draws: usize,
    outer_reps: usize,
    b: usize,
    seed: u64,
) -> Result<BootstrapDistance> {
    let reference = reference_population(model, tau, n, noise, ref_draws, derive_seed(seed, tag::REFERENCE, 0))?;
    bootstrap_distances(model, tau, n, noise, &reference, outer_reps, b, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Some distance was raised to the floor before taking logs.
    pub floored: bool,
}

/// Least-squares fit of `log dk` on `log n`, with distances below `floor`
/// raised to it.
pub fn fit_rate(ns: &[usize], dks: &[f64], floor: f64) -> Result<RateFit> {
    if ns.len() != dks.len() || ns.len() < 2 {
        return invalid("rate fit needs two or more (n, d_K) pairs of equal length");
    }
    if !(floor > 0.0) {
        return invalid("rate-fit floor must be positive");
    }
    let mut floored = false;
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(dks)
        .map(|(&n, &d)| {
            if !(d >= floor) {
                floored = true;
            }
            ((n as f64).ln(), d.max(floor).ln())
        })
        .collect();
    let (slope, intercept) = ols_line(&pts);
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit { slope, intercept, r2, floored })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub p: usize,
    pub dk_gauss: f64,
    pub dk_boot: BootstrapDistance,
    /// Typical KS value between two samples of the same law at these sizes.
    pub ks_noise_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateStudyResult {
    pub config: RateStudyConfig,
    pub per_n: Vec<RatePoint>,
    /// Fit through the bootstrap medians.
    pub fit: RateFit,
    /// Fit through the Gaussian-counterpart distances.
    pub gauss_fit: RateFit,
}

impl RateStudyResult {
    /// CSV `n, p, dk_gauss, dk_boot_median, dk_boot_q90, ks_noise_floor`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "p", "dk_gauss", "dk_boot_median", "dk_boot_q90", "ks_noise_floor"])?;
        for pt in &self.per_n {
            out.write_record([
                pt.n.to_string(),
                pt.p.to_string(),
                fmt_f64(pt.dk_gauss),
                fmt_f64(pt.dk_boot.median),
                fmt_f64(pt.dk_boot.q90),
                fmt_f64(pt.ks_noise_floor),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs every sample size of the study. Each point is seeded by
/// `(seed, STUDY_POINT, n)`, so adding sizes leaves the others unchanged.
pub fn run_rate_study(cfg: &RateStudyConfig) -> Result<RateStudyResult> {
    cfg.validate()?;
    let mut per_n = Vec::with_capacity(cfg.ns.len());
    for &n in &cfg.ns {
        let model = cfg.model(n)?;
        let seed = derive_seed(cfg.seed, tag::STUDY_POINT, n as u64);
        let reference =
            reference_population(&model, cfg.tau, n, cfg.noise, cfg.ref_draws, derive_seed(seed, tag::REFERENCE, 0))?;
        let true_cfg = PartialStdConfig::true_sigma(cfg.tau, model.sigma().to_vec());
        let gauss = maxstat::gaussian_max_draws(&model, &true_cfg, cfg.ref_draws, derive_seed(seed, tag::GAUSSIAN, 0))?;
        let dk_gauss = ks_two_sample(&reference, &gauss)?;
        let dk_boot = bootstrap_distances(&model, cfg.tau, n, cfg.noise, &reference, cfg.outer_reps, cfg.b, seed)?;
        let (r, b) = (cfg.ref_draws as f64, cfg.b as f64);
        per_n.push(RatePoint {
            n,
            p: model.p(),
            dk_gauss,
            dk_boot,
            // mean of the limiting Kolmogorov law times the effective scale
            ks_noise_floor: (std::f64::consts::PI / 2.0).sqrt() * std::f64::consts::LN_2 * ((r + b) / (r * b)).sqrt(),
        });
    }
    let medians: Vec<f64> = per_n.iter().map(|p| p.dk_boot.median).collect();
    let gauss: Vec<f64> = per_n.iter().map(|p| p.dk_gauss).collect();
    Ok(RateStudyResult {
        config: cfg.clone(),
        fit: fit_rate(&cfg.ns, &medians, cfg.floor())?,
        gauss_fit: fit_rate(&cfg.ns, &gauss, cfg.floor())?,
        per_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CorrelationSpec;

    #[test]
    fn ks_examples() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.5);
        assert_eq!(ks_two_sample(&[0.0; 5], &[0.0; 7]).unwrap(), 0.0);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn ks_handles_ties_across_samples() {
        // F_a jumps to 2/3 at 1, F_b to 1/2 at 1; both reach 1 at 2
        let d = ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert!((d - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn fit_rate_examples() {
        let ns = [100, 200, 400, 800];
        let dks: Vec<f64> = ns.iter().map(|&n| 3.0 * (n as f64).powf(-0.5)).collect();
        let f = fit_rate(&ns, &dks, 1e-6).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12 && !f.floored);
        assert!(fit_rate(&ns, &[0.1; 4], 1e-6).unwrap().slope.abs() < 1e-12);
        let two = fit_rate(&[100, 400], &[0.08, 0.04], 1e-6).unwrap();
        assert!((two.slope + 0.5).abs() < 1e-12);
        let fl = fit_rate(&[100, 400], &[0.08, 0.0], 1e-4).unwrap();
        assert!(fl.floored && fl.slope.is_finite());
        assert!(fit_rate(&[100], &[0.1], 1e-4).is_err());
    }

    #[test]
    fn symmetric_exponential_sum_has_unit_variance() {
        let gamma = Gamma::new(7.0, 1.0).unwrap();
        let mut rng = rng::stream(3, 0, 0);
        let draws: Vec<f64> =
            (0..200_000).map(|_| noise_sum(NoiseKind::SymmetricExponential, 7, Some(&gamma), &mut rng)).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!(m.abs() < 0.01 && (v - 1.0).abs() < 0.02, "mean {m} var {v}");
    }

    #[test]
    fn reference_matches_direct_simulation() {
        // the shortcut and building whole datasets give the same law
        let model = CovarianceModel::new(CorrelationSpec::Autoregressive { rho0: 0.3 }, vec![1.0, 0.6, 0.3]).unwrap();
        let (n, draws) = (6, 4000);
        let fast = reference_population(&model, 0.5, n, NoiseKind::SymmetricExponential, draws, 1).unwrap();
        let w = partial_weights(model.sigma(), 0.5);
        let slow: Vec<f64> = (0..draws)
            .map(|k| {
                let x = generate_sample(&[0.0; 3], &model, n, NoiseKind::SymmetricExponential, 1000 + k as u64).unwrap();
                let root_n = (n as f64).sqrt();
                let s = x.matrix().row_sum() / n as f64 * root_n;
                extremes_of_row(s.iter().copied(), &w).high
            })
            .collect();
        let d = ks_two_sample(&fast, &slow).unwrap();
        assert!(d < 0.04, "d = {d}");
    }

    #[test]
    fn gaussian_noise_gives_matching_laws() {
        let model = CovarianceModel::new(CorrelationSpec::Identity, vec![1.0, 0.5, 0.25, 0.125]).unwrap();
        let d = estimate_dk_gaussian(&model, 0.5, 20, NoiseKind::Gaussian, 10_000, 5).unwrap();
        assert!(d < 3.0 / 100.0, "d = {d}");
    }

    #[test]
    fn one_dimensional_clt_is_accurate() {
        let model = CovarianceModel::new(CorrelationSpec::Identity, vec![1.0]).unwrap();
        let d = estimate_dk_gaussian(&model, 0.0, 1000, NoiseKind::ScaledUniform, 10_000, 2).unwrap();
        assert!(d < 0.05, "d = {d}");
    }

    #[test]
    fn bootstrap_summary_orders_quantiles() {
        let model = CovarianceModel::new(CorrelationSpec::Identity, vec![1.0, 0.5, 0.3]).unwrap();
        let r = estimate_dk_bootstrap(&model, 0.5, 30, NoiseKind::SymmetricExponential, 2000, 9, 200, 4).unwrap();
        assert_eq!(r.all.len(), 9);
        assert!(r.q90 >= r.median);
        assert!(r.all.iter().all(|d| (0.0..=1.0).contains(d)));
    }

    #[test]
    fn config_validation() {
        let mut cfg = RateStudyConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.ns = vec![200, 100];
        assert!(cfg.validate().is_err());
        cfg = RateStudyConfig { ref_draws: 100, ..RateStudyConfig::default() };
        assert!(cfg.validate().is_err());
        assert_eq!(DimensionRule::Power { c: 2.0, exponent: 0.5 }.p(100).unwrap(), 20);
    }
}
