//! Functional-data mean test: the Beta-warped two-bump mean family, Matérn
//! Gaussian-process paths on a grid, Fourier-coefficient projection and the
//! type-I / power experiment.

use crate::error::{invalid, Result};
use crate::linalg;
use crate::model::SampleMatrix;
use crate::report::{fmt_f64, tau_histogram, Rate, TauCount};
use crate::rng::{self, derive_seed, tag};
use crate::sci::{self, TauRule};
use crate::special::{bessel_k, regularized_beta};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

pub const DEFAULT_GRID_SIZE: usize = 101;
pub const DEFAULT_NU: f64 = 0.1;
pub const DEFAULT_BASIS_SIZE: usize = 100;
/// Grid size for the exact coefficients of the null mean.
pub const TARGET_RESOLUTION: usize = 2048;

/// Beta distribution function `I_t(a, b)`.
pub fn beta_cdf(t: f64, a: f64, b: f64) -> Result<f64> {
    regularized_beta(t, a, b)
}

/// Shape `omega`, scale `rho` and shift `theta` of the mean family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanParams {
    #[serde(default)]
    pub omega: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub theta: f64,
}

impl MeanParams {
    pub fn new(omega: f64, rho: f64, theta: f64) -> Result<Self> {
        let m = Self { omega, rho, theta };
        m.validate()?;
        Ok(m)
    }

    pub fn null() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2.0 + self.omega > 0.0) || !self.rho.is_finite() || !self.theta.is_finite() {
            return invalid(format!("mean parameters out of range: {self:?}"));
        }
        Ok(())
    }
}

/// `(1+rho)(exp[-(g+2)^2] + exp[-(g-2)^2]) + theta`, `g = 8 h - 4`, with `h`
/// the `Beta(2+omega, 2)` distribution function.
pub fn mean_function(params: &MeanParams, t: f64) -> Result<f64> {
    params.validate()?;
    let h = beta_cdf(t, 2.0 + params.omega, 2.0)?;
    let g = 8.0 * h - 4.0;
    Ok((1.0 + params.rho) * ((-(g + 2.0).powi(2)).exp() + (-(g - 2.0).powi(2)).exp()) + params.theta)
}

/// Matérn covariance with the 1/16 variance scaling.
pub fn matern_cov(s: f64, t: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() {
        return invalid(format!("Matérn smoothness must be positive, got {nu}"));
    }
    let x = (2.0 * nu).sqrt() * (t - s).abs();
    if x == 0.0 {
        return Ok(1.0 / 16.0);
    }
    let norm = 16.0 * gamma(nu) * 2f64.powf(nu - 1.0);
    // x^nu K_nu(x) underflows gracefully for large x
    if x > 700.0 {
        return Ok(0.0);
    }
    Ok(x.powf(nu) * bessel_k(nu, x)? / norm)
}

/// Covariance matrix of the grid points.
pub fn matern_matrix(grid: &[f64], nu: f64) -> Result<DMatrix<f64>> {
    let m = grid.len();
    let mut c = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let v = matern_cov(grid[i], grid[j], nu)?;
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}

/// `m` equispaced points from 0 to 1 inclusive.
pub fn equispaced_grid(m: usize) -> Vec<f64> {
    (0..m).map(|k| k as f64 / (m - 1) as f64).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return invalid("grid needs at least two points");
    }
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return invalid("grid points must lie in [0, 1]");
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("grid must be strictly increasing");
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub grid: Vec<f64>,
    pub nu: f64,
    pub mean: MeanParams,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { grid: equispaced_grid(DEFAULT_GRID_SIZE), nu: DEFAULT_NU, mean: MeanParams::null() }
    }
}

/// Grid-discretized Gaussian process: mean vector and covariance root.
#[derive(Clone, Debug)]
pub struct GaussianProcess {
    mean: Vec<f64>,
    root: DMatrix<f64>,
}

impl GaussianProcess {
    pub fn new(cfg: &GpConfig) -> Result<Self> {
        check_grid(&cfg.grid)?;
        let mean = cfg.grid.iter().map(|&t| mean_function(&cfg.mean, t)).collect::<Result<Vec<_>>>()?;
        Self::with_covariance(mean, &matern_matrix(&cfg.grid, cfg.nu)?)
    }

    pub fn with_covariance(mean: Vec<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return invalid("covariance and mean sizes differ");
        }
        Ok(Self { mean, root: linalg::psd_sqrt(cov)? })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `n x m` matrix of paths; path `i` uses stream `(seed, GP_PATH, i)`.
    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        let m = self.mean.len();
        let mut z = DMatrix::zeros(n, m);
        for i in 0..n {
            let mut rng = rng::stream(seed, tag::GP_PATH, i as u64);
            for k in 0..m {
                z[(i, k)] = StandardNormal.sample(&mut rng);
            }
        }
        let mut y = z * &self.root;
        for (k, mut col) in y.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[k]);
        }
        y
    }
}

/// `n` sample paths of the process described by `cfg`.
pub fn simulate_gp(cfg: &GpConfig, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    Ok(GaussianProcess::new(cfg)?.sample(n, seed))
}

/// `psi_1 = 1`, `psi_{2k} = sqrt2 cos(2 pi k t)`, `psi_{2k+1} = sqrt2 sin(2 pi k t)`.
pub fn fourier_basis(j: usize, t: f64) -> f64 {
    assert!(j >= 1, "basis index is 1-based");
    if j == 1 {
        return 1.0;
    }
    let k = (j / 2) as f64;
    if j % 2 == 0 {
        SQRT_2 * (2.0 * PI * k * t).cos()
    } else {
        SQRT_2 * (2.0 * PI * k * t).sin()
    }
}

/// Trapezoidal quadrature weights.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let m = grid.len();
    let mut w = vec![0.0; m];
    for k in 0..m - 1 {
        let h = 0.5 * (grid[k + 1] - grid[k]);
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

/// Maps grid values to the first `p` Fourier coefficients.
#[derive(Clone, Debug)]
pub struct FourierProjector {
    /// `m x p`; column `j` holds `w_k psi_{j+1}(t_k)`.
    weights: DMatrix<f64>,
    pub resolution_warning: bool,
}

impl FourierProjector {
    pub fn new(grid: &[f64], p: usize) -> Result<Self> {
        check_grid(grid)?;
        if p == 0 {
            return invalid("need at least one basis function");
        }
        let w = trapezoid_weights(grid);
        let weights = DMatrix::from_fn(grid.len(), p, |k, j| w[k] * fourier_basis(j + 1, grid[k]));
        Ok(Self { weights, resolution_warning: p > grid.len() })
    }

    pub fn p(&self) -> usize {
        self.weights.ncols()
    }

    pub fn project(&self, paths: &DMatrix<f64>) -> Result<SampleMatrix> {
        if paths.ncols() != self.weights.nrows() {
            return invalid("paths do not match the projection grid");
        }
        SampleMatrix::new(paths * &self.weights)
    }

    pub fn project_values(&self, values: &[f64]) -> Vec<f64> {
        (0..self.p()).map(|j| self.weights.column(j).iter().zip(values).map(|(w, v)| w * v).sum()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub coefficients: SampleMatrix,
    /// More basis functions than grid points.
    pub resolution_warning: bool,
}

/// Coefficients `<Y_i, psi_j>` by trapezoidal quadrature, one row per path.
pub fn fourier_coeffs(paths: &DMatrix<f64>, grid: &[f64], p: usize) -> Result<Projection> {
    let proj = FourierProjector::new(grid, p)?;
    Ok(Projection { coefficients: proj.project(paths)?, resolution_warning: proj.resolution_warning })
}

/// Coefficients of a mean function on a fine equispaced grid.
pub fn mean_coefficients(params: &MeanParams, p: usize, resolution: usize) -> Result<Vec<f64>> {
    let grid = equispaced_grid(resolution);
    let values = grid.iter().map(|&t| mean_function(params, t)).collect::<Result<Vec<_>>>()?;
    Ok(FourierProjector::new(&grid, p)?.project_values(&values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdaExperimentConfig {
    pub n: usize,
    pub p: usize,
    pub b: usize,
    pub rho: f64,
    pub tau: TauRule,
    pub n_sims: usize,
    pub seed: u64,
    pub alternative: MeanParams,
    pub grid_size: usize,
    pub nu: f64,
}

impl Default for FdaExperimentConfig {
    fn default() -> Self {
        Self {
            n: 50,
            p: DEFAULT_BASIS_SIZE,
            b: sci::DEFAULT_B,
            rho: 0.05,
            tau: TauRule::default(),
            n_sims: 1000,
            seed: 0,
            alternative: MeanParams::null(),
            grid_size: DEFAULT_GRID_SIZE,
            nu: DEFAULT_NU,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdaSimRecord {
    pub sim_id: usize,
    pub selected_tau: f64,
    pub rejected: bool,
    /// Largest 1-based coefficient index whose interval missed its target.
    pub max_offending_j: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauRate {
    pub tau: f64,
    pub rate: Rate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdaReport {
    pub config: FdaExperimentConfig,
    /// Rejection rate of the configured rule (type-I error under the null).
    pub rejection: Rate,
    /// Rejection rate of every grid value, computed from the same draws.
    pub per_tau: Vec<TauRate>,
    pub selected_tau_histogram: Vec<TauCount>,
    pub resolution_warning: bool,
    pub per_sim: Vec<FdaSimRecord>,
}

impl FdaReport {
    /// CSV `sim_id, selected_tau, rejected, max_offending_j`.
    pub fn write_sims_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sim_id", "selected_tau", "rejected", "max_offending_j"])?;
        for r in &self.per_sim {
            out.write_record([
                r.sim_id.to_string(),
                fmt_f64(r.selected_tau),
                u8::from(r.rejected).to_string(),
                r.max_offending_j.map(|j| j.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Repeats: simulate paths under `alternative`, project, choose `tau`, test
/// against the coefficients of the null mean.
pub fn run_fda_experiment(cfg: &FdaExperimentConfig) -> Result<FdaReport> {
    if cfg.n < 2 {
        return invalid("experiment needs n >= 2");
    }
    if cfg.n_sims == 0 {
        return invalid("experiment needs at least one simulation");
    }
    cfg.alternative.validate()?;
    let grid = equispaced_grid(cfg.grid_size.max(2));
    let gp = GaussianProcess::new(&GpConfig { grid: grid.clone(), nu: cfg.nu, mean: cfg.alternative })?;
    let projector = FourierProjector::new(&grid, cfg.p)?;
    let targets = mean_coefficients(&MeanParams::null(), cfg.p, TARGET_RESOLUTION)?;
    let taus = cfg.tau.grid();

    let outcomes: Vec<(FdaSimRecord, Vec<bool>)> = (0..cfg.n_sims)
        .into_par_iter()
        .map(|s| {
            let sim_seed = derive_seed(cfg.seed, tag::SIMULATION, s as u64);
            let paths = gp.sample(cfg.n, sim_seed);
            let x = projector.project(&paths)?;
            let sel = sci::select_tau(&x, &taus, cfg.b, cfg.rho, derive_seed(sim_seed, tag::MULTIPLIER, 0))?;
            let per_tau: Vec<bool> = sel.candidates.iter().map(|c| !c.covers(&targets)).collect();
            let chosen = sel.sci();
            let offending = chosen.misses(&targets);
            let record = FdaSimRecord {
                sim_id: s,
                selected_tau: chosen.tau,
                rejected: !offending.is_empty(),
                max_offending_j: offending.iter().map(|&k| chosen.coords[k] + 1).max(),
            };
            Ok((record, per_tau))
        })
        .collect::<Result<Vec<_>>>()?;

    let rejections = outcomes.iter().filter(|(r, _)| r.rejected).count();
    let per_tau = taus
        .iter()
        .enumerate()
        .map(|(k, &tau)| TauRate { tau, rate: Rate::new(outcomes.iter().filter(|(_, v)| v[k]).count(), cfg.n_sims) })
        .collect();
    let per_sim: Vec<FdaSimRecord> = outcomes.into_iter().map(|(r, _)| r).collect();
    Ok(FdaReport {
        config: cfg.clone(),
        rejection: Rate::new(rejections, cfg.n_sims),
        per_tau,
        selected_tau_histogram: tau_histogram(&taus, per_sim.iter().map(|r| r.selected_tau)),
        resolution_warning: projector.resolution_warning,
        per_sim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn beta_cdf_endpoints_and_polynomial() {
        assert_eq!(beta_cdf(0.0, 2.3, 2.0).unwrap(), 0.0);
        assert_eq!(beta_cdf(1.0, 2.3, 2.0).unwrap(), 1.0);
        assert!((beta_cdf(0.5, 2.0, 2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((beta_cdf(0.25, 2.0, 2.0).unwrap() - 0.15625).abs() < 1e-12);
        assert!(beta_cdf(-0.1, 2.0, 2.0).is_err());
    }

    #[test]
    fn mean_function_examples() {
        let null = MeanParams::null();
        assert_relative_eq!(mean_function(&null, 0.5).unwrap(), 2.0 * (-4f64).exp(), epsilon = 1e-14);
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            let base = mean_function(&null, t).unwrap();
            let shifted = mean_function(&MeanParams::new(0.0, 0.0, 0.3).unwrap(), t).unwrap();
            let scaled = mean_function(&MeanParams::new(0.0, 0.5, 0.0).unwrap(), t).unwrap();
            assert_relative_eq!(shifted, base + 0.3, epsilon = 1e-14);
            assert_relative_eq!(scaled, 1.5 * base, epsilon = 1e-14);
        }
        assert!(MeanParams::new(-2.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn mean_function_is_lipschitz_on_fine_grid() {
        for omega in [-1.0, 0.0, 0.5, 2.0] {
            let params = MeanParams::new(omega, 0.2, 0.1).unwrap();
            let h = 1e-4;
            let vals: Vec<f64> = (0..=10_000).map(|k| mean_function(&params, k as f64 * h).unwrap()).collect();
            // |mu'| <= (1+rho) * 2 * max|d/dg e^{-(g+-2)^2}| * 8 * max h' ; generous bound
            let jump = vals.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
            assert!(jump < 100.0 * h, "omega={omega} jump={jump}");
        }
    }

    #[test]
    fn matern_limits_and_closed_form() {
        for nu in [0.1, 0.5, 1.3, 2.5] {
            assert_eq!(matern_cov(0.3, 0.3, nu).unwrap(), 1.0 / 16.0);
            // continuity at the diagonal; the gap shrinks like d^(2 nu)
            let gap = 1.0 / 16.0 - matern_cov(0.3, 0.3 + 1e-12, nu).unwrap();
            assert!(gap > 0.0 && gap < 1e-2 / 16.0, "nu={nu} gap={gap}");
        }
        for d in [1e-6, 0.01, 0.2, 0.7, 1.0, 3.0] {
            assert_relative_eq!(matern_cov(0.0, d, 0.5).unwrap(), (-d).exp() / 16.0, max_relative = 1e-10);
        }
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            let v = matern_cov(0.0, k as f64 * 0.5, 0.1).unwrap();
            assert!(v <= prev && v >= 0.0);
            prev = v;
        }
        assert!(prev < 1e-6);
        assert!(matern_cov(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn matern_grid_matrices_are_psd() {
        for nu in [0.1, 0.5, 2.0] {
            for m in [11, 101] {
                let c = matern_matrix(&equispaced_grid(m), nu).unwrap();
                let eig = linalg::sym_eigenvalues(&c);
                let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
                assert!(min >= -linalg::psd_tolerance(&eig), "nu={nu} m={m} min={min}");
            }
        }
    }

    #[test]
    fn zero_covariance_paths_equal_mean() {
        let grid = equispaced_grid(21);
        let mean: Vec<f64> = grid.iter().map(|&t| mean_function(&MeanParams::null(), t).unwrap()).collect();
        let gp = GaussianProcess::with_covariance(mean.clone(), &DMatrix::zeros(21, 21)).unwrap();
        let y = gp.sample(4, 1);
        for i in 0..4 {
            for k in 0..21 {
                assert_eq!(y[(i, k)], mean[k]);
            }
        }
    }

    #[test]
    fn constant_path_projects_to_first_coefficient() {
        let grid = equispaced_grid(101);
        let paths = DMatrix::from_element(1, 101, 2.5);
        let proj = fourier_coeffs(&paths, &grid, 30).unwrap();
        let x = proj.coefficients.matrix();
        assert!((x[(0, 0)] - 2.5).abs() < 1e-10);
        for j in 1..30 {
            assert!(x[(0, j)].abs() < 1e-10);
        }
        assert!(!proj.resolution_warning);
        assert!(fourier_coeffs(&paths, &grid, 102).unwrap().resolution_warning);
    }

    #[test]
    fn discrete_gram_is_near_identity() {
        let grid = equispaced_grid(101);
        let w = trapezoid_weights(&grid);
        for a in 1..=20 {
            for b in 1..=20 {
                let g: f64 = grid.iter().zip(&w).map(|(&t, &wk)| wk * fourier_basis(a, t) * fourier_basis(b, t)).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((g - expected).abs() < 1e-3, "({a},{b}) -> {g}");
            }
        }
    }

    #[test]
    fn null_targets_agree_across_resolutions() {
        let fine = mean_coefficients(&MeanParams::null(), 100, TARGET_RESOLUTION).unwrap();
        let coarse = mean_coefficients(&MeanParams::null(), 100, DEFAULT_GRID_SIZE).unwrap();
        for (a, b) in fine.iter().zip(&coarse) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn shift_changes_only_first_coefficient() {
        let base = mean_coefficients(&MeanParams::null(), 40, TARGET_RESOLUTION).unwrap();
        let shifted = mean_coefficients(&MeanParams::new(0.0, 0.0, 0.4).unwrap(), 40, TARGET_RESOLUTION).unwrap();
        assert!((shifted[0] - base[0] - 0.4).abs() < 1e-12);
        for j in 1..40 {
            assert!((shifted[j] - base[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn gp_paths_are_deterministic() {
        let cfg = GpConfig { grid: equispaced_grid(31), ..GpConfig::default() };
        assert_eq!(simulate_gp(&cfg, 5, 9).unwrap(), simulate_gp(&cfg, 5, 9).unwrap());
        assert_ne!(simulate_gp(&cfg, 5, 9).unwrap(), simulate_gp(&cfg, 5, 10).unwrap());
        let bad = GpConfig { grid: vec![0.0, 0.5, 0.4], ..GpConfig::default() };
        assert!(simulate_gp(&bad, 2, 1).is_err());
    }
}
