//! Covariance models, synthetic data `X_i = mu + Sigma^{1/2} Z_i`, and
//! structural diagnostics of a covariance (variance decay, effective rank,
//! weak-l_r norms, theory indices, correlation checks).

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, psd_tolerance};
use crate::rng::{self, tag};
use crate::special::zeta_upper;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::sync::OnceLock;

/// Correlation structures with closed-form entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum CorrelationSpec {
    Identity,
    /// `R_ij = rho0^|i-j|`, `rho0` in (0, 1).
    Autoregressive { rho0: f64 },
    /// `R_ij = 1{i=j} + 1{i!=j} / (4 |i-j|^gamma)`, `gamma >= 2`.
    Algebraic { gamma: f64 },
    /// `R_ij = (1 - |i-j| / c0)_+`, `c0 > 0`.
    Banded { c0: f64 },
    /// Correlation of one multinomial trial with cell probabilities `pi`.
    Multinomial { pi: Vec<f64> },
    /// Row-major `p x p` symmetric matrix with unit diagonal.
    Explicit { matrix: Vec<Vec<f64>> },
}

/// Realizes the correlation matrix of `spec` in dimension `p`.
pub fn build_correlation(spec: &CorrelationSpec, p: usize) -> Result<DMatrix<f64>> {
    if p == 0 {
        return invalid("dimension must be at least 1");
    }
    let dist = |i: usize, j: usize| i.abs_diff(j) as f64;
    let r = match spec {
        CorrelationSpec::Identity => DMatrix::identity(p, p),
        &CorrelationSpec::Autoregressive { rho0 } => {
            if !(rho0 > 0.0 && rho0 < 1.0) {
                return invalid(format!("autoregressive rho0 must lie in (0, 1), got {rho0}"));
            }
            DMatrix::from_fn(p, p, |i, j| rho0.powi(i.abs_diff(j) as i32))
        }
        &CorrelationSpec::Algebraic { gamma } => {
            if !(gamma >= 2.0) || !gamma.is_finite() {
                return invalid(format!("algebraic gamma must be >= 2, got {gamma}"));
            }
            DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { 0.25 / dist(i, j).powf(gamma) })
        }
        &CorrelationSpec::Banded { c0 } => {
            if !(c0 > 0.0) || !c0.is_finite() {
                return invalid(format!("banded c0 must be positive, got {c0}"));
            }
            DMatrix::from_fn(p, p, |i, j| (1.0 - dist(i, j) / c0).max(0.0))
        }
        CorrelationSpec::Multinomial { pi } => {
            if pi.len() != p {
                return invalid(format!("multinomial pi has length {}, expected {p}", pi.len()));
            }
            validate_probabilities(pi)?;
            // cells with pi in {0, 1} have no variance; leave them uncorrelated
            let odds: Vec<Option<f64>> = pi
                .iter()
                .map(|&q| (q > 0.0 && q < 1.0).then(|| q / (1.0 - q)))
                .collect();
            DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    1.0
                } else {
                    match (odds[i], odds[j]) {
                        (Some(a), Some(b)) => -(a * b).sqrt(),
                        _ => 0.0,
                    }
                }
            })
        }
        CorrelationSpec::Explicit { matrix } => {
            if matrix.len() != p || matrix.iter().any(|row| row.len() != p) {
                return invalid(format!("explicit correlation must be {p} x {p}"));
            }
            let m = DMatrix::from_fn(p, p, |i, j| matrix[i][j]);
            for i in 0..p {
                if (m[(i, i)] - 1.0).abs() > 1e-12 {
                    return invalid(format!("explicit correlation diagonal entry {i} is {}", m[(i, i)]));
                }
                for j in 0..i {
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                        return invalid("explicit correlation is not symmetric");
                    }
                    if !(m[(i, j)].abs() <= 1.0) {
                        return invalid("explicit correlation entries must lie in [-1, 1]");
                    }
                }
            }
            m
        }
    };
    Ok(r)
}

pub(crate) fn validate_probabilities(pi: &[f64]) -> Result<()> {
    if pi.is_empty() {
        return invalid("probability vector is empty");
    }
    if pi.iter().any(|&q| !(q >= 0.0) || !q.is_finite()) {
        return invalid("probabilities must be finite and nonnegative");
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return invalid(format!("probabilities sum to {total}, not 1"));
    }
    Ok(())
}

/// Symmetric square root by eigendecomposition; eigenvalues in
/// `[-eps_psd, 0)` are clipped to zero.
pub fn matrix_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::psd_sqrt(s)
}

/// How the standard deviations are specified in a model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaProfile {
    Explicit { values: Vec<f64> },
    /// `sigma_j = c * j^(-alpha)`, `j = 1..p`.
    Power { c: f64, alpha: f64 },
}

impl SigmaProfile {
    pub fn realize(&self, p: usize) -> Result<Vec<f64>> {
        match self {
            SigmaProfile::Explicit { values } => {
                if values.len() != p {
                    return invalid(format!("sigma has {} entries, expected {p}", values.len()));
                }
                Ok(values.clone())
            }
            &SigmaProfile::Power { c, alpha } => {
                Ok((1..=p).map(|j| c * (j as f64).powf(-alpha)).collect())
            }
        }
    }
}

/// Serializable description of a [`CovarianceModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModelSpec {
    pub p: usize,
    pub corr: CorrelationSpec,
    pub sigma: SigmaProfile,
}

/// `Sigma = D_sigma R D_sigma` with a lazily computed symmetric square root.
#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "CovarianceModelSpec", into = "CovarianceModelSpec")]
pub struct CovarianceModel {
    spec: CovarianceModelSpec,
    sigma: Vec<f64>,
    corr: DMatrix<f64>,
    sqrt_cache: OnceLock<DMatrix<f64>>,
}

impl Clone for CovarianceModel {
    fn clone(&self) -> Self {
        let sqrt_cache = OnceLock::new();
        if let Some(a) = self.sqrt_cache.get() {
            let _ = sqrt_cache.set(a.clone());
        }
        Self { spec: self.spec.clone(), sigma: self.sigma.clone(), corr: self.corr.clone(), sqrt_cache }
    }
}

impl TryFrom<CovarianceModelSpec> for CovarianceModel {
    type Error = Error;

    fn try_from(spec: CovarianceModelSpec) -> Result<Self> {
        let sigma = spec.sigma.realize(spec.p)?;
        if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return invalid("standard deviations must be positive and finite");
        }
        let corr = build_correlation(&spec.corr, spec.p)?;
        Ok(Self { spec, sigma, corr, sqrt_cache: OnceLock::new() })
    }
}

impl From<CovarianceModel> for CovarianceModelSpec {
    fn from(m: CovarianceModel) -> Self {
        m.spec
    }
}

impl CovarianceModel {
    pub fn new(corr: CorrelationSpec, sigma: Vec<f64>) -> Result<Self> {
        let p = sigma.len();
        Self::try_from(CovarianceModelSpec { p, corr, sigma: SigmaProfile::Explicit { values: sigma } })
    }

    pub fn from_spec(spec: CovarianceModelSpec) -> Result<Self> {
        Self::try_from(spec)
    }

    pub fn spec(&self) -> &CovarianceModelSpec {
        &self.spec
    }

    pub fn p(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.corr
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let s = &self.sigma;
        DMatrix::from_fn(self.p(), self.p(), |i, j| s[i] * self.corr[(i, j)] * s[j])
    }

    /// `Sigma^{1/2}`, computed on first use.
    pub fn sqrt(&self) -> Result<&DMatrix<f64>> {
        if let Some(a) = self.sqrt_cache.get() {
            return Ok(a);
        }
        let a = matrix_sqrt(&self.covariance())?;
        Ok(self.sqrt_cache.get_or_init(|| a))
    }

    /// Standard deviations in nonincreasing order.
    pub fn sorted_sigma(&self) -> Vec<f64> {
        sorted_desc(&self.sigma)
    }
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `n x p` observation matrix; row `i` is `X_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    rows: DMatrix<f64>,
}

impl SampleMatrix {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return invalid("sample matrix needs n >= 1 and p >= 1");
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return invalid("sample matrix contains non-finite entries");
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return invalid("rows have unequal lengths");
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn p(&self) -> usize {
        self.rows.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.rows
    }

    /// Writes a CSV whose header holds the 1-based column indices.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record((1..=self.p()).map(|j| j.to_string()))?;
        for i in 0..self.n() {
            out.write_record(self.rows.row(i).iter().map(|&v| crate::report::fmt_f64(v)))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let p = reader.headers()?.len();
        let mut data = Vec::new();
        let mut n = 0;
        for record in reader.records() {
            let record = record?;
            if record.len() != p {
                return invalid(format!("CSV row {} has {} fields, expected {p}", n + 1, record.len()));
            }
            for field in record.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Validation(format!("cannot parse {field:?} as a number")))?;
                data.push(v);
            }
            n += 1;
        }
        Self::new(DMatrix::from_row_slice(n, p, &data))
    }
}

/// Standardized noise for the `Z_i` coordinates: mean 0, variance 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt 3, sqrt 3]`.
    ScaledUniform,
    /// Laplace with scale `1/sqrt 2`.
    SymmetricExponential,
}

impl NoiseKind {
    #[inline]
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            NoiseKind::Gaussian => StandardNormal.sample(rng),
            NoiseKind::ScaledUniform => 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
            NoiseKind::SymmetricExponential => {
                let e: f64 = Exp1.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * e * std::f64::consts::FRAC_1_SQRT_2
            }
        }
    }

    pub fn fill<R: Rng + ?Sized>(self, rng: &mut R, out: &mut [f64]) {
        for v in out {
            *v = self.sample(rng);
        }
    }
}

const ROW_BLOCK: usize = 256;

/// Draws `n` rows `mu + Sigma^{1/2} Z_i`. Row `i` uses its own random stream.
pub fn generate_sample(
    mu: &[f64],
    model: &CovarianceModel,
    n: usize,
    noise: NoiseKind,
    seed: u64,
) -> Result<SampleMatrix> {
    let p = model.p();
    if mu.len() != p {
        return invalid(format!("mean has length {}, model dimension is {p}", mu.len()));
    }
    if n == 0 {
        return invalid("sample size must be at least 1");
    }
    let root = model.sqrt()?;
    let blocks: Vec<DMatrix<f64>> = (0..n)
        .step_by(ROW_BLOCK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let rows = ROW_BLOCK.min(n - start);
            let mut z = DMatrix::zeros(rows, p);
            let mut buf = vec![0.0; p];
            for r in 0..rows {
                let mut rng = rng::stream(seed, tag::DATA_ROW, (start + r) as u64);
                noise.fill(&mut rng, &mut buf);
                for (j, &v) in buf.iter().enumerate() {
                    z[(r, j)] = v;
                }
            }
            z * root
        })
        .collect();
    let mut x = DMatrix::zeros(n, p);
    for (b, block) in blocks.into_iter().enumerate() {
        let start = b * ROW_BLOCK;
        for j in 0..p {
            for r in 0..block.nrows() {
                x[(start + r, j)] = block[(r, j)] + mu[j];
            }
        }
    }
    SampleMatrix::new(x)
}

/// `max_j j^{1/r} |v|_(j)` over the sorted absolute entries.
pub fn weak_lr_norm(v: &[f64], r: f64) -> Result<f64> {
    if v.is_empty() {
        return invalid("weak-l_r norm of an empty vector");
    }
    if !(r > 0.0) {
        return invalid(format!("weak-l_r exponent must be positive, got {r}"));
    }
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    Ok(sorted_desc(&abs)
        .iter()
        .enumerate()
        .map(|(k, &a)| ((k + 1) as f64).powf(1.0 / r) * a)
        .fold(0.0, f64::max))
}

/// `tr(S) / ||S||_op`.
pub fn effective_rank(s: &DMatrix<f64>) -> Result<f64> {
    if !s.is_square() || s.nrows() == 0 {
        return invalid("effective rank needs a nonempty square matrix");
    }
    let eig = linalg::sym_eigenvalues(s);
    let op = eig.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    if op == 0.0 {
        return invalid("effective rank of the zero matrix is undefined");
    }
    Ok(s.trace() / op)
}

/// Default `a` in the definition of `k_n`.
pub const DEFAULT_THEORY_A: f64 = 0.25;

/// The integers `(l_n, k_n)`:
/// `l_n = ceil((1 v log(n)^3) ^ p)`, `k_n = ceil((l_n v n^{1/log(n)^a}) ^ p)`.
pub fn theory_indices(n: usize, p: usize, a: f64) -> Result<(usize, usize)> {
    if n < 2 || p == 0 {
        return invalid(format!("theory indices need n >= 2 and p >= 1 (n={n}, p={p})"));
    }
    if !(a > 0.0 && a < 0.5) {
        return invalid(format!("constant a must lie in (0, 1/2), got {a}"));
    }
    let ln = (n as f64).ln();
    let pf = p as f64;
    let ell = ln.powi(3).max(1.0).min(pf).ceil() as usize;
    let growth = (ln / ln.powf(a)).exp();
    let k = (ell as f64).max(growth).min(pf).ceil() as usize;
    Ok((ell, k))
}

/// Size of the top-variance block used for the correlation checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EllChoice {
    Theory { a: f64 },
    Fixed { ell: usize },
}

impl Default for EllChoice {
    fn default() -> Self {
        EllChoice::Theory { a: DEFAULT_THEORY_A }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationChecks {
    pub max_offdiag_r_ell: f64,
    pub positive_offdiag_sum: f64,
    pub r_plus_psd: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayDiagnostics {
    pub sorted_sigma: Vec<f64>,
    pub alpha_hat: f64,
    /// Set when the decay fit had fewer than two usable points or a flat profile.
    pub alpha_degenerate: bool,
    pub effective_rank: f64,
    pub ell_n: usize,
    pub k_n: usize,
    pub corr_checks: CorrelationChecks,
}

/// Diagnostics of a model's true covariance; `n` only enters `(l_n, k_n)`.
pub fn model_diagnostics(model: &CovarianceModel, n: usize, ell: EllChoice) -> Result<DecayDiagnostics> {
    decay_diagnostics(model.sigma(), model.correlation(), &model.covariance(), n, ell)
}

/// Diagnostics of a sample's `1/n` covariance and correlation.
pub fn sample_diagnostics(x: &SampleMatrix, ell: EllChoice) -> Result<DecayDiagnostics> {
    if x.n() < 2 {
        return invalid("sample diagnostics need n >= 2");
    }
    let stats = crate::maxstat::column_stats(x);
    let p = x.p();
    let s = &stats.sigma_hat;
    let corr = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else if s[i] > 0.0 && s[j] > 0.0 {
            (stats.cov_hat[(i, j)] / (s[i] * s[j])).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    });
    decay_diagnostics(s, &corr, &stats.cov_hat, x.n(), ell)
}

fn decay_diagnostics(
    sigma: &[f64],
    corr: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    n: usize,
    ell: EllChoice,
) -> Result<DecayDiagnostics> {
    let p = sigma.len();
    let (ell_n, k_n) = match ell {
        EllChoice::Theory { a } => theory_indices(n, p, a)?,
        EllChoice::Fixed { ell } => {
            if ell == 0 {
                return invalid("block size ell must be at least 1");
            }
            let ell = ell.min(p);
            let (_, k) = theory_indices(n, p, DEFAULT_THEORY_A)?;
            (ell, k.max(ell))
        }
    };
    let sorted_sigma = sorted_desc(sigma);
    let (alpha_hat, alpha_degenerate) = fit_decay_exponent(&sorted_sigma);
    let effective_rank = if cov.iter().all(|&v| v == 0.0) { 0.0 } else { effective_rank(cov)? };

    // indices of the ell largest sigmas, ties broken by position
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let top = &order[..ell_n];
    let block = DMatrix::from_fn(ell_n, ell_n, |i, j| corr[(top[i], top[j])]);
    let mut max_offdiag = f64::NEG_INFINITY;
    let mut pos_sum = 0.0;
    for i in 0..ell_n {
        for j in (i + 1)..ell_n {
            max_offdiag = max_offdiag.max(block[(i, j)]);
            pos_sum += block[(i, j)].max(0.0);
        }
    }
    if ell_n == 1 {
        max_offdiag = 0.0;
    }
    let r_plus = block.map(|v| v.max(0.0));
    let eig = linalg::sym_eigenvalues(&r_plus);
    let min_eig = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let r_plus_psd = min_eig >= -psd_tolerance(&eig);

    Ok(DecayDiagnostics {
        sorted_sigma,
        alpha_hat,
        alpha_degenerate,
        effective_rank,
        ell_n,
        k_n,
        corr_checks: CorrelationChecks { max_offdiag_r_ell: max_offdiag, positive_offdiag_sum: pos_sum, r_plus_psd },
    })
}

/// Negative OLS slope of `log sigma_(j)` on `log j` over `j = 2..p`
/// (positive entries only).
pub fn fit_decay_exponent(sorted_sigma: &[f64]) -> (f64, bool) {
    let pts: Vec<(f64, f64)> = sorted_sigma
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &s)| s > 0.0)
        .map(|(k, &s)| (((k + 1) as f64).ln(), s.ln()))
        .collect();
    if pts.len() < 2 {
        return (0.0, true);
    }
    let (slope, _) = linalg::ols_line(&pts);
    let flat = pts.iter().all(|&(_, y)| (y - pts[0].1).abs() < 1e-14);
    if flat {
        (0.0, true)
    } else {
        (-slope, false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchurHornCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares `||diag(A)||_{wl_s}` with `zeta(s/r)^{1/s} ||lambda(A)||_{wl_r}`.
pub fn schur_horn_check(a: &DMatrix<f64>, r: f64, s: f64) -> Result<SchurHornCheck> {
    if !a.is_square() || a.nrows() == 0 {
        return invalid("schur-horn check needs a nonempty square matrix");
    }
    if !(r > 0.0) || !(s >= 1.0) || !(r < s) {
        return invalid(format!("need 0 < r < s and s >= 1, got r={r}, s={s}"));
    }
    let diag: Vec<f64> = a.diagonal().iter().copied().collect();
    let eig = linalg::sym_eigenvalues(a);
    let lhs = weak_lr_norm(&diag, s)?;
    let rhs = zeta_upper(s / r)?.powf(1.0 / s) * weak_lr_norm(eig.as_slice(), r)?;
    Ok(SchurHornCheck { lhs, rhs, holds: lhs <= rhs })
}
