//! Column moments, partially standardized max/min statistics, their Gaussian
//! counterparts, the Gaussian multiplier bootstrap and empirical quantiles.

use crate::error::{invalid, Error, Result};
use crate::model::{CovarianceModel, SampleMatrix};
use crate::rng::{self, tag};
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Bootstrap replicates are generated and multiplied in blocks of this many.
/// The block size never depends on the thread count.
const DRAW_CHUNK: usize = 64;

/// A scale `sigma_j` counts as zero below this fraction of the largest one.
pub const DEGENERATE_REL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    /// `1/n` sample covariance.
    pub cov_hat: DMatrix<f64>,
}

/// Centered data with its column means and `1/n` standard deviations.
pub(crate) struct Centered {
    pub mean: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    /// `n x k`, entry `(i, j) = x_ij - mean_j`.
    pub c: DMatrix<f64>,
}

pub(crate) fn center(x: &DMatrix<f64>) -> Centered {
    let n = x.nrows();
    let mean: Vec<f64> = x.column_iter().map(|col| col.iter().sum::<f64>() / n as f64).collect();
    let c = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] - mean[j]);
    let sigma_hat = sigma_from_centered(&c);
    Centered { mean, sigma_hat, c }
}

pub(crate) fn sigma_from_centered(c: &DMatrix<f64>) -> Vec<f64> {
    let n = c.nrows() as f64;
    c.column_iter().map(|col| (col.iter().map(|v| v * v).sum::<f64>() / n).sqrt()).collect()
}

/// Sample mean, `1/n` covariance and standard deviations.
pub fn column_stats(x: &SampleMatrix) -> ColumnStats {
    let Centered { mean, sigma_hat, c } = center(x.matrix());
    let n = x.n() as f64;
    let mut cov_hat = c.transpose() * &c / n;
    let cov_t = cov_hat.transpose();
    cov_hat = (&cov_hat + cov_t) * 0.5;
    for (j, s) in sigma_hat.iter().enumerate() {
        cov_hat[(j, j)] = s * s;
    }
    ColumnStats { mean, sigma_hat, cov_hat }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum SigmaSource {
    True(Vec<f64>),
    Estimated,
}

/// Exponent `tau` and the scales it is applied to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialStdConfig {
    pub tau: f64,
    pub sigma_source: SigmaSource,
}

impl PartialStdConfig {
    pub fn estimated(tau: f64) -> Self {
        Self { tau, sigma_source: SigmaSource::Estimated }
    }

    pub fn true_sigma(tau: f64, sigma: Vec<f64>) -> Self {
        Self { tau, sigma_source: SigmaSource::True(sigma) }
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return invalid(format!("tau must lie in [0, 1], got {tau}"));
    }
    Ok(())
}

/// Indices whose scale is numerically zero relative to the largest.
pub fn degenerate_mask(sigma: &[f64]) -> Vec<bool> {
    let top = sigma.iter().copied().fold(0.0f64, f64::max);
    sigma.iter().map(|&s| !(s >= DEGENERATE_REL * top) || top == 0.0).collect()
}

/// `sigma_j^{-tau}`, with zero for degenerate coordinates.
pub fn partial_weights(sigma: &[f64], tau: f64) -> Vec<f64> {
    degenerate_mask(sigma)
        .into_iter()
        .zip(sigma)
        .map(|(dead, &s)| if dead { 0.0 } else { s.powf(-tau) })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extremes {
    pub low: f64,
    pub high: f64,
}

/// `(L, M)` with `S_{n,j} = sqrt(n) (Xbar_j - mu0_j)` scaled by `sigma_j^{-tau}`.
///
/// For `tau > 0` a coordinate with zero scale contributes the value 0.
pub fn max_min_stat(x: &SampleMatrix, mu0: &[f64], cfg: &PartialStdConfig) -> Result<Extremes> {
    check_tau(cfg.tau)?;
    let p = x.p();
    if mu0.len() != p {
        return invalid(format!("mu0 has length {}, data have {p} columns", mu0.len()));
    }
    let cen;
    let sigma: &[f64] = match &cfg.sigma_source {
        SigmaSource::True(s) => {
            if s.len() != p {
                return invalid(format!("sigma has length {}, data have {p} columns", s.len()));
            }
            if s.iter().any(|&v| !(v >= 0.0)) {
                return invalid("reference scales must be nonnegative");
            }
            s
        }
        SigmaSource::Estimated => {
            cen = center(x.matrix());
            &cen.sigma_hat
        }
    };
    let weights = if cfg.tau > 0.0 {
        if degenerate_mask(sigma).iter().all(|&d| d) {
            return Err(Error::Degenerate("every reference scale is zero and tau > 0".into()));
        }
        partial_weights(sigma, cfg.tau)
    } else {
        vec![1.0; p]
    };
    let n = x.n() as f64;
    let root_n = n.sqrt();
    let mut out = Extremes { low: f64::INFINITY, high: f64::NEG_INFINITY };
    for (j, col) in x.matrix().column_iter().enumerate() {
        let mean = col.iter().sum::<f64>() / n;
        let v = root_n * (mean - mu0[j]) * weights[j];
        out.low = out.low.min(v);
        out.high = out.high.max(v);
    }
    Ok(out)
}

/// `B` bootstrap replicates `(L*_b, M*_b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub b: usize,
    pub lows: Vec<f64>,
    pub highs: Vec<f64>,
    pub tau: f64,
    pub seed: u64,
}

#[derive(Serialize)]
struct DrawsSidecar {
    b: usize,
    tau: f64,
    seed: u64,
}

impl BootstrapDraws {
    /// CSV with columns `b, L_star, M_star` (1-based `b`).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["b", "L_star", "M_star"])?;
        for (k, (lo, hi)) in self.lows.iter().zip(&self.highs).enumerate() {
            out.write_record([(k + 1).to_string(), crate::report::fmt_f64(*lo), crate::report::fmt_f64(*hi)])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Seed and size metadata that accompanies the CSV.
    pub fn sidecar_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DrawsSidecar { b: self.b, tau: self.tau, seed: self.seed })?)
    }
}

/// Per-weight-vector extremes of `B` multiplier draws
/// `S*_j = n^{-1/2} sum_i xi_i c_ij`, scaled by `weights[t][j]`.
///
/// Replicate `b` draws its `n` multipliers from stream `(seed, MULTIPLIER, b)`,
/// so any caller presenting the same centered block gets the same draws.
pub(crate) fn multiplier_extremes(
    c: &DMatrix<f64>,
    weights: &[Vec<f64>],
    b: usize,
    seed: u64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let (n, k) = c.shape();
    let scale = 1.0 / (n as f64).sqrt();
    let chunks: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..b.div_ceil(DRAW_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * DRAW_CHUNK;
            let m = DRAW_CHUNK.min(b - start);
            let mut out: Vec<(Vec<f64>, Vec<f64>)> =
                weights.iter().map(|_| (Vec::with_capacity(m), Vec::with_capacity(m))).collect();
            if k == 0 {
                for (lo, hi) in &mut out {
                    lo.resize(m, 0.0);
                    hi.resize(m, 0.0);
                }
                return out;
            }
            let xi = multiplier_block(n, start, m, seed);
            let s = xi * c;
            for (w, (lo, hi)) in weights.iter().zip(out.iter_mut()) {
                for r in 0..m {
                    let mut l = f64::INFINITY;
                    let mut h = f64::NEG_INFINITY;
                    for j in 0..k {
                        let v = s[(r, j)] * scale * w[j];
                        l = l.min(v);
                        h = h.max(v);
                    }
                    lo.push(l);
                    hi.push(h);
                }
            }
            out
        })
        .collect();
    let mut merged: Vec<(Vec<f64>, Vec<f64>)> =
        weights.iter().map(|_| (Vec::with_capacity(b), Vec::with_capacity(b))).collect();
    for chunk in chunks {
        for (dst, (lo, hi)) in merged.iter_mut().zip(chunk) {
            dst.0.extend(lo);
            dst.1.extend(hi);
        }
    }
    merged
}

fn multiplier_block(n: usize, start: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut xi = DMatrix::zeros(m, n);
    for r in 0..m {
        let mut rng = rng::stream(seed, tag::MULTIPLIER, (start + r) as u64);
        for i in 0..n {
            xi[(r, i)] = StandardNormal.sample(&mut rng);
        }
    }
    xi
}

/// Raw multiplier sums `S*` (one row per replicate), before scaling.
pub fn multiplier_sums(x: &SampleMatrix, b: usize, seed: u64) -> DMatrix<f64> {
    let cen = center(x.matrix());
    let n = x.n();
    let scale = 1.0 / (n as f64).sqrt();
    let blocks: Vec<DMatrix<f64>> = (0..b.div_ceil(DRAW_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * DRAW_CHUNK;
            multiplier_block(n, start, DRAW_CHUNK.min(b - start), seed) * &cen.c * scale
        })
        .collect();
    stack_rows(&blocks, x.p())
}

fn stack_rows(blocks: &[DMatrix<f64>], p: usize) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(total, p);
    let mut row = 0;
    for blk in blocks {
        out.rows_mut(row, blk.nrows()).copy_from(blk);
        row += blk.nrows();
    }
    out
}

fn check_bootstrap_args(x: &SampleMatrix, b: usize) -> Result<()> {
    if b == 0 {
        return invalid("bootstrap needs B >= 1");
    }
    if x.n() < 2 {
        return invalid("bootstrap needs n >= 2");
    }
    Ok(())
}

/// Gaussian multiplier bootstrap of `(L, M)` with estimated scales.
pub fn bootstrap_draws(x: &SampleMatrix, tau: f64, b: usize, seed: u64) -> Result<BootstrapDraws> {
    Ok(bootstrap_draws_multi(x, &[tau], b, seed)?.remove(0))
}

/// Bootstrap draws for several exponents from one shared set of multipliers.
pub fn bootstrap_draws_multi(x: &SampleMatrix, taus: &[f64], b: usize, seed: u64) -> Result<Vec<BootstrapDraws>> {
    check_bootstrap_args(x, b)?;
    for &t in taus {
        check_tau(t)?;
    }
    let cen = center(x.matrix());
    Ok(draws_from_centered(&cen, taus, b, seed))
}

pub(crate) fn draws_from_centered(cen: &Centered, taus: &[f64], b: usize, seed: u64) -> Vec<BootstrapDraws> {
    let weights: Vec<Vec<f64>> = taus.iter().map(|&t| partial_weights(&cen.sigma_hat, t)).collect();
    multiplier_extremes(&cen.c, &weights, b, seed)
        .into_iter()
        .zip(taus)
        .map(|((lows, highs), &tau)| BootstrapDraws { b, lows, highs, tau, seed })
        .collect()
}

/// `B` draws of `max_j S~_j / sigma_j^tau` with `S~ ~ N(0, Sigma)`.
pub fn gaussian_max_draws(model: &CovarianceModel, cfg: &PartialStdConfig, b: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(gaussian_extremes(model, cfg, b, seed)?.into_iter().map(|e| e.high).collect())
}

/// Both extremes of the Gaussian counterpart, one pair per draw.
pub fn gaussian_extremes(
    model: &CovarianceModel,
    cfg: &PartialStdConfig,
    b: usize,
    seed: u64,
) -> Result<Vec<Extremes>> {
    check_tau(cfg.tau)?;
    let p = model.p();
    let sigma = match &cfg.sigma_source {
        SigmaSource::True(s) if s.len() != p => {
            return invalid(format!("sigma has length {}, model dimension is {p}", s.len()))
        }
        SigmaSource::True(s) => s.as_slice(),
        SigmaSource::Estimated => model.sigma(),
    };
    let w = partial_weights(sigma, cfg.tau);
    let root = model.sqrt()?;
    let chunks: Vec<Vec<Extremes>> = (0..b.div_ceil(DRAW_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * DRAW_CHUNK;
            let m = DRAW_CHUNK.min(b - start);
            let mut z = DMatrix::zeros(m, p);
            for r in 0..m {
                let mut rng = rng::stream(seed, tag::GAUSSIAN, (start + r) as u64);
                for j in 0..p {
                    z[(r, j)] = StandardNormal.sample(&mut rng);
                }
            }
            let s = z * root;
            (0..m).map(|r| extremes_of_row(s.row(r).iter().copied(), &w)).collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

pub(crate) fn extremes_of_row(values: impl Iterator<Item = f64>, weights: &[f64]) -> Extremes {
    let mut e = Extremes { low: f64::INFINITY, high: f64::NEG_INFINITY };
    for (v, w) in values.zip(weights) {
        let r = v * w;
        e.low = e.low.min(r);
        e.high = e.high.max(r);
    }
    e
}

/// Position of the `ceil(q B)`-th order statistic, clamped to `[1, B]`
/// (returned 0-based). A `1e-9` slack absorbs representation error in `q B`.
fn quantile_rank(len: usize, q: f64) -> usize {
    let k = (q * len as f64 - 1e-9).ceil() as usize;
    k.clamp(1, len) - 1
}

/// Empirical quantile: the `ceil(q B)`-th order statistic.
pub fn empirical_quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return invalid("quantile of an empty sample");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// As [`empirical_quantile`] for an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return invalid(format!("quantile level must lie in (0, 1), got {q}"));
    }
    if sorted.is_empty() {
        return invalid("quantile of an empty sample");
    }
    Ok(sorted[quantile_rank(sorted.len(), q)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rows(v: &[&[f64]]) -> SampleMatrix {
        SampleMatrix::from_rows(&v.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn column_stats_examples() {
        let x = rows(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]]);
        let s = column_stats(&x);
        assert_eq!(s.mean, vec![1.0, 1.0]);
        for v in s.cov_hat.iter() {
            assert_relative_eq!(*v, 2.0 / 3.0, epsilon = 1e-15);
        }

        let x = rows(&[&[1.5, -2.0, 0.25], &[-0.5, 4.0, 1.0]]);
        let s = column_stats(&x);
        let d = [2.0, -6.0, -0.75];
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(s.cov_hat[(i, j)], d[i] * d[j] / 4.0, epsilon = 1e-14);
            }
            assert_relative_eq!(s.sigma_hat[i].powi(2), s.cov_hat[(i, i)], max_relative = 1e-15);
        }

        let x = rows(&[&[0.1, 3.0], &[0.1, 3.0], &[0.1, 3.0]]);
        let s = column_stats(&x);
        assert!(s.sigma_hat.iter().all(|&v| v < 1e-15));
    }

    #[test]
    fn max_min_hand_computed() {
        let x = rows(&[&[1.0, 0.0], &[3.0, 2.0]]);
        let cfg = PartialStdConfig::true_sigma(0.7, vec![1.0, 1.0]);
        let e = max_min_stat(&x, &[0.0, 0.0], &cfg).unwrap();
        assert_relative_eq!(e.high, 2.0 * 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(e.low, 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn tau_zero_is_unstandardized() {
        let x = rows(&[&[1.0, 5.0, -1.0], &[2.0, 3.0, 0.0], &[0.0, 1.0, 4.0]]);
        let cfg = PartialStdConfig::true_sigma(0.0, vec![0.1, 10.0, 3.0]);
        let e = max_min_stat(&x, &[0.0; 3], &cfg).unwrap();
        assert_relative_eq!(e.high, 3f64.sqrt() * 3.0, epsilon = 1e-14);
        assert_relative_eq!(e.low, 3f64.sqrt() * 1.0, epsilon = 1e-14);
    }

    #[test]
    fn single_coordinate_low_equals_high() {
        let x = rows(&[&[1.0], &[2.0], &[4.0], &[-1.0]]);
        let cfg = PartialStdConfig::true_sigma(0.5, vec![4.0]);
        let e = max_min_stat(&x, &[0.5], &cfg).unwrap();
        assert_eq!(e.low, e.high);
        assert_relative_eq!(e.high, 2.0 * (1.5 - 0.5) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_scale_conventions() {
        let x = rows(&[&[1.0, 2.0], &[3.0, 2.0]]);
        let cfg = PartialStdConfig::true_sigma(1.0, vec![0.0, 0.0]);
        assert!(matches!(max_min_stat(&x, &[0.0, 0.0], &cfg), Err(Error::Degenerate(_))));
        let cfg = PartialStdConfig::true_sigma(1.0, vec![1.0, 0.0]);
        let e = max_min_stat(&x, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(e.low, 0.0);
        assert!(max_min_stat(&x, &[0.0], &cfg).is_err());
        assert!(max_min_stat(&x, &[0.0, 0.0], &PartialStdConfig::estimated(1.5)).is_err());
    }

    #[test]
    fn constant_columns_give_zero_draws() {
        let x = rows(&[&[0.1, 7.0], &[0.1, 7.0], &[0.1, 7.0], &[0.1, 7.0]]);
        for tau in [0.0, 0.5, 1.0] {
            let d = bootstrap_draws(&x, tau, 100, 4).unwrap();
            assert!(d.lows.iter().chain(&d.highs).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bootstrap_determinism_and_shape() {
        let x = rows(&[&[1.0, 0.2], &[0.3, 2.0], &[-1.0, 0.7], &[0.0, 0.1], &[2.5, -0.4]]);
        let a = bootstrap_draws(&x, 0.6, 150, 9).unwrap();
        let b = bootstrap_draws(&x, 0.6, 150, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lows.len(), 150);
        assert!(a.lows.iter().zip(&a.highs).all(|(l, h)| l <= h));
        let c = bootstrap_draws(&x, 0.6, 150, 10).unwrap();
        assert_ne!(a.highs, c.highs);
        // prefix stability: replicate b does not depend on B
        let short = bootstrap_draws(&x, 0.6, 70, 9).unwrap();
        assert_eq!(&a.highs[..70], &short.highs[..]);
        assert!(bootstrap_draws(&x, 0.6, 0, 9).is_err());
        assert!(bootstrap_draws(&rows(&[&[1.0]]), 0.6, 5, 9).is_err());
    }

    #[test]
    fn multi_tau_matches_single() {
        let x = rows(&[&[1.0, 0.2, 3.0], &[0.3, 2.0, 1.0], &[-1.0, 0.7, 2.0], &[0.0, 0.1, 0.0]]);
        let multi = bootstrap_draws_multi(&x, &[0.0, 0.4, 1.0], 90, 2).unwrap();
        for d in &multi {
            assert_eq!(*d, bootstrap_draws(&x, d.tau, 90, 2).unwrap());
        }
    }

    #[test]
    fn quantile_examples() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&s, 0.5).unwrap(), 50.0);
        assert_eq!(empirical_quantile(&s, 0.999).unwrap(), 100.0);
        assert_eq!(empirical_quantile(&s, 0.001).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&s, 0.95).unwrap(), 95.0);
        assert_eq!(empirical_quantile(&[7.0], 0.3).unwrap(), 7.0);
        assert!(empirical_quantile(&s, 1.0).is_err());
        assert!(empirical_quantile(&s, 0.0).is_err());
        assert!(empirical_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn draws_csv_layout() {
        let d = BootstrapDraws { b: 2, lows: vec![-1.0, -0.5], highs: vec![1.0, 2.0], tau: 0.5, seed: 3 };
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("b,L_star,M_star\n1,"));
        assert!(d.sidecar_json().unwrap().contains("\"seed\": 3"));
    }
}
