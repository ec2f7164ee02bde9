//! Simultaneous confidence intervals from bootstrap quantiles, the
//! width-minimizing choice of `tau`, and the one-sample mean test.

use crate::error::{invalid, Result};
use crate::maxstat::{self, check_tau, degenerate_mask, quantile_sorted, BootstrapDraws, Centered};
use crate::model::SampleMatrix;
use crate::report::fmt_f64;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Bootstrap size used when none is given.
pub const DEFAULT_B: usize = 1000;

/// `{0, 0.1, ..., 1}`.
pub fn default_tau_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Intervals `[Xbar_j - q_hi s_j / sqrt n, Xbar_j - q_lo s_j / sqrt n]` with
/// `s_j = sigmahat_j^tau` (zero for degenerate coordinates).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SciSet {
    /// 0-based coordinate of each interval.
    pub coords: Vec<usize>,
    pub intervals: Vec<Interval>,
    pub mean: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub n: usize,
    pub tau: f64,
    pub rho: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub b: usize,
    pub seed: u64,
    /// `B < 20 / rho`: too few draws for a reliable tail quantile.
    pub low_b_warning: bool,
    /// No coordinates to cover.
    pub empty: bool,
}

#[derive(Serialize)]
struct SciSummary<'a> {
    tau: f64,
    rho: f64,
    b: usize,
    seed: u64,
    q_lo: f64,
    q_hi: f64,
    n: usize,
    p: usize,
    mean_width: f64,
    low_b_warning: bool,
    empty: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<&'a serde_json::Value>,
}

impl SciSet {
    /// Builds the intervals for coordinates `coords` from a set of draws.
    pub fn from_draws(
        coords: Vec<usize>,
        mean: Vec<f64>,
        sigma_hat: Vec<f64>,
        n: usize,
        draws: &BootstrapDraws,
        rho: f64,
    ) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return invalid(format!("significance level must lie in (0, 1), got {rho}"));
        }
        if mean.len() != coords.len() || sigma_hat.len() != coords.len() {
            return invalid("coordinate, mean and scale vectors differ in length");
        }
        let mut lows = draws.lows.clone();
        let mut highs = draws.highs.clone();
        lows.sort_by(f64::total_cmp);
        highs.sort_by(f64::total_cmp);
        let q_lo = quantile_sorted(&lows, rho / 2.0)?;
        let q_hi = quantile_sorted(&highs, 1.0 - rho / 2.0)?;
        let root_n = (n as f64).sqrt();
        let scales = interval_scales(&sigma_hat, draws.tau);
        let intervals = mean
            .iter()
            .zip(&scales)
            .map(|(&m, &s)| Interval { lo: m - q_hi * s / root_n, hi: m - q_lo * s / root_n })
            .collect();
        Ok(Self {
            empty: coords.is_empty(),
            coords,
            intervals,
            mean,
            sigma_hat,
            n,
            tau: draws.tau,
            rho,
            q_lo,
            q_hi,
            b: draws.b,
            seed: draws.seed,
            low_b_warning: (draws.b as f64) < 20.0 / rho,
        })
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Nominal width `(q_hi - q_lo) s_j / sqrt n` of interval `k`.
    pub fn width(&self, k: usize) -> f64 {
        let s = interval_scales(&self.sigma_hat, self.tau)[k];
        (self.q_hi - self.q_lo) * s / (self.n as f64).sqrt()
    }

    /// Average interval width; 0 for an empty set.
    pub fn mean_width(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let factor = (self.q_hi - self.q_lo) / (self.n as f64).sqrt();
        let total: f64 = interval_scales(&self.sigma_hat, self.tau).iter().sum();
        factor * total / self.len() as f64
    }

    /// Positions (into `coords`) whose interval misses `target[coords[k]]`.
    pub fn misses(&self, target: &[f64]) -> Vec<usize> {
        self.intervals
            .iter()
            .zip(&self.coords)
            .enumerate()
            .filter(|(_, (iv, &j))| !iv.contains(target[j]))
            .map(|(k, _)| k)
            .collect()
    }

    /// True when every interval contains its target.
    pub fn covers(&self, target: &[f64]) -> bool {
        self.intervals.iter().zip(&self.coords).all(|(iv, &j)| iv.contains(target[j]))
    }

    /// CSV with columns `j, lo, hi, sigma_hat, width` (1-based `j`).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["j", "lo", "hi", "sigma_hat", "width"])?;
        for (k, (iv, &j)) in self.intervals.iter().zip(&self.coords).enumerate() {
            out.write_record([
                (j + 1).to_string(),
                fmt_f64(iv.lo),
                fmt_f64(iv.hi),
                fmt_f64(self.sigma_hat[k]),
                fmt_f64(self.width(k)),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// JSON summary of the quantiles and run parameters.
    pub fn summary_json(&self, extra: Option<&serde_json::Value>) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(SciSummary {
            tau: self.tau,
            rho: self.rho,
            b: self.b,
            seed: self.seed,
            q_lo: self.q_lo,
            q_hi: self.q_hi,
            n: self.n,
            p: self.len(),
            mean_width: self.mean_width(),
            low_b_warning: self.low_b_warning,
            empty: self.empty,
            extra,
        })?)
    }
}

fn interval_scales(sigma_hat: &[f64], tau: f64) -> Vec<f64> {
    degenerate_mask(sigma_hat)
        .into_iter()
        .zip(sigma_hat)
        .map(|(dead, &s)| if dead { 0.0 } else { s.powf(tau) })
        .collect()
}

fn check_sci_args(x: &SampleMatrix, rho: f64) -> Result<()> {
    if x.n() < 2 {
        return invalid("confidence intervals need n >= 2");
    }
    if !(rho > 0.0 && rho < 1.0) {
        return invalid(format!("significance level must lie in (0, 1), got {rho}"));
    }
    Ok(())
}

/// Bootstrap SCI for all coordinates of `x` at a fixed `tau`.
pub fn build_sci(x: &SampleMatrix, tau: f64, b: usize, rho: f64, seed: u64) -> Result<SciSet> {
    Ok(select_tau(x, &[tau], b, rho, seed)?.into_sci())
}

/// One SCI per candidate `tau` and the index of the narrowest on average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSelection {
    pub candidates: Vec<SciSet>,
    pub best: usize,
}

impl TauSelection {
    pub fn tau_star(&self) -> f64 {
        self.candidates[self.best].tau
    }

    pub fn sci(&self) -> &SciSet {
        &self.candidates[self.best]
    }

    pub fn into_sci(mut self) -> SciSet {
        self.candidates.swap_remove(self.best)
    }

    pub fn candidate(&self, tau: f64) -> Option<&SciSet> {
        self.candidates.iter().find(|s| s.tau == tau)
    }

    pub(crate) fn from_candidates(candidates: Vec<SciSet>) -> Self {
        let mut best = 0;
        for (k, c) in candidates.iter().enumerate() {
            let (w, bw) = (c.mean_width(), candidates[best].mean_width());
            if w < bw || (w == bw && c.tau < candidates[best].tau) {
                best = k;
            }
        }
        Self { candidates, best }
    }
}

/// Width-minimizing `tau` over `grid`. Every candidate uses the same
/// multiplier draws, so `build_sci(x, t, b, rho, seed)` equals the candidate
/// for `t`.
pub fn select_tau(x: &SampleMatrix, grid: &[f64], b: usize, rho: f64, seed: u64) -> Result<TauSelection> {
    check_sci_args(x, rho)?;
    let cen = maxstat::center(x.matrix());
    select_from_centered(&cen, (0..x.p()).collect(), x.n(), grid, b, rho, seed)
}

pub(crate) fn select_from_centered(
    cen: &Centered,
    coords: Vec<usize>,
    n: usize,
    grid: &[f64],
    b: usize,
    rho: f64,
    seed: u64,
) -> Result<TauSelection> {
    if grid.is_empty() {
        return invalid("tau grid is empty");
    }
    if b == 0 {
        return invalid("bootstrap needs B >= 1");
    }
    for &t in grid {
        check_tau(t)?;
    }
    let draws = maxstat::draws_from_centered(cen, grid, b, seed);
    let candidates = draws
        .iter()
        .map(|d| SciSet::from_draws(coords.clone(), cen.mean.clone(), cen.sigma_hat.clone(), n, d, rho))
        .collect::<Result<Vec<_>>>()?;
    Ok(TauSelection::from_candidates(candidates))
}

/// Fixed exponent or width-minimizing choice over a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauRule {
    Fixed { tau: f64 },
    Select { grid: Vec<f64> },
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::Select { grid: default_tau_grid() }
    }
}

impl TauRule {
    pub fn grid(&self) -> Vec<f64> {
        match self {
            TauRule::Fixed { tau } => vec![*tau],
            TauRule::Select { grid } => grid.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanTest {
    pub reject: bool,
    /// 0-based coordinates whose interval misses `mu0`.
    pub offending: Vec<usize>,
    pub sci: SciSet,
}

impl MeanTest {
    pub fn from_sci(sci: SciSet, mu0: &[f64]) -> Self {
        let offending: Vec<usize> = sci.misses(mu0).into_iter().map(|k| sci.coords[k]).collect();
        Self { reject: !offending.is_empty(), offending, sci }
    }
}

/// Rejects `mu = mu0` when some `mu0_j` falls outside its interval.
pub fn test_mean(x: &SampleMatrix, mu0: &[f64], tau: f64, b: usize, rho: f64, seed: u64) -> Result<MeanTest> {
    if mu0.len() != x.p() {
        return invalid(format!("mu0 has length {}, data have {} columns", mu0.len(), x.p()));
    }
    Ok(MeanTest::from_sci(build_sci(x, tau, b, rho, seed)?, mu0))
}
