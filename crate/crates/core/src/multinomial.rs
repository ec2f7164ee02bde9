//! Multinomial cell proportions: Zipf-type models, sampling, cell filtering,
//! the bootstrap restricted to well-observed cells and the coverage
//! experiment.
//!
//! The bootstrap works in count form. Observations are placed in canonical
//! cell order (all draws in cell 0, then cell 1, ...), which is the only
//! order the tallies determine, and only the `n x |J|` centered block of the
//! selected cells is built. Presenting the explicit indicator matrix in the
//! same row order to [`crate::maxstat::bootstrap_draws`] gives identical
//! draws.

use crate::error::{invalid, Result};
use crate::linalg;
use crate::maxstat::{self, BootstrapDraws, Centered};
use crate::model::{validate_probabilities, SampleMatrix};
use crate::report::{fmt_f64, tau_histogram, Rate, TauCount};
use crate::rng::{self, derive_seed, tag};
use crate::sci::{self, SciSet, TauRule, TauSelection};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Serialized form of a multinomial model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MultinomialSpec {
    Zipf { p: usize, eta: f64 },
    Explicit { pi: Vec<f64> },
}

/// Cell probabilities `pi_1, ..., pi_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MultinomialSpec", into = "MultinomialSpec")]
pub struct MultinomialModel {
    spec: MultinomialSpec,
    pi: Vec<f64>,
}

impl TryFrom<MultinomialSpec> for MultinomialModel {
    type Error = crate::Error;

    fn try_from(spec: MultinomialSpec) -> Result<Self> {
        let pi = match &spec {
            MultinomialSpec::Zipf { p, eta } => zipf_probabilities(*p, *eta)?,
            MultinomialSpec::Explicit { pi } => {
                validate_probabilities(pi)?;
                pi.clone()
            }
        };
        Ok(Self { spec, pi })
    }
}

impl From<MultinomialModel> for MultinomialSpec {
    fn from(m: MultinomialModel) -> Self {
        m.spec
    }
}

fn zipf_probabilities(p: usize, eta: f64) -> Result<Vec<f64>> {
    if p == 0 {
        return invalid("multinomial model needs p >= 1");
    }
    if !(eta >= 1.0) || !eta.is_finite() {
        return invalid(format!("Zipf exponent must be >= 1, got {eta}"));
    }
    let raw: Vec<f64> = (1..=p).map(|j| (j as f64).powf(-eta)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// `pi_j` proportional to `j^{-eta}`.
pub fn zipf_model(p: usize, eta: f64) -> Result<MultinomialModel> {
    MultinomialModel::try_from(MultinomialSpec::Zipf { p, eta })
}

impl MultinomialModel {
    pub fn explicit(pi: Vec<f64>) -> Result<Self> {
        Self::try_from(MultinomialSpec::Explicit { pi })
    }

    pub fn p(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// `sigma_j = sqrt(pi_j (1 - pi_j))`.
    pub fn sigma(&self) -> Vec<f64> {
        self.pi.iter().map(|&q| (q * (1.0 - q)).sqrt()).collect()
    }

    /// Reads one probability per row under a `pi` header.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut pi = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = rec.get(0).unwrap_or("").trim();
            match field.parse::<f64>() {
                Ok(v) => pi.push(v),
                Err(_) => return invalid(format!("bad probability {field:?}")),
            }
        }
        Self::explicit(pi)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["pi"])?;
        for &q in &self.pi {
            out.write_record([fmt_f64(q)])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Cell tallies of `n` trials.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub counts: Vec<u64>,
    pub n: u64,
}

impl CellCounts {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return invalid("counts are empty");
        }
        let n = counts.iter().sum();
        Ok(Self { counts, n })
    }

    pub fn p(&self) -> usize {
        self.counts.len()
    }

    pub fn proportions(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    /// Indicator rows in canonical cell order, restricted to `cells`.
    pub fn indicator_matrix(&self, cells: &[usize]) -> Result<SampleMatrix> {
        let mut x = DMatrix::zeros(self.n as usize, cells.len());
        let mut row = 0;
        for (cell, &c) in self.counts.iter().enumerate() {
            for _ in 0..c {
                if let Some(k) = cells.iter().position(|&j| j == cell) {
                    x[(row, k)] = 1.0;
                }
                row += 1;
            }
        }
        SampleMatrix::new(x)
    }
}

/// `n` categorical draws by inverse CDF, one uniform per trial from stream
/// `(seed, COUNTS, 0)`.
pub fn sample_counts(model: &MultinomialModel, n: usize, seed: u64) -> Result<CellCounts> {
    if n == 0 {
        return invalid("need at least one trial");
    }
    let mut cum = Vec::with_capacity(model.p());
    let mut acc = 0.0;
    for &q in model.pi() {
        acc += q;
        cum.push(acc);
    }
    // rounding can leave the total a hair below 1; send that mass to the last live cell
    let last_live = model.pi().iter().rposition(|&q| q > 0.0).expect("validated probabilities");
    let mut counts = vec![0u64; model.p()];
    let mut rng = rng::stream(seed, tag::COUNTS, 0);
    for _ in 0..n {
        let u: f64 = rng.random();
        let j = cum.partition_point(|&c| c <= u).min(last_live);
        counts[j] += 1;
    }
    CellCounts::new(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CellFilterRule {
    /// `pihat_j >= sqrt(log n / n)`.
    Theoretical,
    /// `count_j >= threshold`.
    MinCount { threshold: u64 },
}

impl Default for CellFilterRule {
    fn default() -> Self {
        CellFilterRule::MinCount { threshold: 5 }
    }
}

/// Cells kept by `rule`, ascending; possibly empty.
pub fn select_cells(counts: &CellCounts, rule: CellFilterRule) -> Result<Vec<usize>> {
    if counts.n < 2 {
        return invalid("cell selection needs n >= 2");
    }
    Ok(match rule {
        CellFilterRule::Theoretical => {
            let n = counts.n as f64;
            let cut = (n.ln() / n).sqrt();
            (0..counts.p()).filter(|&j| counts.counts[j] as f64 / n >= cut).collect()
        }
        CellFilterRule::MinCount { threshold } => {
            if threshold == 0 {
                return invalid("min-count threshold must be >= 1");
            }
            (0..counts.p()).filter(|&j| counts.counts[j] >= threshold).collect()
        }
    })
}

/// Centered indicator block of `cells` in canonical cell order.
fn centered_counts(counts: &CellCounts, cells: &[usize]) -> Centered {
    let n = counts.n as usize;
    let mean: Vec<f64> = cells.iter().map(|&j| counts.counts[j] as f64 / n as f64).collect();
    let mut c = DMatrix::zeros(n, cells.len());
    for (k, &m) in mean.iter().enumerate() {
        c.column_mut(k).fill(-m);
    }
    let mut row = 0;
    for (cell, &cnt) in counts.counts.iter().enumerate() {
        let cnt = cnt as usize;
        if let Some(k) = cells.iter().position(|&j| j == cell) {
            let v = 1.0 - mean[k];
            for i in row..row + cnt {
                c[(i, k)] = v;
            }
        }
        row += cnt;
    }
    let sigma_hat = maxstat::sigma_from_centered(&c);
    Centered { mean, sigma_hat, c }
}

fn check_counts(counts: &CellCounts) -> Result<()> {
    if counts.n < 2 {
        return invalid("bootstrap needs n >= 2");
    }
    Ok(())
}

/// Count-form multiplier draws over the selected cells.
pub fn restricted_draws(
    counts: &CellCounts,
    rule: CellFilterRule,
    taus: &[f64],
    b: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<BootstrapDraws>)> {
    check_counts(counts)?;
    if b == 0 {
        return invalid("bootstrap needs B >= 1");
    }
    let cells = select_cells(counts, rule)?;
    let cen = centered_counts(counts, &cells);
    Ok((cells, maxstat::draws_from_centered(&cen, taus, b, seed)))
}

/// Simultaneous intervals for the proportions of the selected cells.
/// An empty selection yields an empty set flagged `empty`.
pub fn restricted_bootstrap_sci(
    counts: &CellCounts,
    rule: CellFilterRule,
    tau: f64,
    b: usize,
    rho: f64,
    seed: u64,
) -> Result<SciSet> {
    Ok(restricted_select(counts, rule, &[tau], b, rho, seed)?.into_sci())
}

/// Width-minimizing `tau` for the restricted intervals.
pub fn restricted_select(
    counts: &CellCounts,
    rule: CellFilterRule,
    grid: &[f64],
    b: usize,
    rho: f64,
    seed: u64,
) -> Result<TauSelection> {
    check_counts(counts)?;
    let cells = select_cells(counts, rule)?;
    let cen = centered_counts(counts, &cells);
    sci::select_from_centered(&cen, cells, counts.n as usize, grid, b, rho, seed)
}

/// Gershgorin bound `pi_(k) (1 - sum_{j<=k} pi_(j))` on the smallest
/// eigenvalue of the covariance of the `k` most probable cells.
pub fn min_eig_lower_bound(model: &MultinomialModel, k: usize) -> Result<f64> {
    if k == 0 || k >= model.p() {
        return invalid(format!("need 1 <= k < p, got k={k}, p={}", model.p()));
    }
    let sorted = sorted_desc(model.pi());
    let head: f64 = sorted[..k].iter().sum();
    Ok(sorted[k - 1] * (1.0 - head))
}

fn sorted_desc(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `diag(pi) - pi pi^T` over the `k` most probable cells.
pub fn top_cell_covariance(model: &MultinomialModel, k: usize) -> DMatrix<f64> {
    let s = sorted_desc(model.pi());
    DMatrix::from_fn(k, k, |i, j| if i == j { s[i] * (1.0 - s[i]) } else { -s[i] * s[j] })
}

/// Smallest eigenvalue of [`top_cell_covariance`].
pub fn top_cell_min_eigenvalue(model: &MultinomialModel, k: usize) -> f64 {
    linalg::min_eigenvalue(&top_cell_covariance(model, k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultinomialExperimentConfig {
    pub model: MultinomialModel,
    pub n: usize,
    pub b: usize,
    pub rho: f64,
    pub tau: TauRule,
    pub rule: CellFilterRule,
    pub n_sims: usize,
    pub seed: u64,
}

impl Default for MultinomialExperimentConfig {
    fn default() -> Self {
        Self {
            model: zipf_model(1000, 1.0).expect("valid default model"),
            n: 500,
            b: sci::DEFAULT_B,
            rho: 0.05,
            tau: TauRule::default(),
            rule: CellFilterRule::default(),
            n_sims: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultinomialSimRecord {
    pub sim_id: usize,
    pub covered: bool,
    pub selected_cells: usize,
    pub selected_tau: f64,
    /// Fraction of the selected cells whose interval covers (1 when none).
    pub cellwise_coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauCoverage {
    pub tau: f64,
    pub coverage: Rate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellCoverage {
    /// 0-based cell index.
    pub cell: usize,
    pub selected: usize,
    pub covered: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeCount {
    pub size: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultinomialReport {
    pub config: MultinomialExperimentConfig,
    /// All selected cells covered at once.
    pub coverage: Rate,
    /// Average over simulations of the per-cell covered fraction.
    pub mean_cellwise_coverage: f64,
    pub per_tau: Vec<TauCoverage>,
    pub selected_tau_histogram: Vec<TauCount>,
    pub mean_selected_cells: f64,
    pub selected_size_distribution: Vec<SizeCount>,
    /// Cells selected in at least one simulation.
    pub per_cell: Vec<CellCoverage>,
    pub empty_selections: usize,
    pub per_sim: Vec<MultinomialSimRecord>,
}

impl MultinomialReport {
    /// CSV `sim_id, covered, selected_cells, selected_tau, cellwise_coverage`.
    pub fn write_sims_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sim_id", "covered", "selected_cells", "selected_tau", "cellwise_coverage"])?;
        for r in &self.per_sim {
            out.write_record([
                r.sim_id.to_string(),
                u8::from(r.covered).to_string(),
                r.selected_cells.to_string(),
                fmt_f64(r.selected_tau),
                fmt_f64(r.cellwise_coverage),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

struct SimOutcome {
    record: MultinomialSimRecord,
    per_tau: Vec<bool>,
    cells: Vec<(usize, bool)>,
}

/// Coverage of the restricted intervals over repeated samples.
pub fn run_multinomial_experiment(cfg: &MultinomialExperimentConfig) -> Result<MultinomialReport> {
    if cfg.n < 2 {
        return invalid("experiment needs n >= 2");
    }
    if cfg.n_sims == 0 {
        return invalid("experiment needs at least one simulation");
    }
    let taus = cfg.tau.grid();
    let pi = cfg.model.pi();
    let outcomes: Vec<SimOutcome> = (0..cfg.n_sims)
        .into_par_iter()
        .map(|s| {
            let sim_seed = derive_seed(cfg.seed, tag::SIMULATION, s as u64);
            let counts = sample_counts(&cfg.model, cfg.n, sim_seed)?;
            let sel = restricted_select(&counts, cfg.rule, &taus, cfg.b, cfg.rho, derive_seed(sim_seed, tag::MULTIPLIER, 0))?;
            let per_tau = sel.candidates.iter().map(|c| c.covers(pi)).collect();
            let chosen = sel.sci();
            let cells: Vec<(usize, bool)> =
                chosen.coords.iter().zip(&chosen.intervals).map(|(&j, iv)| (j, iv.contains(pi[j]))).collect();
            let hits = cells.iter().filter(|c| c.1).count();
            let record = MultinomialSimRecord {
                sim_id: s,
                covered: hits == cells.len(),
                selected_cells: cells.len(),
                selected_tau: chosen.tau,
                cellwise_coverage: if cells.is_empty() { 1.0 } else { hits as f64 / cells.len() as f64 },
            };
            Ok(SimOutcome { record, per_tau, cells })
        })
        .collect::<Result<Vec<_>>>()?;

    let sims = cfg.n_sims;
    let mut per_cell: Vec<CellCoverage> =
        (0..cfg.model.p()).map(|cell| CellCoverage { cell, selected: 0, covered: 0 }).collect();
    let mut sizes = vec![0usize; cfg.model.p() + 1];
    for o in &outcomes {
        sizes[o.cells.len()] += 1;
        for &(j, hit) in &o.cells {
            per_cell[j].selected += 1;
            per_cell[j].covered += usize::from(hit);
        }
    }
    let per_tau = taus
        .iter()
        .enumerate()
        .map(|(k, &tau)| TauCoverage {
            tau,
            coverage: Rate::new(outcomes.iter().filter(|o| o.per_tau[k]).count(), sims),
        })
        .collect();
    let per_sim: Vec<MultinomialSimRecord> = outcomes.into_iter().map(|o| o.record).collect();
    Ok(MultinomialReport {
        config: cfg.clone(),
        coverage: Rate::new(per_sim.iter().filter(|r| r.covered).count(), sims),
        mean_cellwise_coverage: per_sim.iter().map(|r| r.cellwise_coverage).sum::<f64>() / sims as f64,
        per_tau,
        selected_tau_histogram: tau_histogram(&taus, per_sim.iter().map(|r| r.selected_tau)),
        mean_selected_cells: per_sim.iter().map(|r| r.selected_cells as f64).sum::<f64>() / sims as f64,
        selected_size_distribution: sizes
            .into_iter()
            .enumerate()
            .filter(|&(_, c)| c > 0)
            .map(|(size, count)| SizeCount { size, count })
            .collect(),
        per_cell: per_cell.into_iter().filter(|c| c.selected > 0).collect(),
        empty_selections: per_sim.iter().filter(|r| r.selected_cells == 0).count(),
        per_sim,
    })
}
