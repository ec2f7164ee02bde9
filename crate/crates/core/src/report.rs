//! Small helpers shared by the experiment reports.

use serde::{Deserialize, Serialize};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A proportion with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub rate: f64,
    pub se: f64,
    pub successes: usize,
    pub trials: usize,
}

impl Rate {
    pub fn new(successes: usize, trials: usize) -> Self {
        let rate = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        let se = if trials == 0 { 0.0 } else { (rate * (1.0 - rate) / trials as f64).sqrt() };
        Self { rate, se, successes, trials }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauCount {
    pub tau: f64,
    pub count: usize,
}

/// Counts of each grid value among `selected` (grid order preserved).
pub fn tau_histogram(grid: &[f64], selected: impl IntoIterator<Item = f64>) -> Vec<TauCount> {
    let mut out: Vec<TauCount> = grid.iter().map(|&tau| TauCount { tau, count: 0 }).collect();
    for t in selected {
        if let Some(slot) = out.iter_mut().find(|c| c.tau == t) {
            slot.count += 1;
        }
    }
    out
}
