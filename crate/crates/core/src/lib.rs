//! Partially standardized max statistics and their Gaussian multiplier
//! bootstrap, with simultaneous confidence intervals that exploit variance
//! decay, a functional-data mean test, multinomial proportion intervals and a
//! Monte Carlo harness for Kolmogorov-distance convergence rates.

pub mod error;
pub mod fda;
mod linalg;
pub mod maxstat;
pub mod model;
pub mod multinomial;
pub mod ratelab;
pub mod report;
pub mod rng;
pub mod sci;
pub mod special;

pub use error::{Error, Result};
pub use linalg::{min_eigenvalue, ols_line, psd_tolerance, sym_eigenvalues};
