use crate::error::{invalid, Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative tolerance for treating eigenvalues as zero.
pub const PSD_REL_TOL: f64 = 1e-10;

/// `1e-10 * ||S||_op` given the eigenvalues of a symmetric `S`.
pub fn psd_tolerance(eigenvalues: &DVector<f64>) -> f64 {
    PSD_REL_TOL * eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()))
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() || s.nrows() == 0 {
        return invalid("expected a nonempty square matrix");
    }
    let scale = s.amax().max(f64::MIN_POSITIVE);
    for i in 0..s.nrows() {
        for j in 0..i {
            if (s[(i, j)] - s[(j, i)]).abs() > 1e-12 * scale {
                return invalid("matrix is not symmetric");
            }
        }
    }
    Ok(())
}

pub fn sym_eigenvalues(s: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(s.clone()).eigenvalues
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(s).iter().copied().fold(f64::INFINITY, f64::min)
}

/// Symmetric PSD square root; eigenvalues within tolerance of zero are zeroed.
pub fn psd_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(s)?;
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let tol = psd_tolerance(&eig.eigenvalues);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(Error::NotPsd { min_eig: min, tol });
    }
    let roots = eig.eigenvalues.map(|l| if l <= tol { 0.0 } else { l.sqrt() });
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * roots[j]);
    let a = &scaled * q.transpose();
    Ok((&a + a.transpose()) * 0.5)
}

/// Least-squares line through `(x, y)` points; returns `(slope, intercept)`.
pub fn ols_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}
