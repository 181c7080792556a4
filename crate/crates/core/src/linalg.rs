//! Closed-form 2×2 eigenvalue helpers.

use nalgebra::Matrix2;

/// Eigenvalues `(lo, hi)` of a symmetric 2×2 matrix, from the upper triangle.
pub fn sym_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - radius, mean + radius)
}

/// Eigenvalues of a general real 2×2 matrix as `(re, im)` pairs.
pub fn eigenvalues(m: &Matrix2<f64>) -> [(f64, f64); 2] {
    let tr = m.trace();
    let det = m.determinant();
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        // avoid cancellation in the smaller-magnitude root
        let big = 0.5 * tr + r.copysign(tr);
        let small = if big != 0.0 { det / big } else { 0.5 * tr - r };
        let (lo, hi) = if big < small { (big, small) } else { (small, big) };
        [(lo, 0.0), (hi, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [(0.5 * tr, -im), (0.5 * tr, im)]
    }
}

/// Both eigenvalues strictly in the open left half-plane.
pub fn is_hurwitz(m: &Matrix2<f64>) -> bool {
    m.iter().all(|v| v.is_finite()) && m.trace() < 0.0 && m.determinant() > 0.0
}

pub fn is_symmetric(m: &Matrix2<f64>, tol: f64) -> bool {
    (m[(0, 1)] - m[(1, 0)]).abs() <= tol * (1.0 + m.abs().max())
}
