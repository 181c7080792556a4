//! Common quadratic Lyapunov functions for 2×2 switched families.
//!
//! A matrix `P = Pᵀ ≻ 0` certifies the family `{A_i}` when every
//! `A_iᵀP + P A_i` is negative definite; `V = xᵀPx` then decreases along every
//! mode and the switched system is stable for arbitrary switching.

use std::fmt::Write as _;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{is_hurwitz, is_symmetric, sym_eigenvalues};

/// Strictness floor used by the search projections.
pub const SEARCH_EPS: f64 = 1e-3;

pub const PAPER_P: [[f64; 2]; 2] = [[8.16, 2.22], [2.22, 3.90]];

pub fn paper_p() -> Matrix2<f64> {
    Matrix2::new(PAPER_P[0][0], PAPER_P[0][1], PAPER_P[1][0], PAPER_P[1][1])
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LyapunovError {
    #[error("A is not Hurwitz")]
    NotHurwitz,
    #[error("Q is not symmetric positive definite")]
    QNotPositiveDefinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
pub enum CqlfRejection {
    #[error("P is not symmetric")]
    NotSymmetric,
    #[error("P is not positive definite (min eigenvalue {min_eigenvalue:.6e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("A_{}ᵀP + P A_{} is not negative definite (max eigenvalue {eigenvalue:.6e})", .subsystem + 1, .subsystem + 1)]
    NotNegativeDefinite { subsystem: usize, eigenvalue: f64 },
    #[error("empty subsystem family")]
    Empty,
}

/// `AᵀP + PA`.
pub fn lyapunov_sum(a: &Matrix2<f64>, p: &Matrix2<f64>) -> Matrix2<f64> {
    a.transpose() * p + p * a
}

/// Solves `AᵀP + PA = −Q` for symmetric `P` through the 3×3 linear system in
/// `(p11, p12, p22)`.
pub fn solve_lyapunov(a: &Matrix2<f64>, q: &Matrix2<f64>) -> Result<Matrix2<f64>, LyapunovError> {
    if !is_hurwitz(a) {
        return Err(LyapunovError::NotHurwitz);
    }
    let qs = (q + q.transpose()) * 0.5;
    if !is_symmetric(q, 1e-12) || sym_eigenvalues(&qs).0 <= 0.0 {
        return Err(LyapunovError::QNotPositiveDefinite);
    }
    let p = solve_lyapunov_unchecked(a, &qs).ok_or(LyapunovError::NotHurwitz)?;
    if sym_eigenvalues(&p).0 <= 0.0 {
        return Err(LyapunovError::NotHurwitz);
    }
    Ok(p)
}

/// Linear solve only; no definiteness checks on inputs or output.
fn solve_lyapunov_unchecked(a: &Matrix2<f64>, q: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let (a11, a12, a21, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    #[rustfmt::skip]
    let m = Matrix3::new(
        2.0 * a11, 2.0 * a21, 0.0,
        a12,       a11 + a22, a21,
        0.0,       2.0 * a12, 2.0 * a22,
    );
    let rhs = -Vector3::new(q[(0, 0)], q[(0, 1)], q[(1, 1)]);
    let x = m.lu().solve(&rhs)?;
    x.iter()
        .all(|v| v.is_finite())
        .then(|| Matrix2::new(x[0], x[1], x[1], x[2]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqlfCertificate {
    pub p: Matrix2<f64>,
    pub p_min_eigenvalue: f64,
    /// Largest eigenvalue of `A_iᵀP + P A_i`, per subsystem.
    pub margins: Vec<f64>,
    pub lyapunov_sums: Vec<Matrix2<f64>>,
    /// Design `Q_mi` the certificate was requested with.
    pub q_matrices: Vec<Matrix2<f64>>,
}

impl CqlfCertificate {
    pub fn with_design_q(mut self, q: Vec<Matrix2<f64>>) -> Self {
        self.q_matrices = q;
        self
    }

    /// Structured text block (TOML) for run reports.
    pub fn to_report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[cqlf_certificate]");
        let _ = writeln!(s, "p = {}", fmt_matrix(&self.p));
        let _ = writeln!(s, "p_min_eigenvalue = {:e}", self.p_min_eigenvalue);
        let _ = writeln!(s, "subsystems = {}", self.margins.len());
        for (i, (margin, sum)) in self.margins.iter().zip(&self.lyapunov_sums).enumerate() {
            let _ = writeln!(s, "\n[[cqlf_certificate.subsystem]]");
            let _ = writeln!(s, "index = {}", i + 1);
            let _ = writeln!(s, "margin = {margin:e}");
            let _ = writeln!(s, "lyapunov_sum = {}", fmt_matrix(sum));
            if let Some(q) = self.q_matrices.get(i) {
                let _ = writeln!(s, "q = {}", fmt_matrix(q));
            }
        }
        s
    }
}

fn fmt_matrix(m: &Matrix2<f64>) -> String {
    format!(
        "[[{:?}, {:?}], [{:?}, {:?}]]",
        m[(0, 0)],
        m[(0, 1)],
        m[(1, 0)],
        m[(1, 1)]
    )
}

/// Checks `P ≻ 0` and `A_iᵀP + P A_i ≺ 0` for every subsystem.
pub fn verify_cqlf(
    subsystems: &[Matrix2<f64>],
    p: &Matrix2<f64>,
) -> Result<CqlfCertificate, CqlfRejection> {
    if subsystems.is_empty() {
        return Err(CqlfRejection::Empty);
    }
    if !is_symmetric(p, 1e-12) {
        return Err(CqlfRejection::NotSymmetric);
    }
    let (p_min, _) = sym_eigenvalues(p);
    if !(p_min > 0.0) {
        return Err(CqlfRejection::NotPositiveDefinite {
            min_eigenvalue: p_min,
        });
    }
    let mut margins = Vec::with_capacity(subsystems.len());
    let mut sums = Vec::with_capacity(subsystems.len());
    for (i, a) in subsystems.iter().enumerate() {
        let sum = lyapunov_sum(a, p);
        let (_, hi) = sym_eigenvalues(&sum);
        if !(hi < 0.0) {
            return Err(CqlfRejection::NotNegativeDefinite {
                subsystem: i,
                eigenvalue: hi,
            });
        }
        margins.push(hi);
        sums.push(sum);
    }
    Ok(CqlfCertificate {
        p: *p,
        p_min_eigenvalue: p_min,
        margins,
        lyapunov_sums: sums,
        q_matrices: vec![Matrix2::identity(); subsystems.len()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[error("no CQLF found after {iterations} iterations (best worst-case margin {best_margin:.6e})")]
pub struct InfeasibleReport {
    pub iterations: usize,
    /// Best `max_i λ_max(A_iᵀP + P A_i)` seen, with `tr P = 1`.
    pub best_margin: f64,
    pub best_p: Matrix2<f64>,
    pub best_margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub certificate: CqlfCertificate,
    pub iterations: usize,
}

/// Alternating projections onto `{P : A_iᵀP + P A_i ⪯ −εI}` and `{P ⪰ εI}`.
///
/// Each subsystem projection clips the eigenvalues of `S = A_iᵀP + P A_i` to
/// at most `−ε` and maps the clipped `S` back through the Lyapunov operator.
/// `P` is renormalized to unit trace after each sweep, so `ε` is relative.
pub fn search_cqlf(
    subsystems: &[Matrix2<f64>],
    max_iter: usize,
    eps: f64,
) -> Result<SearchOutcome, InfeasibleReport> {
    let infeasible = |iterations, p: Matrix2<f64>| {
        let margins: Vec<f64> = subsystems
            .iter()
            .map(|a| sym_eigenvalues(&lyapunov_sum(a, &p)).1)
            .collect();
        InfeasibleReport {
            iterations,
            best_margin: margins.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            best_p: p,
            best_margins: margins,
        }
    };
    if subsystems.is_empty() || subsystems.iter().any(|a| !is_hurwitz(a)) {
        return Err(infeasible(0, Matrix2::identity() * 0.5));
    }

    let mut p = Matrix2::zeros();
    for a in subsystems {
        p += solve_lyapunov(a, &Matrix2::identity()).expect("Hurwitz checked");
    }
    p = normalize(&p);

    let worst = |p: &Matrix2<f64>| {
        subsystems
            .iter()
            .map(|a| sym_eigenvalues(&lyapunov_sum(a, p)).1)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut best = (worst(&p), p);

    for iteration in 1..=max_iter {
        if let Ok(cert) = verify_cqlf(subsystems, &p) {
            return Ok(SearchOutcome {
                certificate: cert,
                iterations: iteration,
            });
        }
        for a in subsystems {
            let s = lyapunov_sum(a, &p);
            let clipped = clip_eigenvalues(&s, f64::NEG_INFINITY, -eps);
            if let Some(next) = solve_lyapunov_unchecked(a, &(-clipped)) {
                p = (next + next.transpose()) * 0.5;
            }
        }
        p = normalize(&clip_eigenvalues(&p, eps, f64::INFINITY));
        let w = worst(&p);
        if w < best.0 && sym_eigenvalues(&p).0 > 0.0 {
            best = (w, p);
        }
    }
    Err(infeasible(max_iter, refine_worst_margin(&worst, best.1)))
}

/// Minimizes the worst-case margin over the trace-one SPD slice
/// `[[t, s], [s, 1 − t]]`. The objective is convex in `P`, so nested ternary
/// searches over `t` and then `s` converge to the slice optimum.
fn refine_worst_margin(worst: &dyn Fn(&Matrix2<f64>) -> f64, start: Matrix2<f64>) -> Matrix2<f64> {
    let at = |t: f64, s: f64| Matrix2::new(t, s, s, 1.0 - t);
    let best_s = |t: f64| -> (f64, f64) {
        let r = (t * (1.0 - t)).sqrt();
        let s = ternary_min(-r, r, |s| worst(&at(t, s)));
        (worst(&at(t, s)), s)
    };
    let t = ternary_min(0.0, 1.0, |t| best_s(t).0);
    let (w, s) = best_s(t);
    if w < worst(&start) {
        at(t, s)
    } else {
        start
    }
}

fn ternary_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..100 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

fn normalize(p: &Matrix2<f64>) -> Matrix2<f64> {
    let tr = p.trace();
    if tr.abs() > 0.0 && tr.is_finite() {
        p / tr
    } else {
        Matrix2::identity() * 0.5
    }
}

/// Symmetric eigendecomposition with eigenvalues clamped to `[lo, hi]`.
fn clip_eigenvalues(m: &Matrix2<f64>, lo: f64, hi: f64) -> Matrix2<f64> {
    let (l1, l2) = sym_eigenvalues(m);
    let (a, b) = (m[(0, 0)], m[(0, 1)]);
    // eigenvector for l2 (the larger eigenvalue)
    let v = if b.abs() > 1e-300 {
        Vector2::new(b, l2 - a).normalize()
    } else if a >= m[(1, 1)] {
        Vector2::new(1.0, 0.0)
    } else {
        Vector2::new(0.0, 1.0)
    };
    let w = Vector2::new(-v[1], v[0]);
    let (c1, c2) = (l1.clamp(lo, hi), l2.clamp(lo, hi));
    w * w.transpose() * c1 + v * v.transpose() * c2
}
