//! Cartesian feedback-linearizing PD tracker.
//!
//! `F = M_x a + C_x ẋ + G_x − F_ext` turns the arm into a unit mass `ẍ = a`,
//! and `a = ẍ_r + K_d ė + K_p e` with `e = x_r − x` drives the error to zero.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{is_symmetric, sym_eigenvalues};
use crate::manipulator::DynamicsTerms;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("PD gain `{field}` must be symmetric positive definite")]
pub struct PdGainError {
    pub field: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    kp: Matrix2<f64>,
    kd: Matrix2<f64>,
}

impl PdGains {
    pub fn new(kp: Matrix2<f64>, kd: Matrix2<f64>) -> Result<Self, PdGainError> {
        for (field, m) in [("kp", &kp), ("kd", &kd)] {
            if !(is_symmetric(m, 1e-12) && sym_eigenvalues(m).0 > 0.0) {
                return Err(PdGainError { field });
            }
        }
        Ok(Self { kp, kd })
    }

    pub fn kp(&self) -> &Matrix2<f64> {
        &self.kp
    }

    pub fn kd(&self) -> &Matrix2<f64> {
        &self.kd
    }
}

impl Default for PdGains {
    /// Poles at −10, −10 per axis.
    fn default() -> Self {
        Self {
            kp: Matrix2::identity() * 100.0,
            kd: Matrix2::identity() * 20.0,
        }
    }
}

/// Desired deviation-frame motion for the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackingTarget {
    pub x_r: Vector2<f64>,
    pub xdot_r: Vector2<f64>,
    pub xddot_r: Vector2<f64>,
}

pub fn virtual_acceleration(
    gains: &PdGains,
    target: &TrackingTarget,
    x: &Vector2<f64>,
    xdot: &Vector2<f64>,
) -> Vector2<f64> {
    let e = target.x_r - x;
    let edot = target.xdot_r - xdot;
    target.xddot_r + gains.kd * edot + gains.kp * e
}

/// Cartesian force `F` and joint torque `τ = Jᵀ F`.
pub fn feedback_linearize(
    cart: &DynamicsTerms,
    jacobian: &Matrix2<f64>,
    a: &Vector2<f64>,
    xdot: &Vector2<f64>,
    f_ext: &Vector2<f64>,
) -> (Vector2<f64>, Vector2<f64>) {
    let f = cart.mass * a + cart.coriolis * xdot + cart.gravity - f_ext;
    (f, jacobian.transpose() * f)
}
