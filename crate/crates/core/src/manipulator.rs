//! Rigid-body model of the planar manipulator in joint and Cartesian space.
//!
//! Joint-space dynamics:
//!
//! ```text
//! M(q) q̈ + C(q, q̇) q̇ + G(q) = τ + τ_ext,    τ_ext = Jᵀ(q) F_ext
//! ```
//!
//! and the Cartesian form obtained through the Jacobian `ẋ = J q̇`:
//!
//! ```text
//! M_x = J⁻ᵀ M J⁻¹
//! C_x = J⁻ᵀ (C − M J⁻¹ J̇) J⁻¹
//! G_x = J⁻ᵀ G
//! ```
//!
//! Only the two-link arm is built in. Other arms can plug into the Cartesian
//! machinery by implementing [`ManipulatorModel`].

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::rk4_step;

/// Threshold on `|det J|` below which a configuration is treated as singular.
pub const SINGULARITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManipulatorError {
    #[error("singular configuration: |det J| = {det:.3e} at q = [{q1:.6}, {q2:.6}]")]
    Singular { det: f64, q1: f64, q2: f64 },
    #[error("non-finite state: q = {q:?}, qdot = {qdot:?}")]
    NonFinite { q: [f64; 2], qdot: [f64; 2] },
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
}

/// Physical constants of the two-link arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLinkParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub g: f64,
    pub gravity_enabled: bool,
}

impl Default for TwoLinkParams {
    fn default() -> Self {
        Self {
            m1: 1.5,
            m2: 1.0,
            l1: 0.85,
            l2: 0.85,
            g: 9.81,
            gravity_enabled: true,
        }
    }
}

impl TwoLinkParams {
    pub fn validate(&self) -> Result<(), ManipulatorError> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ManipulatorError::InvalidParams {
                    field,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        if !(self.g.is_finite() && self.g >= 0.0) {
            return Err(ManipulatorError::InvalidParams {
                field: "g",
                reason: format!("must be finite and >= 0, got {}", self.g),
            });
        }
        Ok(())
    }

    /// Effective gravitational acceleration after applying the enable flag.
    fn gravity(&self) -> f64 {
        if self.gravity_enabled {
            self.g
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vector2<f64>,
    pub qdot: Vector2<f64>,
}

impl JointState {
    pub fn at_rest(q: Vector2<f64>) -> Self {
        Self {
            q,
            qdot: Vector2::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianState {
    pub x: Vector2<f64>,
    pub xdot: Vector2<f64>,
}

/// Inertia, Coriolis/centripetal and gravity terms in one coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsTerms {
    pub mass: Matrix2<f64>,
    pub coriolis: Matrix2<f64>,
    pub gravity: Vector2<f64>,
}

/// Fails with [`ManipulatorError::Singular`] when `|det J| <= SINGULARITY_EPS`.
pub fn singularity_check(jacobian: &Matrix2<f64>) -> Result<(), ManipulatorError> {
    singularity_check_with(jacobian, SINGULARITY_EPS)
}

pub fn singularity_check_with(jacobian: &Matrix2<f64>, eps: f64) -> Result<(), ManipulatorError> {
    let det = jacobian.determinant();
    if det.is_finite() && det.abs() > eps {
        Ok(())
    } else {
        Err(ManipulatorError::Singular {
            det,
            q1: f64::NAN,
            q2: f64::NAN,
        })
    }
}

/// Kinematic and dynamic description of a square (m = n = 2) arm.
///
/// Implementors supply the joint-space terms; the Cartesian transform,
/// forward dynamics and integration come for free.
pub trait ManipulatorModel {
    fn forward_kinematics(&self, q: &Vector2<f64>) -> Vector2<f64>;
    fn jacobian(&self, q: &Vector2<f64>) -> Matrix2<f64>;
    /// Time derivative of the Jacobian along `state`.
    fn jacobian_dot(&self, state: &JointState) -> Matrix2<f64>;
    fn joint_dynamics_terms(&self, state: &JointState) -> DynamicsTerms;

    fn checked_jacobian(&self, q: &Vector2<f64>) -> Result<Matrix2<f64>, ManipulatorError> {
        let j = self.jacobian(q);
        singularity_check(&j).map_err(|err| match err {
            ManipulatorError::Singular { det, .. } => ManipulatorError::Singular {
                det,
                q1: q[0],
                q2: q[1],
            },
            other => other,
        })?;
        Ok(j)
    }

    fn cartesian_state(&self, state: &JointState) -> CartesianState {
        CartesianState {
            x: self.forward_kinematics(&state.q),
            xdot: self.jacobian(&state.q) * state.qdot,
        }
    }

    fn cartesian_dynamics_terms(
        &self,
        state: &JointState,
    ) -> Result<DynamicsTerms, ManipulatorError> {
        let j = self.checked_jacobian(&state.q)?;
        // checked above, so the inverse exists
        let j_inv = j.try_inverse().expect("nonsingular Jacobian");
        let j_inv_t = j_inv.transpose();
        let jdot = self.jacobian_dot(state);
        let joint = self.joint_dynamics_terms(state);
        let mass = j_inv_t * joint.mass * j_inv;
        Ok(DynamicsTerms {
            // symmetrize away rounding so downstream checks see an exact SPD matrix
            mass: (mass + mass.transpose()) * 0.5,
            coriolis: j_inv_t * (joint.coriolis - joint.mass * j_inv * jdot) * j_inv,
            gravity: j_inv_t * joint.gravity,
        })
    }

    /// Joint acceleration `M⁻¹(τ + Jᵀ F_ext − C q̇ − G)`.
    fn joint_acceleration(
        &self,
        state: &JointState,
        tau: &Vector2<f64>,
        f_ext: &Vector2<f64>,
    ) -> Result<Vector2<f64>, ManipulatorError> {
        let j = self.checked_jacobian(&state.q)?;
        let terms = self.joint_dynamics_terms(state);
        let rhs = tau + j.transpose() * f_ext - terms.coriolis * state.qdot - terms.gravity;
        terms
            .mass
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(ManipulatorError::NonFinite {
                q: [state.q[0], state.q[1]],
                qdot: [state.qdot[0], state.qdot[1]],
            })
    }

    /// One RK4 step with `τ` held constant and the Cartesian force `F_ext`
    /// mapped to joint torques at every stage.
    fn apply_torque(
        &self,
        state: &JointState,
        tau: &Vector2<f64>,
        f_ext: &Vector2<f64>,
        dt: f64,
    ) -> Result<JointState, ManipulatorError> {
        self.apply_joint_torque(state, &|q| tau + self.jacobian(q).transpose() * f_ext, dt)
    }

    /// One RK4 step of `q̈ = M⁻¹(τ + τ_ext(q) − C q̇ − G)` with `τ_ext` supplied
    /// as a function of the stage configuration.
    fn apply_joint_torque(
        &self,
        state: &JointState,
        total_tau: &dyn Fn(&Vector2<f64>) -> Vector2<f64>,
        dt: f64,
    ) -> Result<JointState, ManipulatorError> {
        if !state.is_finite() {
            return Err(non_finite(state));
        }
        let sign0 = self.checked_jacobian(&state.q)?.determinant().signum();
        // a det(J) sign change inside the step means the path crossed a singular pose
        let same_side = |q: &Vector2<f64>| -> Result<Matrix2<f64>, ManipulatorError> {
            let j = self.checked_jacobian(q)?;
            let det = j.determinant();
            if det.signum() == sign0 {
                Ok(j)
            } else {
                Err(ManipulatorError::Singular { det, q1: q[0], q2: q[1] })
            }
        };
        let mut failure = None;
        let y0 = [state.q[0], state.q[1], state.qdot[0], state.qdot[1]];
        let y1 = rk4_step(&y0, dt, |y: &[f64; 4]| {
            let s = JointState {
                q: Vector2::new(y[0], y[1]),
                qdot: Vector2::new(y[2], y[3]),
            };
            let accel = same_side(&s.q)
                .and_then(|_| {
                    let terms = self.joint_dynamics_terms(&s);
                    let rhs = total_tau(&s.q) - terms.coriolis * s.qdot - terms.gravity;
                    terms
                        .mass
                        .cholesky()
                        .map(|c| c.solve(&rhs))
                        .ok_or_else(|| non_finite(&s))
                })
                .unwrap_or_else(|err| {
                    failure.get_or_insert(err);
                    Vector2::zeros()
                });
            [y[2], y[3], accel[0], accel[1]]
        });
        if let Some(err) = failure {
            return Err(err);
        }
        let next = JointState {
            q: Vector2::new(y1[0], y1[1]),
            qdot: Vector2::new(y1[2], y1[3]),
        };
        if !next.is_finite() {
            return Err(non_finite(&next));
        }
        same_side(&next.q)?;
        Ok(next)
    }
}

fn non_finite(state: &JointState) -> ManipulatorError {
    ManipulatorError::NonFinite {
        q: [state.q[0], state.q[1]],
        qdot: [state.qdot[0], state.qdot[1]],
    }
}

impl ManipulatorModel for TwoLinkParams {
    fn forward_kinematics(&self, q: &Vector2<f64>) -> Vector2<f64> {
        let q12 = q[0] + q[1];
        Vector2::new(
            self.l1 * q[0].cos() + self.l2 * q12.cos(),
            self.l1 * q[0].sin() + self.l2 * q12.sin(),
        )
    }

    fn jacobian(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        Matrix2::new(
            -self.l1 * s1 - self.l2 * s12,
            -self.l2 * s12,
            self.l1 * c1 + self.l2 * c12,
            self.l2 * c12,
        )
    }

    fn jacobian_dot(&self, state: &JointState) -> Matrix2<f64> {
        let q = &state.q;
        let (w1, w12) = (state.qdot[0], state.qdot[0] + state.qdot[1]);
        let (s1, c1) = q[0].sin_cos();
        let (s12, c12) = (q[0] + q[1]).sin_cos();
        Matrix2::new(
            -self.l1 * c1 * w1 - self.l2 * c12 * w12,
            -self.l2 * c12 * w12,
            -self.l1 * s1 * w1 - self.l2 * s12 * w12,
            -self.l2 * s12 * w12,
        )
    }

    fn joint_dynamics_terms(&self, state: &JointState) -> DynamicsTerms {
        let (m1, m2, l1, l2) = (self.m1, self.m2, self.l1, self.l2);
        let q = &state.q;
        let (qd1, qd2) = (state.qdot[0], state.qdot[1]);
        let p1 = m2 * l2 * l2;
        let p2 = m2 * l1 * l2 * q[1].cos();
        let h = m2 * l1 * l2 * q[1].sin();
        let g = self.gravity();
        let c1 = q[0].cos();
        let c12 = (q[0] + q[1]).cos();
        DynamicsTerms {
            mass: Matrix2::new(
                p1 + 2.0 * p2 + (m1 + m2) * l1 * l1,
                p1 + p2,
                p1 + p2,
                p1,
            ),
            // Christoffel factorization: Ṁ − 2C is skew-symmetric
            coriolis: Matrix2::new(-h * qd2, -h * (qd1 + qd2), h * qd1, 0.0),
            gravity: Vector2::new(
                m2 * l2 * g * c12 + (m1 + m2) * l1 * g * c1,
                m2 * l2 * g * c12,
            ),
        }
    }
}

/// Spectral norm of `M_x⁻¹`, the empirical witness of the bound `α`.
pub fn inverse_mass_norm(cartesian_mass: &Matrix2<f64>) -> f64 {
    let inv = cartesian_mass
        .try_inverse()
        .unwrap_or_else(|| Matrix2::from_element(f64::INFINITY));
    let (lo, hi) = crate::linalg::sym_eigenvalues(&((inv + inv.transpose()) * 0.5));
    lo.abs().max(hi.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn arm() -> TwoLinkParams {
        TwoLinkParams::default()
    }

    #[test]
    fn forward_kinematics_closed_form() {
        let p = arm();
        assert_relative_eq!(p.forward_kinematics(&Vector2::new(0.0, 0.0)), Vector2::new(1.7, 0.0), epsilon = 1e-12);
        assert_relative_eq!(p.forward_kinematics(&Vector2::new(FRAC_PI_2, 0.0)), Vector2::new(0.0, 1.7), epsilon = 1e-12);
        assert_relative_eq!(p.forward_kinematics(&Vector2::new(0.0, PI)), Vector2::new(0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn jacobian_examples() {
        let p = arm();
        let j = p.jacobian(&Vector2::new(0.0, FRAC_PI_2));
        assert_relative_eq!(j, Matrix2::new(-0.85, -0.85, 0.85, 0.0), epsilon = 1e-12);
        assert_relative_eq!(j.determinant(), 0.7225, epsilon = 1e-12);

        let j0 = p.jacobian(&Vector2::new(0.0, 0.0));
        assert_relative_eq!(j0, Matrix2::new(0.0, 0.0, 1.7, 0.85), epsilon = 1e-12);
        assert_eq!(j0.determinant(), 0.0);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let arm = arm();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let h = 1e-7;
        for _ in 0..100 {
            let q = Vector2::new(rng.random_range(-PI..PI), rng.random_range(-PI..PI));
            let mut fd = Matrix2::zeros();
            for k in 0..2 {
                let mut dq = Vector2::zeros();
                dq[k] = h;
                let col = (arm.forward_kinematics(&(q + dq)) - arm.forward_kinematics(&(q - dq))) / (2.0 * h);
                fd.set_column(k, &col);
            }
            assert_relative_eq!(arm.jacobian(&q), fd, epsilon = 1e-7);

            // d/dt J along q̇ equals J̇
            let qd = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let jd_fd = (arm.jacobian(&(q + qd * h)) - arm.jacobian(&(q - qd * h))) / (2.0 * h);
            assert_relative_eq!(arm.jacobian_dot(&JointState { q, qdot: qd }), jd_fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn free_motion_conserves_energy() {
        let arm = TwoLinkParams {
            gravity_enabled: false,
            ..Default::default()
        };
        let energy = |s: &JointState| 0.5 * s.qdot.dot(&(arm.joint_dynamics_terms(s).mass * s.qdot));
        let mut s = JointState {
            q: Vector2::new(0.3, 1.4),
            qdot: Vector2::new(0.8, -0.3),
        };
        let e0 = energy(&s);
        for _ in 0..1000 {
            s = arm.apply_torque(&s, &Vector2::zeros(), &Vector2::zeros(), 1e-3).unwrap();
            assert!(s.q[1] > 0.1 && s.q[1] < PI - 0.1);
        }
        assert!(((energy(&s) - e0) / e0).abs() < 1e-6);
    }

    #[test]
    fn crossing_singular_pose_within_a_step_is_reported() {
        let arm = arm();
        let s = JointState {
            q: Vector2::new(0.0, 1e-3),
            qdot: Vector2::new(0.0, -5.0),
        };
        let err = arm.apply_torque(&s, &Vector2::zeros(), &Vector2::zeros(), 1e-3).unwrap_err();
        assert!(matches!(err, ManipulatorError::Singular { .. }));
    }

    #[test]
    fn singularity_examples() {
        let p = arm();
        assert!(singularity_check(&p.jacobian(&Vector2::new(0.0, FRAC_PI_2))).is_ok());
        assert!(singularity_check(&p.jacobian(&Vector2::new(0.0, 0.0))).is_err());
        let j = p.jacobian(&Vector2::new(0.0, 1e-8));
        assert_relative_eq!(j.determinant(), 0.7225e-8, max_relative = 1e-6);
        assert!(singularity_check(&j).is_err());
        let err = p.checked_jacobian(&Vector2::new(0.3, 0.0)).unwrap_err();
        assert!(matches!(err, ManipulatorError::Singular { q1, .. } if q1 == 0.3));
    }

    #[test]
    fn joint_terms_at_zero() {
        let p = arm();
        let terms = p.joint_dynamics_terms(&JointState::at_rest(Vector2::zeros()));
        assert_relative_eq!(terms.mass, Matrix2::new(3.97375, 1.445, 1.445, 0.7225), epsilon = 1e-12);
        assert_eq!(terms.coriolis * Vector2::zeros(), Vector2::zeros());
    }

    #[test]
    fn gravity_flag_zeroes_gravity() {
        let p = TwoLinkParams {
            gravity_enabled: false,
            ..arm()
        };
        for q in [[0.0, 0.0], [0.3, -1.2], [2.0, 1.0]] {
            let t = p.joint_dynamics_terms(&JointState::at_rest(Vector2::new(q[0], q[1])));
            assert_eq!(t.gravity, Vector2::zeros());
        }
    }

    #[test]
    fn coriolis_vector_matches_printed_form() {
        // printed matrix with the velocity factor restored in entry (1, 2)
        let p = arm();
        let s = JointState {
            q: Vector2::new(0.4, 1.1),
            qdot: Vector2::new(-0.7, 1.9),
        };
        let h = p.m2 * p.l1 * p.l2 * s.q[1].sin();
        let printed = Matrix2::new(-2.0 * h * s.qdot[1], -h * s.qdot[1], h * s.qdot[0], 0.0);
        let c = p.joint_dynamics_terms(&s).coriolis;
        assert_relative_eq!(c * s.qdot, printed * s.qdot, epsilon = 1e-12);
    }

    #[test]
    fn joint_mdot_minus_2c_is_skew() {
        let p = arm();
        let s = JointState {
            q: Vector2::new(0.2, 0.9),
            qdot: Vector2::new(1.3, -0.4),
        };
        let h = p.m2 * p.l1 * p.l2 * s.q[1].sin();
        // d/dt of p2 = m2 l1 l2 cos q2
        let dp2 = -h * s.qdot[1];
        let mdot = Matrix2::new(2.0 * dp2, dp2, dp2, 0.0);
        let n = mdot - 2.0 * p.joint_dynamics_terms(&s).coriolis;
        assert_relative_eq!(n + n.transpose(), Matrix2::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn cartesian_mass_spd_and_static_coriolis() {
        let p = arm();
        let s = JointState::at_rest(Vector2::new(0.3, 1.4));
        let t = p.cartesian_dynamics_terms(&s).unwrap();
        assert_relative_eq!(t.mass, t.mass.transpose(), epsilon = 1e-10);
        assert!(t.mass.cholesky().is_some());
        let xdot = p.jacobian(&s.q) * s.qdot;
        assert_eq!(t.coriolis * xdot, Vector2::zeros());
    }

    #[test]
    fn cartesian_terms_propagate_singularity() {
        let p = arm();
        let err = p
            .cartesian_dynamics_terms(&JointState::at_rest(Vector2::new(0.0, 0.0)))
            .unwrap_err();
        assert!(matches!(err, ManipulatorError::Singular { .. }));
    }

    #[test]
    fn gravity_hold_is_equilibrium() {
        let p = arm();
        let s = JointState::at_rest(Vector2::new(0.5, 1.0));
        let tau = p.joint_dynamics_terms(&s).gravity;
        let next = p.apply_torque(&s, &tau, &Vector2::zeros(), 1e-3).unwrap();
        assert_relative_eq!(next.q, s.q, epsilon = 1e-15);
        assert_relative_eq!(next.qdot, s.qdot, epsilon = 1e-15);
    }

    #[test]
    fn external_force_enters_through_jacobian_transpose() {
        let p = arm();
        let s = JointState::at_rest(Vector2::new(0.5, 1.0));
        let f = Vector2::new(3.0, -2.0);
        let j = p.jacobian(&s.q);
        let via_force = p.joint_acceleration(&s, &Vector2::zeros(), &f).unwrap();
        let via_torque = p.joint_acceleration(&s, &(j.transpose() * f), &Vector2::zeros()).unwrap();
        assert_relative_eq!(via_force, via_torque, epsilon = 1e-12);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = TwoLinkParams { l2: 0.0, ..arm() };
        assert!(matches!(p.validate(), Err(ManipulatorError::InvalidParams { field: "l2", .. })));
        let p = TwoLinkParams { g: -1.0, ..arm() };
        assert!(p.validate().is_err());
        assert!(arm().validate().is_ok());
    }

    #[test]
    fn force_torque_duality() {
        let j = arm().jacobian(&Vector2::new(0.7, 1.2));
        let tau = Vector2::new(1.5, -0.25);
        let f = j.transpose().try_inverse().unwrap() * tau;
        assert_relative_eq!(j.transpose() * f, tau, epsilon = 1e-14);
    }
}
