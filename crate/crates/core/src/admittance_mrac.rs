//! One Cartesian axis of the adaptive admittance layer.
//!
//! The admittance plant `Δ̇ = AΔ + BU` is driven by the direct MRAC law
//! `U = K_x Δ + r` so that it follows the switched reference
//! `Δ̇_m = A_m(i) Δ_m + B r`. Each region `i` owns its own gain row `K_xi`,
//! adapted only while the region is active:
//!
//! ```text
//! K̇_xiᵀ = −Γ_i Δ (eᵀ P B) κ_i,    e = Δ − Δ_m
//! ```
//!
//! Plant, reference and active gain row are integrated together in one RK4
//! step with the region frozen at step start.

use nalgebra::{Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::rk4_step;
use crate::switched_reference::{ReferenceError, ReferenceModel, ReferenceState};

/// Assumption-2 bound on the interaction force (N).
pub const PAPER_F_MAX: f64 = 20.0;

pub const PAPER_GAMMA: [f64; 2] = [200.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MracError {
    #[error("A_m{} cannot be matched: row 1 of A_m - A is {row:?}, B has no authority there", .region + 1)]
    Unmatchable { region: usize, row: [f64; 2] },
    #[error("non-finite channel state")]
    NonFinite,
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error("invalid channel config `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

/// Virtual mass-spring-damper `Δ̇ = AΔ + BU` with `B = [0; 1/M_virt]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmittancePlant {
    a: Matrix2<f64>,
    virtual_mass: f64,
}

impl AdmittancePlant {
    pub fn new(a: Matrix2<f64>, virtual_mass: f64) -> Result<Self, MracError> {
        if !(virtual_mass.is_finite() && virtual_mass > 0.0) {
            return Err(MracError::InvalidConfig {
                field: "virtual_mass",
                reason: format!("must be > 0, got {virtual_mass}"),
            });
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(MracError::InvalidConfig {
                field: "a",
                reason: "non-finite entry".into(),
            });
        }
        Ok(Self { a, virtual_mass })
    }

    /// Unit virtual mass with zero stiffness and damping.
    pub fn paper() -> Self {
        Self {
            a: Matrix2::new(0.0, 1.0, 0.0, 0.0),
            virtual_mass: 1.0,
        }
    }

    pub fn a(&self) -> &Matrix2<f64> {
        &self.a
    }

    pub fn b(&self) -> Vector2<f64> {
        Vector2::new(0.0, 1.0 / self.virtual_mass)
    }

    pub fn virtual_mass(&self) -> f64 {
        self.virtual_mass
    }
}

/// `U = K_x[region] · Δ + K_r r` with `K_r = 1`.
pub fn control_input(gains: &[RowVector2<f64>], region: usize, delta: &Vector2<f64>, r: f64) -> f64 {
    (gains[region] * delta)[0] + r
}

/// Nominal gains `K*` with `A_mi = A + B K*`.
pub fn nominal_gains(
    plant: &AdmittancePlant,
    a_mi: &Matrix2<f64>,
    region: usize,
) -> Result<RowVector2<f64>, MracError> {
    let diff = a_mi - plant.a();
    let top = [diff[(0, 0)], diff[(0, 1)]];
    if top.iter().any(|v| v.abs() > 1e-12) {
        return Err(MracError::Unmatchable { region, row: top });
    }
    Ok(RowVector2::new(diff[(1, 0)], diff[(1, 1)]) * plant.virtual_mass())
}

/// `K̇_xi` for the active region: `−(Γ_i Δ (eᵀPB))ᵀ` with diagonal `Γ_i`.
pub fn gain_rate(
    gamma: &Vector2<f64>,
    delta: &Vector2<f64>,
    e: &Vector2<f64>,
    p: &Matrix2<f64>,
    b: &Vector2<f64>,
) -> RowVector2<f64> {
    let s = (e.transpose() * p * b)[0];
    -gamma.component_mul(delta).transpose() * s
}

/// Which state drives the indicator functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchSource {
    #[default]
    Reference,
    Plant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub plant: AdmittancePlant,
    pub reference: ReferenceModel,
    /// Common Lyapunov matrix used by the update law.
    pub p: Matrix2<f64>,
    /// Diagonals of `Γ_i`, one per region.
    pub gamma: Vec<Vector2<f64>>,
    pub initial_gains: Vec<RowVector2<f64>>,
    pub f_max: f64,
    pub switch_source: SwitchSource,
    /// Skip adaptation and hold the gains at their initial values.
    pub freeze_gains: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub delta: Vector2<f64>,
    pub reference: ReferenceState,
    pub gains: Vec<RowVector2<f64>>,
}

impl ChannelState {
    pub fn mrac_error(&self) -> Vector2<f64> {
        self.delta - self.reference.dm
    }

    pub fn active_region(&self) -> usize {
        self.reference.active_region
    }

    pub fn active_gain(&self) -> RowVector2<f64> {
        self.gains[self.reference.active_region]
    }
}

/// Clamp a measured force to `[−f_max, f_max]`.
pub fn clamp_force(f: f64, f_max: f64) -> Result<f64, MracError> {
    if f.is_nan() {
        return Err(MracError::NonFinite);
    }
    Ok(f.clamp(-f_max, f_max))
}

#[derive(Debug, Clone)]
pub struct AdmittanceChannel {
    config: ChannelConfig,
    nominal: Vec<RowVector2<f64>>,
    state: ChannelState,
}

impl AdmittanceChannel {
    pub fn new(config: ChannelConfig) -> Result<Self, MracError> {
        let subs = config.reference.subsystems();
        let n = subs.len();
        if config.gamma.len() != n {
            return Err(MracError::InvalidConfig {
                field: "gamma",
                reason: format!("{} entries for {n} subsystems", config.gamma.len()),
            });
        }
        if config.initial_gains.len() != n {
            return Err(MracError::InvalidConfig {
                field: "initial_gains",
                reason: format!("{} entries for {n} subsystems", config.initial_gains.len()),
            });
        }
        if config
            .gamma
            .iter()
            .any(|g| !g.iter().all(|v| v.is_finite() && *v > 0.0))
        {
            return Err(MracError::InvalidConfig {
                field: "gamma",
                reason: "diagonal entries must be finite and > 0".into(),
            });
        }
        if !(config.f_max.is_finite() && config.f_max > 0.0) {
            return Err(MracError::InvalidConfig {
                field: "f_max",
                reason: format!("must be > 0, got {}", config.f_max),
            });
        }
        if (config.reference.input_matrix() - config.plant.b()).amax() > 1e-12 {
            return Err(MracError::InvalidConfig {
                field: "b",
                reason: "K_r = 1 requires B_m = B".into(),
            });
        }
        let nominal = subs
            .iter()
            .enumerate()
            .map(|(i, s)| nominal_gains(&config.plant, s.a(), i))
            .collect::<Result<Vec<_>, _>>()?;
        let state = Self::initial_state(&config)?;
        Ok(Self {
            config,
            nominal,
            state,
        })
    }

    fn initial_state(config: &ChannelConfig) -> Result<ChannelState, MracError> {
        Ok(ChannelState {
            delta: Vector2::zeros(),
            reference: config.reference.initial_state(Vector2::zeros())?,
            gains: config.initial_gains.clone(),
        })
    }

    pub fn reset(&mut self) {
        self.state = Self::initial_state(&self.config).expect("validated at construction");
    }

    /// Start from explicit plant and reference states, keeping the gains.
    pub fn set_states(&mut self, delta: Vector2<f64>, dm: Vector2<f64>) -> Result<(), MracError> {
        self.state.delta = delta;
        self.state.reference = self.config.reference.initial_state(dm)?;
        Ok(())
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn state(&self) -> &ChannelState {
        &self.state
    }

    pub fn nominal(&self) -> &[RowVector2<f64>] {
        &self.nominal
    }

    fn switching_region(&self, delta: &Vector2<f64>, dm: &Vector2<f64>) -> Result<usize, MracError> {
        let partition = self.config.reference.partition();
        Ok(match self.config.switch_source {
            SwitchSource::Reference => partition.indicator(dm)?,
            SwitchSource::Plant => partition.indicator(delta)?,
        })
    }

    /// `Δ̇` of the plant under the current gains and force.
    pub fn plant_rate(&self, force: f64) -> Vector2<f64> {
        let region = self.state.reference.active_region;
        let u = control_input(&self.state.gains, region, &self.state.delta, force);
        self.config.plant.a() * self.state.delta + self.config.plant.b() * u
    }

    /// Lyapunov candidate `½eᵀPe + ½ Σ K̃_i Γ_i⁻¹ K̃_iᵀ`.
    pub fn lyapunov_value(&self) -> f64 {
        lyapunov_value(
            &self.state.mrac_error(),
            &self.config.p,
            &self.state.gains,
            &self.nominal,
            &self.config.gamma,
        )
    }

    /// One coupled RK4 step of plant, reference and active gain row.
    /// The force is clamped to `f_max` and held over the step.
    pub fn step(&mut self, force: f64, dt: f64) -> Result<&ChannelState, MracError> {
        let r = clamp_force(force, self.config.f_max)?;
        let region = self.switching_region(&self.state.delta, &self.state.reference.dm)?;
        let a = *self.config.plant.a();
        let b = self.config.plant.b();
        let a_m = *self.config.reference.subsystems()[region].a();
        let b_m = self.config.reference.input_matrix();
        let p = self.config.p;
        let gamma = self.config.gamma[region];
        let adapt = !self.config.freeze_gains;

        let s = &self.state;
        let k = s.gains[region];
        let y0 = [
            s.delta[0],
            s.delta[1],
            s.reference.dm[0],
            s.reference.dm[1],
            k[0],
            k[1],
        ];
        let y1 = rk4_step(&y0, dt, |y| {
            let delta = Vector2::new(y[0], y[1]);
            let dm = Vector2::new(y[2], y[3]);
            let k = RowVector2::new(y[4], y[5]);
            let u = (k * delta)[0] + r;
            let d_delta = a * delta + b * u;
            let d_dm = a_m * dm + b_m * r;
            let dk = if adapt {
                gain_rate(&gamma, &delta, &(delta - dm), &p, &b)
            } else {
                RowVector2::zeros()
            };
            [d_delta[0], d_delta[1], d_dm[0], d_dm[1], dk[0], dk[1]]
        });
        if !y1.iter().all(|v| v.is_finite()) {
            return Err(MracError::NonFinite);
        }
        let delta = Vector2::new(y1[0], y1[1]);
        let dm = Vector2::new(y1[2], y1[3]);
        let active = self.switching_region(&delta, &dm)?;
        self.state.delta = delta;
        self.state.reference = ReferenceState {
            dm,
            active_region: active,
        };
        if adapt {
            self.state.gains[region] = RowVector2::new(y1[4], y1[5]);
        }
        Ok(&self.state)
    }
}

pub fn lyapunov_value(
    e: &Vector2<f64>,
    p: &Matrix2<f64>,
    gains: &[RowVector2<f64>],
    nominal: &[RowVector2<f64>],
    gamma: &[Vector2<f64>],
) -> f64 {
    let mut v = 0.5 * (e.transpose() * p * e)[0];
    for ((k, k_star), g) in gains.iter().zip(nominal).zip(gamma) {
        let kt = k - k_star;
        v += 0.5 * (kt[0] * kt[0] / g[0] + kt[1] * kt[1] / g[1]);
    }
    v
}

/// Reference channel: unit virtual mass, both reference modes, `Γ = {200 I, 1000 I}`,
/// every region seeded with `K*_x1`.
pub fn paper_channel_config() -> ChannelConfig {
    let plant = AdmittancePlant::paper();
    let reference = crate::switched_reference::build_paper_reference();
    let k1 = nominal_gains(&plant, reference.subsystems()[0].a(), 0).expect("matchable");
    ChannelConfig {
        plant,
        p: crate::cqlf::paper_p(),
        gamma: PAPER_GAMMA.iter().map(|g| Vector2::new(*g, *g)).collect(),
        initial_gains: vec![k1; reference.subsystems().len()],
        reference,
        f_max: PAPER_F_MAX,
        switch_source: SwitchSource::Reference,
        freeze_gains: false,
    }
}
