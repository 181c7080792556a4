//! Scenario orchestration.
//!
//! Within one step of length `dt`:
//!
//! 1. sample and clamp the external force,
//! 2. step both admittance channels (reference, plant, active gains),
//! 3. form the tracking target from the new plant state,
//! 4. feedback-linearize and step the arm with the torque held constant.
//!
//! Positions in the trace are deviations from the operating point
//! `x_op = φ(q0)`; the arm tracks `x_op + x_r`.

use nalgebra::{Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admittance_mrac::{lyapunov_value, AdmittanceChannel, MracError};
use crate::config::{CertifyError, ConfigError, ScenarioConfig};
use crate::cqlf::CqlfCertificate;
use crate::manipulator::{inverse_mass_norm, JointState, ManipulatorError, ManipulatorModel, TwoLinkParams};
use crate::tracking::{feedback_linearize, virtual_acceleration, PdGains, TrackingTarget};

/// Per-step ΔV allowance for the Lyapunov monitor.
pub const LYAPUNOV_TOL: f64 = 1e-6;
/// Relative allowance for `ẋᵀ(Ṁ_x − 2C_x)ẋ`.
pub const SKEW_TOL: f64 = 1e-6;
/// Allowed mismatch between realized Cartesian acceleration and `a`.
pub const LINEARIZATION_TOL: f64 = 1e-6;
/// Safety bound on the deviation per axis (m).
pub const SAFETY_BOUND_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("no_cqlf: {0}")]
    NoCqlf(CertifyError),
    #[error("config: {0}")]
    Config(String),
    #[error("singular: {0}")]
    Singular(ManipulatorError),
    #[error("nonfinite_state: {0}")]
    NonFinite(String),
    #[error("admittance: {0}")]
    Admittance(MracError),
}

impl SimError {
    /// Short error class name printed by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            Self::NoCqlf(_) => "no_cqlf",
            Self::Config(_) => "config",
            Self::Singular(_) => "singular",
            Self::NonFinite(_) => "nonfinite_state",
            Self::Admittance(_) => "admittance",
        }
    }
}

impl From<ConfigError> for SimError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<ManipulatorError> for SimError {
    fn from(e: ManipulatorError) -> Self {
        match e {
            ManipulatorError::Singular { .. } => Self::Singular(e),
            other => Self::NonFinite(other.to_string()),
        }
    }
}

impl From<MracError> for SimError {
    fn from(e: MracError) -> Self {
        match e {
            MracError::NonFinite => Self::NonFinite("admittance channel".into()),
            other => Self::Admittance(other),
        }
    }
}

/// Per-axis admittance state in a trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisRecord {
    pub delta: [f64; 2],
    pub delta_m: [f64; 2],
    /// Active region, 0-based.
    pub region: usize,
    /// Gain rows of every region.
    pub gains: Vec<[f64; 2]>,
    pub lyapunov: f64,
}

impl AxisRecord {
    pub fn active_gain(&self) -> [f64; 2] {
        self.gains[self.region]
    }
}

/// State at `t`, plus the force and torque that acted over the step ending at
/// `t` (zero in the initial record).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub q: [f64; 2],
    pub qdot: [f64; 2],
    /// End-effector deviation from the operating point.
    pub x: [f64; 2],
    pub xdot: [f64; 2],
    pub axes: [AxisRecord; 2],
    pub f_ext: [f64; 2],
    pub force: [f64; 2],
    pub tau: [f64; 2],
    pub det_j: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub dt: f64,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    /// Largest per-step increase of V over both axes.
    pub lyapunov_max_increase: Option<f64>,
    pub lyapunov_violations: Option<usize>,
    /// Largest `|ẋᵀ(Ṁ_x − 2C_x)ẋ| / (1 + ‖ẋ‖²)`.
    pub skew_max_residual: Option<f64>,
    pub linearization_max_residual: Option<f64>,
    /// States found in other than exactly one partition cell.
    pub partition_failures: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps: usize,
    pub duration_s: f64,
    /// Largest `|Δ1|` of the plant, per axis.
    pub max_abs_delta1: [f64; 2],
    /// Largest `|Δ_m1|` of the switched reference, per axis.
    pub max_abs_delta_m1: [f64; 2],
    /// Steps with `|Δ1| > 1 m`, per axis.
    pub safety_violations: [usize; 2],
    /// Steps with `|Δ_m1| > 1 m`, per axis.
    pub reference_safety_violations: [usize; 2],
    pub switch_count: [usize; 2],
    pub final_mrac_error: [f64; 2],
    pub final_tracking_error: f64,
    pub max_tracking_error: f64,
    pub max_abs_torque: f64,
    pub max_inverse_mass_norm: f64,
    pub min_abs_det_j: f64,
    pub audits: AuditSummary,
}

impl RunMetrics {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let v = serde_json::to_value(self).expect("metrics serialize");
        let mut out = String::new();
        flatten("", &v, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut String) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.push_str(&format!("{prefix}: {other}\n"));
        }
    }
}

/// What an interactive client needs to render one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub record: StepRecord,
    pub operating_point: [f64; 2],
    /// Either axis in a stiff (non-first) region.
    pub safety_engaged: bool,
}

/// A configured, certified simulation that advances one `dt` at a time.
#[derive(Debug, Clone)]
pub struct Session {
    config: ScenarioConfig,
    certificate: CqlfCertificate,
    arm: TwoLinkParams,
    pd: PdGains,
    channels: [AdmittanceChannel; 2],
    joint: JointState,
    x_op: Vector2<f64>,
    step: usize,
    dt: f64,
    last: StepRecord,
    monitor: Monitor,
}

#[derive(Debug, Clone, Default)]
struct Monitor {
    lyapunov_max_increase: f64,
    lyapunov_violations: usize,
    skew_max: f64,
    linearization_max: f64,
    partition_failures: usize,
}

impl Session {
    /// Validates the config and refuses to build without a CQLF certificate.
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let certificate = config.certify().map_err(SimError::NoCqlf)?;
        let arm = config.arm_params();
        let pd = config.pd_gains()?;
        let channel_cfg = config.channel_config(certificate.p)?;
        let channels = [
            AdmittanceChannel::new(channel_cfg.clone())?,
            AdmittanceChannel::new(channel_cfg)?,
        ];
        let q0 = Vector2::new(config.manipulator.q0_rad[0], config.manipulator.q0_rad[1]);
        arm.checked_jacobian(&q0)?;
        let joint = JointState::at_rest(q0);
        let x_op = arm.forward_kinematics(&q0);
        let dt = config.run.dt_s;
        let mut session = Self {
            config,
            certificate,
            arm,
            pd,
            channels,
            joint,
            x_op,
            step: 0,
            dt,
            last: StepRecord {
                step: 0,
                t: 0.0,
                q: [0.0; 2],
                qdot: [0.0; 2],
                x: [0.0; 2],
                xdot: [0.0; 2],
                axes: [empty_axis(), empty_axis()],
                f_ext: [0.0; 2],
                force: [0.0; 2],
                tau: [0.0; 2],
                det_j: 0.0,
            },
            monitor: Monitor::default(),
        };
        session.last = session.record([0.0; 2], [0.0; 2], [0.0; 2]);
        Ok(session)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn certificate(&self) -> &CqlfCertificate {
        &self.certificate
    }

    pub fn arm(&self) -> &TwoLinkParams {
        &self.arm
    }

    pub fn channels(&self) -> &[AdmittanceChannel; 2] {
        &self.channels
    }

    pub fn operating_point(&self) -> Vector2<f64> {
        self.x_op
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn last_record(&self) -> &StepRecord {
        &self.last
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            record: self.last.clone(),
            operating_point: [self.x_op[0], self.x_op[1]],
            safety_engaged: self.last.axes.iter().any(|a| a.region > 0),
        }
    }

    /// Back to `q0` at rest, zero deviation and initial gains.
    pub fn reset(&mut self) {
        for ch in &mut self.channels {
            ch.reset();
        }
        self.joint = JointState::at_rest(self.joint_q0());
        self.step = 0;
        self.monitor = Monitor::default();
        self.last = self.record([0.0; 2], [0.0; 2], [0.0; 2]);
    }

    fn joint_q0(&self) -> Vector2<f64> {
        let q = self.config.manipulator.q0_rad;
        Vector2::new(q[0], q[1])
    }

    fn clamp(&self, f: Vector2<f64>) -> Result<Vector2<f64>, SimError> {
        let f_max = self.config.admittance.f_max_n;
        if f.iter().any(|v| v.is_nan()) {
            return Err(SimError::NonFinite("external force".into()));
        }
        Ok(f.map(|v| v.clamp(-f_max, f_max)))
    }

    /// Advance one step with `user_force` (clamped to `f_max`).
    pub fn step_realtime(&mut self, user_force: Vector2<f64>) -> Result<Snapshot, SimError> {
        self.advance(user_force)?;
        Ok(self.snapshot())
    }

    /// Advance one step; returns the new record.
    pub fn advance(&mut self, raw_force: Vector2<f64>) -> Result<&StepRecord, SimError> {
        let dt = self.dt;
        let audits = self.config.run.audits;
        let f_ext = self.clamp(raw_force)?;
        let v_before = [self.channels[0].lyapunov_value(), self.channels[1].lyapunov_value()];

        for (axis, ch) in self.channels.iter_mut().enumerate() {
            ch.step(f_ext[axis], dt)?;
        }

        let target = self.target(&f_ext);
        let cart = self.arm.cartesian_dynamics_terms(&self.joint)?;
        let j = self.arm.jacobian(&self.joint.q);
        let x = self.arm.forward_kinematics(&self.joint.q) - self.x_op;
        let xdot = j * self.joint.qdot;
        let a = virtual_acceleration(&self.pd, &target, &x, &xdot);
        let (force, tau) = feedback_linearize(&cart, &j, &a, &xdot, &f_ext);

        if audits.linearization {
            let qdd = self.arm.joint_acceleration(&self.joint, &tau, &f_ext)?;
            let xdd = j * qdd + self.arm.jacobian_dot(&self.joint) * self.joint.qdot;
            let r = (xdd - a).amax() / (1.0 + a.amax());
            self.monitor.linearization_max = self.monitor.linearization_max.max(r);
        }
        if audits.skew_symmetry {
            let r = skew_residual(&self.arm, &self.joint)?;
            self.monitor.skew_max = self.monitor.skew_max.max(r);
        }

        self.joint = self.arm.apply_torque(&self.joint, &tau, &f_ext, dt)?;
        self.step += 1;

        if audits.lyapunov {
            for (axis, ch) in self.channels.iter().enumerate() {
                let inc = ch.lyapunov_value() - v_before[axis];
                self.monitor.lyapunov_max_increase = self.monitor.lyapunov_max_increase.max(inc);
                if inc > LYAPUNOV_TOL {
                    self.monitor.lyapunov_violations += 1;
                }
            }
        }
        if audits.partition {
            for ch in &self.channels {
                let dm = ch.state().reference.dm;
                let hits = ch
                    .config()
                    .reference
                    .partition()
                    .cells
                    .iter()
                    .filter(|c| c.contains(&dm))
                    .count();
                if hits != 1 {
                    self.monitor.partition_failures += 1;
                }
            }
        }

        self.last = self.record(
            [f_ext[0], f_ext[1]],
            [force[0], force[1]],
            [tau[0], tau[1]],
        );
        Ok(&self.last)
    }

    /// Deviation-frame target from the plant states; `ẍ_r` is `Δ̇2`.
    fn target(&self, f_ext: &Vector2<f64>) -> TrackingTarget {
        let mut t = TrackingTarget::default();
        for (axis, ch) in self.channels.iter().enumerate() {
            let d = ch.state().delta;
            t.x_r[axis] = d[0];
            t.xdot_r[axis] = d[1];
            t.xddot_r[axis] = ch.plant_rate(f_ext[axis])[1];
        }
        t
    }

    fn record(&self, f_ext: [f64; 2], force: [f64; 2], tau: [f64; 2]) -> StepRecord {
        let j = self.arm.jacobian(&self.joint.q);
        let x = self.arm.forward_kinematics(&self.joint.q) - self.x_op;
        let xdot = j * self.joint.qdot;
        let axis = |ch: &AdmittanceChannel| {
            let s = ch.state();
            AxisRecord {
                delta: [s.delta[0], s.delta[1]],
                delta_m: [s.reference.dm[0], s.reference.dm[1]],
                region: s.active_region(),
                gains: s.gains.iter().map(|k| [k[0], k[1]]).collect(),
                lyapunov: ch.lyapunov_value(),
            }
        };
        StepRecord {
            step: self.step,
            t: self.time(),
            q: [self.joint.q[0], self.joint.q[1]],
            qdot: [self.joint.qdot[0], self.joint.qdot[1]],
            x: [x[0], x[1]],
            xdot: [xdot[0], xdot[1]],
            axes: [axis(&self.channels[0]), axis(&self.channels[1])],
            f_ext,
            force,
            tau,
            det_j: j.determinant(),
        }
    }

    fn audit_summary(&self) -> AuditSummary {
        let a = self.config.run.audits;
        AuditSummary {
            lyapunov_max_increase: a.lyapunov.then_some(self.monitor.lyapunov_max_increase),
            lyapunov_violations: a.lyapunov.then_some(self.monitor.lyapunov_violations),
            skew_max_residual: a.skew_symmetry.then_some(self.monitor.skew_max),
            linearization_max_residual: a.linearization.then_some(self.monitor.linearization_max),
            partition_failures: a.partition.then_some(self.monitor.partition_failures),
        }
    }
}

fn empty_axis() -> AxisRecord {
    AxisRecord {
        delta: [0.0; 2],
        delta_m: [0.0; 2],
        region: 0,
        gains: Vec::new(),
        lyapunov: 0.0,
    }
}

/// `|ẋᵀ(Ṁ_x − 2C_x)ẋ| / (1 + ‖ẋ‖²)` with `Ṁ_x` from central differences
/// along the joint velocity.
pub fn skew_residual<M: ManipulatorModel>(arm: &M, state: &JointState) -> Result<f64, SimError> {
    let h = 1e-6;
    let shifted = |sign: f64| JointState {
        q: state.q + state.qdot * (sign * h),
        qdot: state.qdot,
    };
    let plus = arm.cartesian_dynamics_terms(&shifted(1.0))?;
    let minus = arm.cartesian_dynamics_terms(&shifted(-1.0))?;
    let mdot: Matrix2<f64> = (plus.mass - minus.mass) / (2.0 * h);
    let cart = arm.cartesian_dynamics_terms(state)?;
    let xdot = arm.jacobian(&state.q) * state.qdot;
    let form = (xdot.transpose() * (mdot - 2.0 * cart.coriolis) * xdot)[0];
    Ok(form.abs() / (1.0 + xdot.norm_squared()))
}

/// Simulation stopped early; `trace` holds every completed step.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error} (step {step}, t = {t:.3} s)")]
pub struct SimAbort {
    pub error: SimError,
    pub step: usize,
    pub t: f64,
    pub trace: SimTrace,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: SimTrace,
    pub metrics: RunMetrics,
    pub certificate: CqlfCertificate,
}

/// Run a scripted scenario end to end.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput, SimAbort> {
    let abort = |error: SimError, trace: SimTrace, step: usize, dt: f64| SimAbort {
        error,
        step,
        t: step as f64 * dt,
        trace,
    };
    let dt = config.run.dt_s;
    let mut session =
        Session::new(config.clone()).map_err(|e| abort(e, SimTrace { dt, records: Vec::new() }, 0, dt))?;
    let steps = config.step_count();
    let mut trace = SimTrace {
        dt,
        records: Vec::with_capacity(steps + 1),
    };
    trace.records.push(session.last_record().clone());
    for k in 0..steps {
        let t = k as f64 * dt;
        let force = config.force.sample(t);
        match session.advance(force) {
            Ok(rec) => trace.records.push(rec.clone()),
            Err(e) => return Err(abort(e, trace, k, dt)),
        }
    }
    let metrics = compute_metrics(&session, &trace);
    log::info!(
        "{}: {} steps, max |Δ_m1| = [{:.6}, {:.6}], switches = {:?}",
        config.name,
        steps,
        metrics.max_abs_delta_m1[0],
        metrics.max_abs_delta_m1[1],
        metrics.switch_count
    );
    Ok(RunOutput {
        trace,
        metrics,
        certificate: session.certificate.clone(),
    })
}

fn compute_metrics(session: &Session, trace: &SimTrace) -> RunMetrics {
    let mut m = RunMetrics {
        steps: trace.records.len().saturating_sub(1),
        duration_s: trace.records.last().map(|r| r.t).unwrap_or(0.0),
        max_abs_delta1: [0.0; 2],
        max_abs_delta_m1: [0.0; 2],
        safety_violations: [0; 2],
        reference_safety_violations: [0; 2],
        switch_count: [0; 2],
        final_mrac_error: [0.0; 2],
        final_tracking_error: 0.0,
        max_tracking_error: 0.0,
        max_abs_torque: 0.0,
        max_inverse_mass_norm: 0.0,
        min_abs_det_j: f64::INFINITY,
        audits: session.audit_summary(),
    };
    let arm = &session.arm;
    let mut prev_region: Option<[usize; 2]> = None;
    for r in &trace.records {
        for (i, ax) in r.axes.iter().enumerate() {
            m.max_abs_delta1[i] = m.max_abs_delta1[i].max(ax.delta[0].abs());
            m.max_abs_delta_m1[i] = m.max_abs_delta_m1[i].max(ax.delta_m[0].abs());
            if ax.delta[0].abs() > SAFETY_BOUND_M {
                m.safety_violations[i] += 1;
            }
            if ax.delta_m[0].abs() > SAFETY_BOUND_M {
                m.reference_safety_violations[i] += 1;
            }
            if let Some(prev) = prev_region {
                if prev[i] != ax.region {
                    m.switch_count[i] += 1;
                }
            }
        }
        prev_region = Some([r.axes[0].region, r.axes[1].region]);
        let e_track = Vector2::new(r.axes[0].delta[0] - r.x[0], r.axes[1].delta[0] - r.x[1]).norm();
        m.max_tracking_error = m.max_tracking_error.max(e_track);
        m.max_abs_torque = m.max_abs_torque.max(r.tau[0].abs()).max(r.tau[1].abs());
        m.min_abs_det_j = m.min_abs_det_j.min(r.det_j.abs());
        let state = JointState {
            q: Vector2::new(r.q[0], r.q[1]),
            qdot: Vector2::new(r.qdot[0], r.qdot[1]),
        };
        if let Ok(cart) = arm.cartesian_dynamics_terms(&state) {
            m.max_inverse_mass_norm = m.max_inverse_mass_norm.max(inverse_mass_norm(&cart.mass));
        }
    }
    if let Some(last) = trace.records.last() {
        for (i, ax) in last.axes.iter().enumerate() {
            m.final_mrac_error[i] =
                Vector2::new(ax.delta[0] - ax.delta_m[0], ax.delta[1] - ax.delta_m[1]).norm();
        }
        m.final_tracking_error =
            Vector2::new(last.axes[0].delta[0] - last.x[0], last.axes[1].delta[0] - last.x[1]).norm();
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovAudit {
    /// Largest `V(k+1) − V(k)` per axis.
    pub max_increase: [f64; 2],
    pub worst_step: [usize; 2],
    /// Steps with `ΔV > tol`, per axis.
    pub violations: [usize; 2],
    pub tol: f64,
}

impl LyapunovAudit {
    pub fn passed(&self) -> bool {
        self.violations == [0, 0]
    }
}

/// Recompute `V` from the logged errors and gains and check it never rises by
/// more than `tol` between consecutive records.
pub fn run_lyapunov_audit(
    trace: &SimTrace,
    certificate: &CqlfCertificate,
    nominal_gains: &[RowVector2<f64>],
    gamma: &[Vector2<f64>],
    tol: f64,
) -> LyapunovAudit {
    let mut audit = LyapunovAudit {
        max_increase: [f64::NEG_INFINITY; 2],
        worst_step: [0; 2],
        violations: [0; 2],
        tol,
    };
    let value = |ax: &AxisRecord| {
        let e = Vector2::new(ax.delta[0] - ax.delta_m[0], ax.delta[1] - ax.delta_m[1]);
        let gains: Vec<RowVector2<f64>> = ax.gains.iter().map(|g| RowVector2::new(g[0], g[1])).collect();
        lyapunov_value(&e, &certificate.p, &gains, nominal_gains, gamma)
    };
    for pair in trace.records.windows(2) {
        for axis in 0..2 {
            let inc = value(&pair[1].axes[axis]) - value(&pair[0].axes[axis]);
            if inc > audit.max_increase[axis] {
                audit.max_increase[axis] = inc;
                audit.worst_step[axis] = pair[1].step;
            }
            if inc > tol {
                audit.violations[axis] += 1;
            }
        }
    }
    audit
}
