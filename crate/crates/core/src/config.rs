//! Scenario configuration: every constant of a run in one TOML (or JSON)
//! document. Keys carry their units (`dt_s`, `f_max_n`, ...).

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admittance_mrac::{AdmittancePlant, ChannelConfig, SwitchSource};
use crate::cqlf::{self, CqlfCertificate, CqlfRejection, InfeasibleReport};
use crate::manipulator::TwoLinkParams;
use crate::switched_reference::{Partition, ReferenceModel, Subsystem};
use crate::tracking::PdGains;

/// Force frequency ceiling, 1.2 Hz.
pub const MAX_FORCE_FREQUENCY_RADPS: f64 = 1.2 * 2.0 * PI;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("bad override `{spec}`: {reason}")]
    Override { spec: String, reason: String },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Mat2 = [[f64; 2]; 2];

pub fn to_matrix(m: &Mat2) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

pub fn from_matrix(m: &Matrix2<f64>) -> Mat2 {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub manipulator: ManipulatorConfig,
    pub admittance: AdmittanceConfig,
    pub tracking: TrackingConfig,
    pub force: ForceProfile,
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorConfig {
    pub m1_kg: f64,
    pub m2_kg: f64,
    pub l1_m: f64,
    pub l2_m: f64,
    pub g_mps2: f64,
    pub gravity_enabled: bool,
    /// Initial joint angles; the end effector there is the operating point.
    pub q0_rad: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemConfig {
    pub a_m: Mat2,
    /// Diagonal of `Γ_i`.
    pub gamma_diag: [f64; 2],
    /// Design `Q_mi` for the Lyapunov search seed and the report.
    pub q: Mat2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmittanceConfig {
    /// Baseline plant matrix `A`.
    pub a_plant: Mat2,
    pub virtual_mass_kg: f64,
    pub b_m: [f64; 2],
    pub f_max_n: f64,
    /// Inner-region bound on `|Δ_m1|`.
    pub threshold_m: f64,
    /// Pin the reference to one region (1-based); disables switching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_region: Option<usize>,
    #[serde(default)]
    pub switch_source: SwitchSource,
    #[serde(default)]
    pub freeze_gains: bool,
    /// Initial `K_xi` per region; defaults to `K*_x1` for every region.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_gains: Option<Vec<[f64; 2]>>,
    /// Common Lyapunov matrix; searched for when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov_p: Option<Mat2>,
    pub cqlf_max_iter: usize,
    pub subsystems: Vec<SubsystemConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingConfig {
    pub kp_per_s2: Mat2,
    pub kd_per_s: Mat2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceProfile {
    /// `F_i(t) = amplitude_i · sin(frequency_i · t + phase_i)`.
    Sinusoid {
        amplitude_n: [f64; 2],
        frequency_radps: [f64; 2],
        phase_rad: [f64; 2],
    },
    Constant {
        value_n: [f64; 2],
    },
    /// Zero-order hold through `(t_s, value_n)` breakpoints, zero before the first.
    Piecewise {
        breakpoints: Vec<Breakpoint>,
    },
    /// Force supplied at run time by an interactive session.
    ExternalStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Breakpoint {
    pub t_s: f64,
    pub value_n: [f64; 2],
}

impl ForceProfile {
    /// Unclamped force at time `t`.
    pub fn sample(&self, t: f64) -> Vector2<f64> {
        match self {
            Self::Sinusoid {
                amplitude_n,
                frequency_radps,
                phase_rad,
            } => Vector2::from_fn(|i, _| {
                amplitude_n[i] * (frequency_radps[i] * t + phase_rad[i]).sin()
            }),
            Self::Constant { value_n } => Vector2::new(value_n[0], value_n[1]),
            Self::Piecewise { breakpoints } => breakpoints
                .iter()
                .take_while(|b| b.t_s <= t)
                .last()
                .map(|b| Vector2::new(b.value_n[0], b.value_n[1]))
                .unwrap_or_else(Vector2::zeros),
            Self::ExternalStream => Vector2::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditToggles {
    pub lyapunov: bool,
    pub skew_symmetry: bool,
    pub linearization: bool,
    pub partition: bool,
}

impl AuditToggles {
    pub fn all() -> Self {
        Self {
            lyapunov: true,
            skew_symmetry: true,
            linearization: true,
            partition: true,
        }
    }

    pub fn none() -> Self {
        Self {
            lyapunov: false,
            skew_symmetry: false,
            linearization: false,
            partition: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dt_s: f64,
    pub duration_s: f64,
    pub audits: AuditToggles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub trace_csv: String,
    pub metrics_json: String,
    pub metrics_txt: String,
    pub certificate_txt: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            trace_csv: "trace.csv".into(),
            metrics_json: "metrics.json".into(),
            metrics_txt: "metrics.txt".into(),
            certificate_txt: "certificate.txt".into(),
        }
    }
}

/// Operating configuration `q0 = [−5π/12, 5π/6]`, end effector at (0.44, 0).
pub const PAPER_Q0: [f64; 2] = [-5.0 * PI / 12.0, 5.0 * PI / 6.0];

impl ScenarioConfig {
    /// The published two-link experiment: sinusoidal push, 60 s, dt = 1 ms.
    pub fn paper() -> Self {
        let arm = TwoLinkParams::default();
        let subsystems = crate::switched_reference::paper_subsystem_matrices()
            .iter()
            .zip(crate::admittance_mrac::PAPER_GAMMA)
            .map(|(a, g)| SubsystemConfig {
                a_m: from_matrix(a),
                gamma_diag: [g, g],
                q: [[1.0, 0.0], [0.0, 1.0]],
            })
            .collect();
        Self {
            name: "paper_scenario".into(),
            manipulator: ManipulatorConfig {
                m1_kg: arm.m1,
                m2_kg: arm.m2,
                l1_m: arm.l1,
                l2_m: arm.l2,
                g_mps2: arm.g,
                // planar arm moving in the horizontal plane
                gravity_enabled: false,
                q0_rad: PAPER_Q0,
            },
            admittance: AdmittanceConfig {
                a_plant: [[0.0, 1.0], [0.0, 0.0]],
                virtual_mass_kg: 1.0,
                b_m: [0.0, 1.0],
                f_max_n: crate::admittance_mrac::PAPER_F_MAX,
                threshold_m: crate::switched_reference::PAPER_THRESHOLD,
                fixed_region: None,
                switch_source: SwitchSource::Reference,
                freeze_gains: false,
                initial_gains: None,
                lyapunov_p: Some(cqlf::PAPER_P),
                cqlf_max_iter: 500,
                subsystems,
            },
            tracking: TrackingConfig {
                kp_per_s2: [[100.0, 0.0], [0.0, 100.0]],
                kd_per_s: [[20.0, 0.0], [0.0, 20.0]],
            },
            force: ForceProfile::Sinusoid {
                amplitude_n: [7.5, 7.5],
                frequency_radps: [0.5, 0.5],
                phase_rad: [0.0, PI / 2.0],
            },
            run: RunConfig {
                dt_s: crate::integrate::DEFAULT_DT,
                duration_s: 60.0,
                audits: AuditToggles::all(),
            },
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses JSON when the text starts with `{`, TOML otherwise.
    pub fn from_str_auto(s: &str) -> Result<Self, ConfigError> {
        if s.trim_start().starts_with('{') {
            Self::from_json_str(s)
        } else {
            Self::from_toml_str(s)
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str_auto(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always TOML-representable")
    }

    pub fn step_count(&self) -> usize {
        (self.run.duration_s / self.run.dt_s).round() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.manipulator;
        self.arm_params()
            .validate()
            .map_err(|e| ConfigError::invalid("manipulator", e.to_string()))?;
        if !m.q0_rad.iter().all(|v| v.is_finite()) {
            return Err(ConfigError::invalid("manipulator.q0_rad", "non-finite"));
        }

        let a = &self.admittance;
        let n = a.subsystems.len();
        if n == 0 {
            return Err(ConfigError::invalid("admittance.subsystems", "at least one subsystem required"));
        }
        if !(a.threshold_m.is_finite() && a.threshold_m > 0.0) {
            return Err(ConfigError::invalid("admittance.threshold_m", "must be > 0"));
        }
        if !(a.f_max_n.is_finite() && a.f_max_n > 0.0) {
            return Err(ConfigError::invalid("admittance.f_max_n", "must be > 0"));
        }
        if !(a.virtual_mass_kg.is_finite() && a.virtual_mass_kg > 0.0) {
            return Err(ConfigError::invalid("admittance.virtual_mass_kg", "must be > 0"));
        }
        match a.fixed_region {
            Some(r) if r == 0 || r > n => {
                return Err(ConfigError::invalid(
                    "admittance.fixed_region",
                    format!("must be in 1..={n}, got {r}"),
                ))
            }
            None if n != 2 => {
                return Err(ConfigError::invalid(
                    "admittance.subsystems",
                    format!("threshold partition needs exactly 2 subsystems, got {n} (or set fixed_region)"),
                ))
            }
            _ => {}
        }
        for (i, s) in a.subsystems.iter().enumerate() {
            if !s.gamma_diag.iter().all(|g| g.is_finite() && *g > 0.0) {
                return Err(ConfigError::invalid(
                    format!("admittance.subsystems[{i}].gamma_diag"),
                    "entries must be > 0",
                ));
            }
        }
        if let Some(g) = &a.initial_gains {
            if g.len() != n {
                return Err(ConfigError::invalid(
                    "admittance.initial_gains",
                    format!("{} rows for {n} subsystems", g.len()),
                ));
            }
        }

        PdGains::new(to_matrix(&self.tracking.kp_per_s2), to_matrix(&self.tracking.kd_per_s))
            .map_err(|e| ConfigError::invalid(format!("tracking.{}", pd_field(e.field)), "must be symmetric positive definite"))?;

        match &self.force {
            ForceProfile::Sinusoid {
                amplitude_n,
                frequency_radps,
                phase_rad,
            } => {
                for v in amplitude_n.iter().chain(phase_rad) {
                    if !v.is_finite() {
                        return Err(ConfigError::invalid("force", "non-finite value"));
                    }
                }
                if frequency_radps
                    .iter()
                    .any(|w| !(w.is_finite() && w.abs() <= MAX_FORCE_FREQUENCY_RADPS))
                {
                    return Err(ConfigError::invalid(
                        "force.frequency_radps",
                        format!("must be at most {MAX_FORCE_FREQUENCY_RADPS:.3} rad/s (1.2 Hz)"),
                    ));
                }
            }
            ForceProfile::Constant { value_n } => {
                if !value_n.iter().all(|v| v.is_finite()) {
                    return Err(ConfigError::invalid("force.value_n", "non-finite value"));
                }
            }
            ForceProfile::Piecewise { breakpoints } => {
                if breakpoints.windows(2).any(|w| w[1].t_s < w[0].t_s) {
                    return Err(ConfigError::invalid("force.breakpoints", "times must be non-decreasing"));
                }
            }
            ForceProfile::ExternalStream => {}
        }

        let r = &self.run;
        if !(r.dt_s.is_finite() && r.dt_s > 0.0) {
            return Err(ConfigError::invalid("run.dt_s", "must be > 0"));
        }
        if !(r.duration_s.is_finite() && r.duration_s >= 0.0) {
            return Err(ConfigError::invalid("run.duration_s", "must be >= 0"));
        }
        Ok(())
    }

    pub fn arm_params(&self) -> TwoLinkParams {
        let m = &self.manipulator;
        TwoLinkParams {
            m1: m.m1_kg,
            m2: m.m2_kg,
            l1: m.l1_m,
            l2: m.l2_m,
            g: m.g_mps2,
            gravity_enabled: m.gravity_enabled,
        }
    }

    pub fn pd_gains(&self) -> Result<PdGains, ConfigError> {
        PdGains::new(to_matrix(&self.tracking.kp_per_s2), to_matrix(&self.tracking.kd_per_s))
            .map_err(|e| ConfigError::invalid(format!("tracking.{}", pd_field(e.field)), "must be symmetric positive definite"))
    }

    pub fn subsystem_matrices(&self) -> Vec<Matrix2<f64>> {
        self.admittance.subsystems.iter().map(|s| to_matrix(&s.a_m)).collect()
    }

    pub fn reference_model(&self) -> Result<ReferenceModel, ConfigError> {
        let a = &self.admittance;
        let b = Vector2::new(a.b_m[0], a.b_m[1]);
        let subsystems = a
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Subsystem::new(to_matrix(&s.a_m), b, i).map_err(|e| {
                    ConfigError::invalid(format!("admittance.subsystems[{i}].a_m"), e.to_string())
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let partition = match a.fixed_region {
            Some(r) => Partition::single(r - 1),
            None => Partition::symmetric_band(a.threshold_m),
        };
        ReferenceModel::new(subsystems, partition)
            .map_err(|e| ConfigError::invalid("admittance", e.to_string()))
    }

    /// CQLF for the configured family: the supplied `P` is verified, or one
    /// is searched for.
    pub fn certify(&self) -> Result<CqlfCertificate, CertifyError> {
        let family = self.subsystem_matrices();
        let q: Vec<Matrix2<f64>> = self.admittance.subsystems.iter().map(|s| to_matrix(&s.q)).collect();
        let cert = match &self.admittance.lyapunov_p {
            Some(p) => cqlf::verify_cqlf(&family, &to_matrix(p)).map_err(CertifyError::Rejected)?,
            None => {
                cqlf::search_cqlf(&family, self.admittance.cqlf_max_iter, cqlf::SEARCH_EPS)
                    .map_err(CertifyError::Infeasible)?
                    .certificate
            }
        };
        Ok(cert.with_design_q(q))
    }

    /// Per-axis channel configuration using the certified `P`.
    pub fn channel_config(&self, p: Matrix2<f64>) -> Result<ChannelConfig, ConfigError> {
        let a = &self.admittance;
        let plant = AdmittancePlant::new(to_matrix(&a.a_plant), a.virtual_mass_kg)
            .map_err(|e| ConfigError::invalid("admittance.a_plant", e.to_string()))?;
        let reference = self.reference_model()?;
        let initial_gains = match &a.initial_gains {
            Some(rows) => rows.iter().map(|r| RowVector2::new(r[0], r[1])).collect(),
            None => {
                let k1 = crate::admittance_mrac::nominal_gains(&plant, reference.subsystems()[0].a(), 0)
                    .map_err(|e| ConfigError::invalid("admittance.subsystems[0].a_m", e.to_string()))?;
                vec![k1; a.subsystems.len()]
            }
        };
        Ok(ChannelConfig {
            plant,
            reference,
            p,
            gamma: a
                .subsystems
                .iter()
                .map(|s| Vector2::new(s.gamma_diag[0], s.gamma_diag[1]))
                .collect(),
            initial_gains,
            f_max: a.f_max_n,
            switch_source: a.switch_source,
            freeze_gains: a.freeze_gains,
        })
    }

    /// Apply `key.path=value` overrides. A path segment also matches a key
    /// carrying a unit suffix (`amplitude` → `amplitude_n`), and a scalar
    /// assigned to an array fills every element.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut root = toml::Value::try_from(self).expect("config is always TOML-representable");
        for spec in overrides {
            apply_override(&mut root, spec.as_ref())?;
        }
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| ConfigError::Override {
            spec: overrides.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(" "),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn pd_field(f: &str) -> &'static str {
    if f == "kp" {
        "kp_per_s2"
    } else {
        "kd_per_s"
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("CQLF rejected: {0}")]
    Rejected(CqlfRejection),
    #[error("{0}")]
    Infeasible(InfeasibleReport),
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), ConfigError> {
    let err = |reason: String| ConfigError::Override {
        spec: spec.to_string(),
        reason,
    };
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| err("expected key.path=value".into()))?;
    let value = parse_value(raw.trim());
    let mut node = root;
    let segments: Vec<&str> = path.trim().split('.').collect();
    for (depth, seg) in segments.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| err(format!("`{}` is not a table", segments[..depth].join("."))))?;
        let key = resolve_key(table, seg)
            .or_else(|| (depth + 1 == segments.len()).then(|| seg.to_string()))
            .ok_or_else(|| err(format!("unknown key `{seg}`")))?;
        if depth + 1 == segments.len() {
            let slot = table.entry(key).or_insert(toml::Value::Boolean(false));
            assign(slot, value).map_err(err)?;
            return Ok(());
        }
        node = table.get_mut(&key).expect("resolved key exists");
    }
    Err(err("empty path".into()))
}

fn resolve_key(table: &toml::map::Map<String, toml::Value>, seg: &str) -> Option<String> {
    if table.contains_key(seg) {
        return Some(seg.to_string());
    }
    let prefix = format!("{seg}_");
    let mut hits = table.keys().filter(|k| k.starts_with(&prefix));
    match (hits.next(), hits.next()) {
        (Some(k), None) => Some(k.clone()),
        _ => None,
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn assign(slot: &mut toml::Value, value: toml::Value) -> Result<(), String> {
    match (slot, value) {
        (toml::Value::Array(items), v @ (toml::Value::Integer(_) | toml::Value::Float(_))) => {
            for item in items.iter_mut() {
                assign(item, v.clone())?;
            }
            Ok(())
        }
        (slot @ toml::Value::Float(_), toml::Value::Integer(i)) => {
            *slot = toml::Value::Float(i as f64);
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_config_validates_and_round_trips() {
        let cfg = ScenarioConfig::paper();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string();
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml_string(), text);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ScenarioConfig::from_str_auto(&json).unwrap(), cfg);
    }

    #[test]
    fn paper_operating_point() {
        use crate::manipulator::ManipulatorModel;
        let cfg = ScenarioConfig::paper();
        let q0 = Vector2::new(cfg.manipulator.q0_rad[0], cfg.manipulator.q0_rad[1]);
        let x = cfg.arm_params().forward_kinematics(&q0);
        assert!((x[0] - 1.7 * (5.0 * PI / 12.0).cos()).abs() < 1e-12);
        assert!(x[1].abs() < 1e-12);
    }

    #[test]
    fn override_with_unit_suffix_and_broadcast() {
        let cfg = ScenarioConfig::paper().with_overrides(&["force.amplitude=0"]).unwrap();
        match cfg.force {
            ForceProfile::Sinusoid { amplitude_n, .. } => assert_eq!(amplitude_n, [0.0, 0.0]),
            _ => panic!(),
        }
        let cfg = ScenarioConfig::paper()
            .with_overrides(&["run.duration_s=2", "admittance.fixed_region=1"])
            .unwrap();
        assert_eq!(cfg.run.duration_s, 2.0);
        assert_eq!(cfg.admittance.fixed_region, Some(1));
        let cfg = ScenarioConfig::paper()
            .with_overrides(&["force.kind=\"constant\"", "force.value_n=[20, 0]", "force.amplitude_n=0"])
            .unwrap_err();
        assert!(cfg.to_string().contains("override"), "{cfg}");
    }

    #[test]
    fn override_errors_name_the_key() {
        let err = ScenarioConfig::paper().with_overrides(&["nope.x=1"]).unwrap_err();
        assert!(err.to_string().contains("nope"));
        let err = ScenarioConfig::paper().with_overrides(&["run.dt_s=-1"]).unwrap_err();
        assert!(err.to_string().contains("run.dt_s"));
    }

    #[test]
    fn validation_names_fields() {
        let mut cfg = ScenarioConfig::paper();
        cfg.force = ForceProfile::Sinusoid {
            amplitude_n: [1.0, 1.0],
            frequency_radps: [10.0, 0.5],
            phase_rad: [0.0, 0.0],
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("force.frequency_radps"));

        let mut cfg = ScenarioConfig::paper();
        cfg.admittance.subsystems[1].gamma_diag = [0.0, 1.0];
        assert!(cfg.validate().unwrap_err().to_string().contains("subsystems[1].gamma_diag"));

        let mut cfg = ScenarioConfig::paper();
        cfg.admittance.subsystems[1].a_m = [[0.0, 1.0], [20.0, -25.0]];
        let err = cfg.reference_model().unwrap_err().to_string();
        assert!(err.contains("subsystems[1].a_m") && err.contains("Hurwitz"), "{err}");

        let mut cfg = ScenarioConfig::paper();
        cfg.tracking.kd_per_s = [[-1.0, 0.0], [0.0, 1.0]];
        assert!(cfg.validate().unwrap_err().to_string().contains("tracking.kd_per_s"));
    }

    #[test]
    fn parse_errors_carry_location() {
        let text = ScenarioConfig::paper().to_toml_string().replace("dt_s = 0.001", "dt_s = \"fast\"");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        assert!(err.contains("dt_s"), "{err}");
    }

    #[test]
    fn force_profiles() {
        let f = ForceProfile::Piecewise {
            breakpoints: vec![
                Breakpoint { t_s: 1.0, value_n: [2.0, 0.0] },
                Breakpoint { t_s: 3.0, value_n: [0.0, -1.0] },
            ],
        };
        assert_eq!(f.sample(0.5), Vector2::zeros());
        assert_eq!(f.sample(1.0), Vector2::new(2.0, 0.0));
        assert_eq!(f.sample(10.0), Vector2::new(0.0, -1.0));
        let s = ScenarioConfig::paper().force;
        let v = s.sample(PI);
        assert!((v[0] - 7.5 * (0.5 * PI).sin()).abs() < 1e-12);
        assert!((v[1] - 7.5 * (0.5 * PI).cos()).abs() < 1e-12);
    }

    #[test]
    fn certify_paper_and_search_fallback() {
        let cfg = ScenarioConfig::paper();
        let cert = cfg.certify().unwrap();
        assert_eq!(cert.p, crate::cqlf::paper_p());
        let mut cfg = ScenarioConfig::paper();
        cfg.admittance.lyapunov_p = None;
        assert!(cfg.certify().is_ok());
        let mut cfg = ScenarioConfig::paper();
        cfg.admittance.lyapunov_p = Some([[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(cfg.certify(), Err(CertifyError::Rejected(_))));
    }
}
