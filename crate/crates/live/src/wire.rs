//! JSON messages exchanged over the WebSocket. One text frame carries one
//! message. `wire_schema.md` at the repository root is the normative description.

use admit_core::sim::StepRecord;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireCommand {
    /// Requested external force in newtons; clamped per axis to `f_max` by the server.
    SetForce { force_n: [f64; 2] },
    /// Equivalent to `set_force` with zero force.
    Release,
    Pause,
    Resume,
    /// Back to `q0` at rest, zero deviation, initial gains, zero force.
    Reset,
    /// `path=value` overrides applied to the current config; the session restarts.
    SetConfigOverrides { overrides: Vec<String> },
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Hello),
    Snapshot(WireSnapshot),
    Status(Status),
    Error(ErrorMessage),
    Terminal(Terminal),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub schema_version: u32,
    pub scenario: String,
    pub dt_s: f64,
    pub decimation: usize,
    pub f_max_n: f64,
    pub threshold_m: f64,
    pub safety_bound_m: f64,
    pub operating_point_m: [f64; 2],
    pub link_lengths_m: [f64; 2],
    pub regions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSnapshot {
    pub schema_version: u32,
    /// Incremented on every reset or config change; `t_s` restarts at 0.
    pub epoch: u64,
    /// Strictly increasing across the whole connection lifetime of the server.
    pub seq: u64,
    pub step: usize,
    pub t_s: f64,
    pub q_rad: [f64; 2],
    /// End-effector position in the base frame.
    pub x_base_m: [f64; 2],
    /// End-effector deviation from the operating point.
    pub x_dev_m: [f64; 2],
    /// Reference state `[Δ_m1, Δ_m2]` per axis (x, y).
    pub delta_m: [[f64; 2]; 2],
    /// Admittance plant state `[Δ1, Δ2]` per axis.
    pub delta: [[f64; 2]; 2],
    /// Active region per axis, 1-based.
    pub region: [usize; 2],
    /// `K_x` rows per axis, one `[k1, k2]` per region.
    pub gains: [Vec<[f64; 2]>; 2],
    pub force_requested_n: [f64; 2],
    pub force_applied_n: [f64; 2],
    pub tau_nm: [f64; 2],
    pub lyapunov: [f64; 2],
    /// True while any axis runs outside region 1.
    pub safety: bool,
    pub paused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub epoch: u64,
    pub paused: bool,
    pub step: usize,
    pub t_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub message: String,
}

/// The session stopped advancing; only `reset` or `set_config_overrides` revive it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub epoch: u64,
    pub class: String,
    pub reason: String,
    pub step: usize,
    pub t_s: f64,
}

impl WireSnapshot {
    pub fn from_record(
        r: &StepRecord,
        operating_point: [f64; 2],
        requested: [f64; 2],
        epoch: u64,
        seq: u64,
        paused: bool,
    ) -> Self {
        let [ax, ay] = &r.axes;
        Self {
            schema_version: SCHEMA_VERSION,
            epoch,
            seq,
            step: r.step,
            t_s: r.t,
            q_rad: r.q,
            x_base_m: [operating_point[0] + r.x[0], operating_point[1] + r.x[1]],
            x_dev_m: r.x,
            delta_m: [ax.delta_m, ay.delta_m],
            delta: [ax.delta, ay.delta],
            region: [ax.region + 1, ay.region + 1],
            gains: [ax.gains.clone(), ay.gains.clone()],
            force_requested_n: requested,
            force_applied_n: r.f_ext,
            tau_nm: r.tau,
            lyapunov: [ax.lyapunov, ay.lyapunov],
            safety: r.axes.iter().any(|a| a.region > 0),
            paused,
        }
    }
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_tags() {
        let c: WireCommand = serde_json::from_str(r#"{"kind":"set_force","force_n":[25,0]}"#).unwrap();
        assert_eq!(c, WireCommand::SetForce { force_n: [25.0, 0.0] });
        let c: WireCommand = serde_json::from_str(r#"{"kind":"release"}"#).unwrap();
        assert_eq!(c, WireCommand::Release);
        let c: WireCommand =
            serde_json::from_str(r#"{"kind":"set_config_overrides","overrides":["admittance.f_max_n=10"]}"#).unwrap();
        assert!(matches!(c, WireCommand::SetConfigOverrides { .. }));
        assert!(serde_json::from_str::<WireCommand>(r#"{"kind":"launch"}"#).is_err());
        assert!(serde_json::from_str::<WireCommand>(r#"{"kind":"set_force","force_n":[1,2],"x":1}"#).is_err());
        // payload-free kinds ignore extra keys
        let c: WireCommand = serde_json::from_str(r#"{"kind":"pause","extra":1}"#).unwrap();
        assert_eq!(c, WireCommand::Pause);
    }

    #[test]
    fn serialization_is_deterministic() {
        let msg = ServerMessage::Status(Status {
            epoch: 2,
            paused: true,
            step: 40,
            t_s: 0.04,
        });
        assert_eq!(msg.to_json(), r#"{"type":"status","epoch":2,"paused":true,"step":40,"t_s":0.04}"#);
        let back: ServerMessage = serde_json::from_str(&msg.to_json()).unwrap();
        assert_eq!(back, msg);
    }
}
