//! JSON messages exchanged with the sandbox client over `/ws`.

use palmpipe_core::pipeline::{PipelineMode, Pose, TickSnapshot};
use palmpipe_core::types::{AngleClass, PositionClass, MAX_FORCE};
use serde::{Deserialize, Serialize};

/// Client → server: steer the simulated grasp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCommand {
    pub pose: Pose,
    pub mode: PipelineMode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPose {
    #[serde(rename = "type")]
    kind: String,
    angle_deg: u32,
    position: String,
    grip_step: u32,
    mode: String,
}

impl PoseCommand {
    /// Strict parse: every field present, enumerations exact.
    pub fn parse(text: &str) -> Result<Self, String> {
        let raw: RawPose = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
        if raw.kind != "set_pose" {
            return Err(format!("unknown message type {:?}", raw.kind));
        }
        let angle = AngleClass::from_degrees(raw.angle_deg).map_err(|e| e.to_string())?;
        let position = match raw.position.as_str() {
            "center" => PositionClass::Center,
            "left" => PositionClass::Left,
            "right" => PositionClass::Right,
            other => return Err(format!("unknown position {other:?} (center, left or right)")),
        };
        let pose = Pose::new(angle, position, raw.grip_step).map_err(|e| e.to_string())?;
        let mode = match raw.mode.as_str() {
            "direct" => PipelineMode::Direct,
            "masked" => PipelineMode::masked(),
            other => return Err(format!("unknown mode {other:?} (direct or masked)")),
        };
        Ok(Self { pose, mode })
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "type": "set_pose",
            "angle_deg": self.pose.angle.degrees(),
            "position": self.pose.position.name(),
            "grip_step": self.pose.grip_step,
            "mode": self.mode.name(),
        })
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMsg {
    pub angle: u32,
    pub position: String,
    pub pattern_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactMsg {
    pub x_mm: f64,
    pub y_mm: f64,
    pub tau_a: f64,
    pub tau_e: f64,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyMsg {
    pub merge: f64,
    pub resize: f64,
    pub cnn: Option<f64>,
    pub mask: Option<f64>,
    pub ik: f64,
    pub total: f64,
}

/// Server → client, one per pipeline tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub tick: u64,
    pub mode: String,
    /// Fused sensor grid, N (0–9).
    pub merged: [[f64; 10]; 10],
    /// Normalized bicubic output (0–1).
    pub downsized: [[f64; 3]; 3],
    pub prediction: Option<PredictionMsg>,
    pub mask: Option<[[bool; 3]; 3]>,
    pub stimulus: [[f64; 3]; 3],
    pub contacts: Vec<ContactMsg>,
    pub latency_ms: LatencyMsg,
}

impl From<&TickSnapshot> for TickMessage {
    fn from(s: &TickSnapshot) -> Self {
        debug_assert!(s.merged.max() <= MAX_FORCE);
        Self {
            kind: "tick".into(),
            tick: s.tick,
            mode: s.mode.name().into(),
            merged: *s.merged.rows(),
            downsized: s.downsized,
            prediction: s.prediction.map(|p| PredictionMsg {
                angle: p.angle.degrees(),
                position: p.position.name().into(),
                pattern_id: p.pattern.get(),
            }),
            mask: s.mask.map(|m| *m.cells()),
            stimulus: *s.stimulus.values(),
            contacts: s
                .contacts
                .iter()
                .map(|c| ContactMsg {
                    x_mm: c.target.x,
                    y_mm: c.target.y,
                    tau_a: c.angles.tau_a,
                    tau_e: c.angles.tau_e,
                    active: c.active(),
                })
                .collect(),
            latency_ms: LatencyMsg {
                merge: s.latency.merge,
                resize: s.latency.resize,
                cnn: s.latency.cnn,
                mask: s.latency.mask,
                ik: s.latency.ik,
                total: s.latency.total,
            },
        }
    }
}

pub fn error_message(message: &str) -> String {
    serde_json::json!({ "type": "error", "message": message }).to_string()
}
