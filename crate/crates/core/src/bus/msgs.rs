use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autoir::AutoIRProgram;
use crate::rules::{MotionState, StopReason, VehicleStatus};

pub const TOPIC_USER_INSTRUCTION: &str = "/flex/user_instruction";
pub const TOPIC_AUTOIR: &str = "/flex/AutoIR";
pub const TOPIC_MOTION_STATE: &str = "/sim/api/motion/state";
pub const TOPIC_VELOCITY: &str = "/sim/vehicle/status/velocity_status";
pub const TOPIC_OBJECTS: &str = "/sim/perception/object_recognition/detection/objects";
pub const TOPIC_TRAFFIC_LIGHTS: &str =
    "/sim/perception/traffic_light_recognition/traffic_light/detection/rois";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemaId {
    Utterance,
    AutoIRProgram,
    MotionState,
    VelocityStatus,
    DetectedObjects,
    TrafficLightRois,
    VehicleStatus,
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A natural-language utterance. `timestamp_ms` is wall-clock milliseconds
/// since the Unix epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub timestamp_ms: u64,
}

impl Utterance {
    /// `None` when the text is blank.
    pub fn new(text: impl Into<String>) -> Option<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return None;
        }
        let timestamp_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Some(Utterance { text, timestamp_ms })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserInstructionMsg {
    pub trace_id: u64,
    pub utterance: Utterance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoIrMsg {
    pub trace_id: u64,
    pub program: AutoIRProgram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionStateMsg {
    pub state: MotionState,
    pub stop_reason: Option<StopReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityStatusMsg {
    /// m/s
    pub longitudinal_velocity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    Cone,
    Pedestrian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub id: String,
    pub kind: ObjectKind,
    pub lane: String,
    /// Longitudinal distance ahead of the vehicle front, metres.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedObjectsMsg {
    pub objects: Vec<DetectedObject>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LightColor {
    Red,
    Green,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficLightRoi {
    pub light_id: String,
    pub distance: f64,
    /// `None` when the classifier is disabled.
    pub color: Option<LightColor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficLightRoisMsg {
    pub rois: Vec<TrafficLightRoi>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schema", content = "data")]
pub enum Payload {
    Utterance(UserInstructionMsg),
    AutoIRProgram(AutoIrMsg),
    MotionState(MotionStateMsg),
    VelocityStatus(VelocityStatusMsg),
    DetectedObjects(DetectedObjectsMsg),
    TrafficLightRois(TrafficLightRoisMsg),
    VehicleStatus(VehicleStatus),
}

impl Payload {
    pub fn schema(&self) -> SchemaId {
        match self {
            Payload::Utterance(_) => SchemaId::Utterance,
            Payload::AutoIRProgram(_) => SchemaId::AutoIRProgram,
            Payload::MotionState(_) => SchemaId::MotionState,
            Payload::VelocityStatus(_) => SchemaId::VelocityStatus,
            Payload::DetectedObjects(_) => SchemaId::DetectedObjects,
            Payload::TrafficLightRois(_) => SchemaId::TrafficLightRois,
            Payload::VehicleStatus(_) => SchemaId::VehicleStatus,
        }
    }
}
