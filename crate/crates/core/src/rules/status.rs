use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Below this speed (m/s) the vehicle counts as stopped.
pub const STOPPED_SPEED_EPS: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotionState {
    Driving,
    Stopped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    RedLight,
    Obstacle,
    EndOfRoad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Perception {
    TrafficLightDetected,
    ObstacleDetected,
    PedestrianDetected,
}

impl fmt::Display for Perception {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Live snapshot of the key status parameters rules condition on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleStatus {
    pub motion_state: MotionState,
    #[serde(default)]
    pub stop_reason: Option<StopReason>,
    /// m/s, never negative.
    pub speed: f64,
    #[serde(default)]
    pub perceptions: BTreeSet<Perception>,
}

impl VehicleStatus {
    /// Derives the motion state from the speed.
    pub fn from_speed(speed: f64, perceptions: impl IntoIterator<Item = Perception>) -> Self {
        let speed = speed.max(0.0);
        VehicleStatus {
            motion_state: if speed < STOPPED_SPEED_EPS {
                MotionState::Stopped
            } else {
                MotionState::Driving
            },
            stop_reason: None,
            speed,
            perceptions: perceptions.into_iter().collect(),
        }
    }

    pub fn stopped(perceptions: impl IntoIterator<Item = Perception>) -> Self {
        Self::from_speed(0.0, perceptions)
    }

    pub fn with_stop_reason(mut self, reason: StopReason) -> Self {
        self.stop_reason = Some(reason);
        self
    }

    pub fn is_consistent(&self) -> bool {
        self.speed >= 0.0
            && (self.motion_state != MotionState::Stopped || self.speed <= STOPPED_SPEED_EPS)
    }
}
