use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::map::{Fixture, FixtureKind, LaneMap};
use super::predicates::Predicate;
use super::{SimError, SPEED_CAP};
use crate::bus::msgs::LightColor;
use crate::rules::Perception;

pub const BUILTIN_SCENARIOS: [&str; 5] = [
    "malfunctioning_traffic_light",
    "restricted_lane_cruising",
    "pedestrian_margin",
    "cone_opposite_lane",
    "extended_stop",
];

fn builtin_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "malfunctioning_traffic_light" => {
            include_str!("../../data/scenarios/malfunctioning_traffic_light.json")
        }
        "restricted_lane_cruising" => include_str!("../../data/scenarios/restricted_lane_cruising.json"),
        "pedestrian_margin" => include_str!("../../data/scenarios/pedestrian_margin.json"),
        "cone_opposite_lane" => include_str!("../../data/scenarios/cone_opposite_lane.json"),
        "extended_stop" => include_str!("../../data/scenarios/extended_stop.json"),
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialVehicle {
    pub lane: String,
    pub offset: f64,
    #[serde(default)]
    pub speed: f64,
    pub cruise_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EventAction {
    SetLight { light_id: String, color: LightColor },
    Spawn(Fixture),
    Remove { fixture_id: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    /// Seconds of sim time.
    pub at: f64,
    pub action: EventAction,
}

/// When the scripted instruction is injected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Trigger {
    At { t: f64 },
    /// After the vehicle has been continuously stopped this long.
    StoppedFor { secs: f64 },
    /// `delay` seconds after the tag first appears.
    Perceived {
        tag: Perception,
        #[serde(default)]
        delay: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionScript {
    pub phrasings: Vec<String>,
    pub trigger: Trigger,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub map: LaneMap,
    /// The lane the mission planner returns to when no lane is preferred.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_lane: Option<String>,
    #[serde(default)]
    pub lights: BTreeMap<String, LightColor>,
    pub vehicle: InitialVehicle,
    #[serde(default)]
    pub events: Vec<ScriptEvent>,
    /// Seconds of sim time a run lasts.
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<InstructionScript>,
    #[serde(default)]
    pub predicates: Vec<Predicate>,
}

impl Scenario {
    pub fn builtin(name: &str) -> Result<Scenario, SimError> {
        let text = builtin_text(name).ok_or_else(|| SimError::UnknownScenario(name.to_string()))?;
        Scenario::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::BadScript(e.to_string()))?;
        scenario.check().map_err(SimError::BadScript)?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Scenario, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::BadScript(format!("{}: {e}", path.display())))?;
        Scenario::from_json(&text)
    }

    /// A builtin name, or else a path to a script file.
    pub fn load(name_or_path: &str) -> Result<Scenario, SimError> {
        if builtin_text(name_or_path).is_some() {
            return Scenario::builtin(name_or_path);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            Scenario::from_file(path)
        } else {
            Err(SimError::UnknownScenario(name_or_path.to_string()))
        }
    }

    pub fn check(&self) -> Result<(), String> {
        self.map.check()?;
        for f in &self.map.fixtures {
            if let FixtureKind::StopLine { light_id } = &f.kind {
                if !self.lights.contains_key(light_id) {
                    return Err(format!("stop line `{}` refers to unknown light `{light_id}`", f.id));
                }
            }
        }
        let v = &self.vehicle;
        let lane = self
            .map
            .lane(&v.lane)
            .ok_or_else(|| format!("vehicle starts on unknown lane `{}`", v.lane))?;
        if !(0.0..=lane.length).contains(&v.offset) {
            return Err(format!("vehicle offset {} is outside lane `{}`", v.offset, v.lane));
        }
        for (what, s) in [("speed", v.speed), ("cruise_speed", v.cruise_speed)] {
            if !(0.0..=SPEED_CAP).contains(&s) {
                return Err(format!("vehicle {what} {s} is outside [0, {SPEED_CAP}]"));
            }
        }
        if let Some(home) = &self.home_lane {
            if self.map.lane(home).is_none() {
                return Err(format!("home lane `{home}` does not exist"));
            }
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(format!("horizon must be positive, got {}", self.horizon));
        }
        let mut last = 0.0;
        for e in &self.events {
            if !(e.at.is_finite() && e.at >= last) {
                return Err(format!("event times must be non-decreasing, got {} after {last}", e.at));
            }
            last = e.at;
        }
        if let Some(script) = &self.instruction {
            if script.phrasings.iter().any(|p| p.trim().is_empty()) || script.phrasings.is_empty() {
                return Err("instruction phrasings must be non-empty".into());
            }
        }
        Ok(())
    }

    pub fn fixture(&self, id: &str) -> Option<&Fixture> {
        self.map.fixtures.iter().find(|f| f.id == id)
    }
}
