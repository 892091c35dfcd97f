//! A small deterministic driving stack: a lane-graph world, a perception
//! pass, a planner with live node parameters, and a kinematic vehicle.
//!
//! Offsets are metres along a lane, measured at the vehicle front. Lanes
//! that are same-direction neighbours share an offset frame; an opposite
//! twin runs the other way. The shipped maps follow left-hand traffic, so
//! the leftmost lane is the outermost one.

pub mod map;
pub mod predicates;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoir::{ConfigValue, ParamPath};
use crate::bus::msgs::{
    DetectedObject, DetectedObjectsMsg, LightColor, MotionStateMsg, ObjectKind, TrafficLightRoi,
    TrafficLightRoisMsg, VelocityStatusMsg, TOPIC_MOTION_STATE, TOPIC_OBJECTS,
    TOPIC_TRAFFIC_LIGHTS, TOPIC_VELOCITY,
};
use crate::bus::{Bus, BusError, Payload, Publisher, SchemaId};
use crate::registry::{IssueCode, ParamRegistry};
use crate::rules::{MotionState, Perception, StopReason, VehicleStatus, STOPPED_SPEED_EPS};

pub use map::{Fixture, FixtureKind, Lane, LaneMap};
pub use predicates::{evaluate_predicates, Check, Predicate, PredicateOutcome, When};
pub use scenario::{EventAction, InitialVehicle, InstructionScript, Scenario, ScriptEvent, Trigger, BUILTIN_SCENARIOS};

/// Seconds per tick.
pub const DT: f64 = 0.1;
pub const SENSING_RANGE: f64 = 30.0;
/// 60 km/h.
pub const SPEED_CAP: f64 = 16.7;
/// Bound on |acceleration|, m/s².
pub const ACCEL_LIMIT: f64 = 3.0;
/// Deceleration the planner uses when approaching a stop point.
pub const PLAN_DECEL: f64 = 2.5;
/// Extra room left in front of every stop point.
pub const STOP_BUFFER: f64 = 0.05;
/// Ticks for one lateral move (lane change, or one leg of a bypass).
pub const MANEUVER_TICKS: u32 = 20;
/// A bypass starts once the blocking object is this close.
pub const BYPASS_TRIGGER: f64 = 12.0;
/// How far past the object the vehicle drives before returning.
pub const PASS_CLEARANCE: f64 = 8.0;
/// No preference lane changes with a stop point closer than this.
pub const LANE_CHANGE_CLEARANCE: f64 = 15.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("bad scenario script: {0}")]
    BadScript(String),
    #[error("no node parameter at `{0}`")]
    UnknownPath(String),
    #[error("{path}: {message}")]
    TypeMismatch { path: String, message: String },
    #[error("{path}: {message}")]
    OutOfRange { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LanePrefer {
    #[serde(rename = "LEFT")]
    Left,
    #[serde(rename = "RIGHT")]
    Right,
    #[serde(rename = "NONE")]
    NoPreference,
}

impl LanePrefer {
    fn token(self) -> &'static str {
        match self {
            LanePrefer::Left => "LEFT",
            LanePrefer::Right => "RIGHT",
            LanePrefer::NoPreference => "NONE",
        }
    }
}

pub const USE_FLAG: &str = "perception/traffic_light_classifier_node/use_flag";
pub const LANE_PREFER: &str = "planning/mission_planner/lane_prefer";
pub const STOP_MARGIN: &str = "planning/behavior_velocity_planner_node/stop_margin";
pub const STOP_DURATION: &str = "planning/behavior_velocity_planner_node/stop_duration";
pub const USE_OPPOSITE_LANE: &str = "planning/behavior_path_planner/use_opposite_lane";

/// The live parameters of the simulated stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub use_flag: bool,
    pub lane_prefer: LanePrefer,
    /// metres
    pub stop_margin: f64,
    /// seconds
    pub stop_duration: f64,
    pub use_opposite_lane: bool,
}

impl Default for NodeParams {
    fn default() -> Self {
        NodeParams {
            use_flag: true,
            lane_prefer: LanePrefer::NoPreference,
            stop_margin: 1.0,
            stop_duration: 2.0,
            use_opposite_lane: false,
        }
    }
}

fn registry() -> &'static ParamRegistry {
    static REGISTRY: OnceLock<ParamRegistry> = OnceLock::new();
    REGISTRY.get_or_init(ParamRegistry::shipped)
}

impl NodeParams {
    pub const PATHS: [&'static str; 5] = [USE_FLAG, LANE_PREFER, STOP_MARGIN, STOP_DURATION, USE_OPPOSITE_LANE];

    pub fn get(&self, path: &ParamPath) -> Option<ConfigValue> {
        Some(match path.to_string().as_str() {
            USE_FLAG => ConfigValue::Bool(self.use_flag),
            LANE_PREFER => ConfigValue::Token(self.lane_prefer.token().into()),
            STOP_MARGIN => ConfigValue::Number(self.stop_margin),
            STOP_DURATION => ConfigValue::Number(self.stop_duration),
            USE_OPPOSITE_LANE => ConfigValue::Bool(self.use_opposite_lane),
            _ => return None,
        })
    }

    /// Writes one parameter and returns the value it replaced.
    pub fn set(&mut self, path: &ParamPath, value: &ConfigValue) -> Result<ConfigValue, SimError> {
        let key = path.to_string();
        let old = self.get(path).ok_or_else(|| SimError::UnknownPath(key.clone()))?;
        let desc = registry().get(path).ok_or_else(|| SimError::UnknownPath(key.clone()))?;
        desc.check(value).map_err(|(code, message)| match code {
            IssueCode::OutOfRange => SimError::OutOfRange { path: key.clone(), message },
            _ => SimError::TypeMismatch { path: key.clone(), message },
        })?;
        match (key.as_str(), value) {
            (USE_FLAG, ConfigValue::Bool(b)) => self.use_flag = *b,
            (USE_OPPOSITE_LANE, ConfigValue::Bool(b)) => self.use_opposite_lane = *b,
            (STOP_MARGIN, ConfigValue::Number(n)) => self.stop_margin = *n,
            (STOP_DURATION, ConfigValue::Number(n)) => self.stop_duration = *n,
            (LANE_PREFER, ConfigValue::Token(t)) => {
                self.lane_prefer = match t.as_str() {
                    "LEFT" => LanePrefer::Left,
                    "RIGHT" => LanePrefer::Right,
                    _ => LanePrefer::NoPreference,
                }
            }
            _ => unreachable!("descriptor check admitted a mistyped value"),
        }
        Ok(old)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BypassPhase {
    Depart,
    Pass,
    Return,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Maneuver {
    Cruise,
    LaneChange { from: String, to: String, ticks: u32 },
    /// Around `fixture` through the opposite twin, then back.
    Bypass { fixture: String, fixture_offset: f64, origin: String, twin: String, phase: BypassPhase, ticks: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    /// The lane the vehicle body is in.
    pub lane: String,
    /// The lane whose offset frame `offset` is measured in; during a lane
    /// change this is already the destination.
    pub route_lane: String,
    pub offset: f64,
    pub speed: f64,
    pub target_speed: f64,
    pub cruise_speed: f64,
    pub maneuver: Maneuver,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopTarget {
    pub reason: StopReason,
    /// Fixture id, or `end_of_road`.
    pub source: String,
    /// Distance from the vehicle front to the stop point, may be negative.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hold {
    pub fixture: String,
    pub since_tick: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    /// The lane the mission planner currently wants.
    pub planned_lane: String,
    pub hold: Option<Hold>,
    pub stop_target: Option<StopTarget>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerceptionFrame {
    pub tags: BTreeSet<Perception>,
    pub objects: Vec<DetectedObject>,
    pub rois: Vec<TrafficLightRoi>,
}

impl PerceptionFrame {
    fn from_detections(objects: Vec<DetectedObject>, rois: Vec<TrafficLightRoi>) -> Self {
        PerceptionFrame { tags: perception_tags(&objects, &rois), objects, rois }
    }
}

/// Tags implied by detection lists. A pedestrian is also an obstacle.
pub fn perception_tags(objects: &[DetectedObject], rois: &[TrafficLightRoi]) -> BTreeSet<Perception> {
    let mut tags = BTreeSet::new();
    if !rois.is_empty() {
        tags.insert(Perception::TrafficLightDetected);
    }
    for o in objects {
        tags.insert(Perception::ObstacleDetected);
        if o.kind == ObjectKind::Pedestrian {
            tags.insert(Perception::PedestrianDetected);
        }
    }
    tags
}

/// Rebuilds a [`VehicleStatus`] from one tick of the four status topics.
pub fn reconstruct_status(
    motion: &MotionStateMsg,
    velocity: &VelocityStatusMsg,
    objects: &DetectedObjectsMsg,
    rois: &TrafficLightRoisMsg,
) -> VehicleStatus {
    VehicleStatus {
        motion_state: motion.state,
        stop_reason: motion.stop_reason,
        speed: velocity.longitudinal_velocity,
        perceptions: perception_tags(&objects.objects, &rois.rois),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub time: f64,
    pub vehicle: Vehicle,
    pub lights: BTreeMap<String, LightColor>,
    pub fixtures: Vec<Fixture>,
    pub events_applied: usize,
    pub planner: PlannerState,
    pub params: NodeParams,
    pub perception: PerceptionFrame,
}

/// Largest speed from which braking by `PLAN_DECEL * DT` per tick, moving
/// `v * DT` each tick, covers exactly `d` metres before reaching zero.
pub fn ladder_speed(d: f64) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let unit = PLAN_DECEL * DT * DT;
    let x = d / unit;
    let mut k = (((1.0 + 8.0 * x).sqrt() - 1.0) / 2.0).floor();
    // Guard the floor against rounding at triangular numbers.
    while k * (k + 1.0) / 2.0 > x {
        k -= 1.0;
    }
    while (k + 1.0) * (k + 2.0) / 2.0 <= x {
        k += 1.0;
    }
    let f = (x - k * (k + 1.0) / 2.0) / (k + 1.0);
    (k + f) * PLAN_DECEL * DT
}

struct Sighting<'a> {
    fixture: &'a Fixture,
    distance: f64,
}

pub struct Simulator {
    scenario: Scenario,
    state: WorldState,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Simulator, SimError> {
        scenario.check().map_err(SimError::BadScript)?;
        let v = &scenario.vehicle;
        let state = WorldState {
            tick: 0,
            time: 0.0,
            vehicle: Vehicle {
                lane: v.lane.clone(),
                route_lane: v.lane.clone(),
                offset: v.offset,
                speed: v.speed,
                target_speed: v.speed,
                cruise_speed: v.cruise_speed,
                maneuver: Maneuver::Cruise,
            },
            lights: scenario.lights.clone(),
            fixtures: scenario.map.fixtures.clone(),
            events_applied: 0,
            planner: PlannerState {
                planned_lane: scenario.home_lane.clone().unwrap_or_else(|| v.lane.clone()),
                hold: None,
                stop_target: None,
            },
            params: NodeParams::default(),
            perception: PerceptionFrame::default(),
        };
        let mut sim = Simulator { scenario, state };
        sim.state.perception = sim.perceive();
        Ok(sim)
    }

    pub fn load(name_or_path: &str) -> Result<Simulator, SimError> {
        Simulator::new(Scenario::load(name_or_path)?)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    /// Ticks needed to reach the scenario horizon.
    pub fn horizon_ticks(&self) -> u64 {
        (self.scenario.horizon / DT).round() as u64
    }

    pub fn get_node_param(&self, path: &ParamPath) -> Result<ConfigValue, SimError> {
        self.state.params.get(path).ok_or_else(|| SimError::UnknownPath(path.to_string()))
    }

    /// Takes effect at the next planning pass. Returns the replaced value.
    pub fn set_node_param(&mut self, path: &ParamPath, value: &ConfigValue) -> Result<ConfigValue, SimError> {
        self.state.params.set(path, value)
    }

    pub fn vehicle_status(&self) -> VehicleStatus {
        let mut status =
            VehicleStatus::from_speed(self.state.vehicle.speed, self.state.perception.tags.iter().copied());
        if status.motion_state == MotionState::Stopped {
            status.stop_reason = self.state.planner.stop_target.as_ref().map(|t| t.reason);
        }
        status
    }

    /// Declares the four status topics on `bus`.
    pub fn declare_status_topics(bus: &Bus) -> Result<(), BusError> {
        bus.declare_topic(TOPIC_MOTION_STATE, SchemaId::MotionState)?;
        bus.declare_topic(TOPIC_VELOCITY, SchemaId::VelocityStatus)?;
        bus.declare_topic(TOPIC_OBJECTS, SchemaId::DetectedObjects)?;
        bus.declare_topic(TOPIC_TRAFFIC_LIGHTS, SchemaId::TrafficLightRois)?;
        Ok(())
    }

    /// One envelope per status topic.
    pub fn publish_status(&self, publisher: &Publisher) -> Result<(), BusError> {
        let status = self.vehicle_status();
        publisher.publish(
            TOPIC_MOTION_STATE,
            Payload::MotionState(MotionStateMsg { state: status.motion_state, stop_reason: status.stop_reason }),
        )?;
        publisher.publish(
            TOPIC_VELOCITY,
            Payload::VelocityStatus(VelocityStatusMsg { longitudinal_velocity: status.speed }),
        )?;
        publisher.publish(
            TOPIC_OBJECTS,
            Payload::DetectedObjects(DetectedObjectsMsg { objects: self.state.perception.objects.clone() }),
        )?;
        publisher.publish(
            TOPIC_TRAFFIC_LIGHTS,
            Payload::TrafficLightRois(TrafficLightRoisMsg { rois: self.state.perception.rois.clone() }),
        )?;
        Ok(())
    }

    /// Advances one tick: scripted events, perception, planning, control,
    /// then perception again for the new pose.
    pub fn step(&mut self) -> &WorldState {
        self.apply_events();
        self.state.perception = self.perceive();
        self.plan();
        self.control();
        self.state.tick += 1;
        self.state.time = self.state.tick as f64 * DT;
        self.state.perception = self.perceive();
        &self.state
    }

    fn apply_events(&mut self) {
        while let Some(event) = self.scenario.events.get(self.state.events_applied) {
            if event.at > self.state.time + 1e-9 {
                break;
            }
            match &event.action {
                EventAction::SetLight { light_id, color } => {
                    self.state.lights.insert(light_id.clone(), *color);
                }
                EventAction::Spawn(f) => self.state.fixtures.push(f.clone()),
                EventAction::Remove { fixture_id } => self.state.fixtures.retain(|f| &f.id != fixture_id),
            }
            self.state.events_applied += 1;
        }
    }

    fn lane(&self, id: &str) -> &Lane {
        self.scenario.map.lane(id).expect("lane ids are checked at load")
    }

    /// Lanes the vehicle can see into: the one it occupies, plus the one it
    /// is moving toward.
    fn relevant_lanes(&self) -> Vec<&str> {
        let v = &self.state.vehicle;
        let mut lanes = vec![v.lane.as_str()];
        match &v.maneuver {
            Maneuver::LaneChange { .. } => lanes.push(v.route_lane.as_str()),
            Maneuver::Bypass { phase: BypassPhase::Return, origin, .. } => lanes.push(origin.as_str()),
            _ => {}
        }
        lanes.dedup();
        lanes
    }

    /// Distance from the vehicle front to `offset` on `lane`, following
    /// successors, in the vehicle's direction of travel.
    fn distance_along(&self, lane: &str, offset: f64) -> Option<f64> {
        let v = &self.state.vehicle;
        let route = self.lane(&v.route_lane);
        if route.opposite.as_deref() == Some(lane) {
            return Some(route.length - offset - v.offset);
        }
        if lane == v.route_lane || route.left.as_deref() == Some(lane) || route.right.as_deref() == Some(lane) {
            return Some(offset - v.offset);
        }
        // Walk successors of the route lane a little way.
        let mut base = route.length - v.offset;
        let mut current = route;
        for _ in 0..8 {
            if base > SENSING_RANGE {
                return None;
            }
            let next = self.lane(current.successors.first()?);
            if next.id == lane {
                return Some(base + offset);
            }
            base += next.length;
            current = next;
        }
        None
    }

    fn sightings(&self) -> Vec<Sighting<'_>> {
        let lanes = self.relevant_lanes();
        let v = &self.state.vehicle;
        let route = self.lane(&v.route_lane);
        let mut successors = Vec::new();
        let mut current = route;
        while let Some(next) = current.successors.first() {
            if successors.len() >= 8 || successors.contains(&next.as_str()) {
                break;
            }
            successors.push(next.as_str());
            current = self.lane(next);
        }
        let mut out = Vec::new();
        for f in &self.state.fixtures {
            let on_path = lanes.contains(&f.lane.as_str())
                || (lanes.contains(&v.route_lane.as_str()) && successors.contains(&f.lane.as_str()));
            if !on_path {
                continue;
            }
            if let Some(d) = self.distance_along(&f.lane, f.offset) {
                if (0.0..=SENSING_RANGE).contains(&d) {
                    out.push(Sighting { fixture: f, distance: d });
                }
            }
        }
        out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.fixture.id.cmp(&b.fixture.id)));
        out
    }

    fn perceive(&self) -> PerceptionFrame {
        let mut objects = Vec::new();
        let mut rois = Vec::new();
        for s in self.sightings() {
            match &s.fixture.kind {
                FixtureKind::StopLine { light_id } => rois.push(TrafficLightRoi {
                    light_id: light_id.clone(),
                    distance: s.distance,
                    color: if self.state.params.use_flag { self.state.lights.get(light_id).copied() } else { None },
                }),
                FixtureKind::Cone | FixtureKind::Pedestrian => objects.push(DetectedObject {
                    id: s.fixture.id.clone(),
                    kind: if matches!(s.fixture.kind, FixtureKind::Cone) { ObjectKind::Cone } else { ObjectKind::Pedestrian },
                    lane: s.fixture.lane.clone(),
                    distance: s.distance,
                }),
            }
        }
        PerceptionFrame::from_detections(objects, rois)
    }

    fn end_of_road(&self) -> Option<f64> {
        let v = &self.state.vehicle;
        if matches!(v.maneuver, Maneuver::Bypass { phase: BypassPhase::Pass, .. }) {
            return None;
        }
        let mut current = self.lane(&v.route_lane);
        let mut base = current.length - v.offset;
        for _ in 0..8 {
            if base > SENSING_RANGE {
                return None;
            }
            match current.successors.first() {
                None => return Some(base),
                Some(next) => {
                    current = self.lane(next);
                    base += current.length;
                }
            }
        }
        None
    }

    fn stop_target(&self) -> Option<StopTarget> {
        let params = &self.state.params;
        let mut best: Option<StopTarget> = None;
        let mut consider = |t: StopTarget| {
            if best.as_ref().is_none_or(|b| t.distance < b.distance) {
                best = Some(t);
            }
        };
        for roi in &self.state.perception.rois {
            if roi.color == Some(LightColor::Red) {
                let line = self
                    .state
                    .fixtures
                    .iter()
                    .find(|f| matches!(&f.kind, FixtureKind::StopLine { light_id } if *light_id == roi.light_id));
                consider(StopTarget {
                    reason: StopReason::RedLight,
                    source: line.map_or(roi.light_id.clone(), |f| f.id.clone()),
                    distance: roi.distance - params.stop_margin - STOP_BUFFER,
                });
            }
        }
        for obj in &self.state.perception.objects {
            consider(StopTarget {
                reason: StopReason::Obstacle,
                source: obj.id.clone(),
                distance: obj.distance - params.stop_margin - STOP_BUFFER,
            });
        }
        if let Some(d) = self.end_of_road() {
            consider(StopTarget { reason: StopReason::EndOfRoad, source: "end_of_road".into(), distance: d - STOP_BUFFER });
        }
        best
    }

    fn preferred_lane(&self) -> String {
        let route = &self.state.vehicle.route_lane;
        match self.state.params.lane_prefer {
            LanePrefer::Left => self.scenario.map.extreme_lane(route, true).to_string(),
            LanePrefer::Right => self.scenario.map.extreme_lane(route, false).to_string(),
            LanePrefer::NoPreference => self.scenario.home_lane.clone().unwrap_or_else(|| route.clone()),
        }
    }

    /// No blocking fixture on `lane` from a little behind the vehicle to the
    /// end of the sensing range.
    fn lane_is_free(&self, lane: &str) -> bool {
        let here = self.state.vehicle.offset;
        !self
            .state
            .fixtures
            .iter()
            .any(|f| f.blocks() && f.lane == lane && (here - 5.0..=here + SENSING_RANGE).contains(&f.offset))
    }

    /// The twin of the route lane, if it is clear around `fixture_offset`.
    fn free_twin(&self, fixture_offset: f64) -> Option<String> {
        let route = self.lane(&self.state.vehicle.route_lane);
        let twin = route.opposite.clone()?;
        let window = fixture_offset - 10.0..=fixture_offset + PASS_CLEARANCE + 20.0;
        let blocked = self
            .state
            .fixtures
            .iter()
            .any(|f| f.blocks() && f.lane == twin && window.contains(&(route.length - f.offset)));
        (!blocked).then_some(twin)
    }

    fn start_bypass(&mut self, fixture: &str) -> bool {
        if !self.state.params.use_opposite_lane {
            return false;
        }
        let Some(f) = self.state.fixtures.iter().find(|f| f.id == fixture) else { return false };
        if f.lane != self.state.vehicle.route_lane {
            return false;
        }
        let fixture_offset = f.offset;
        let Some(twin) = self.free_twin(fixture_offset) else { return false };
        let v = &mut self.state.vehicle;
        v.maneuver = Maneuver::Bypass {
            fixture: fixture.to_string(),
            fixture_offset,
            origin: v.route_lane.clone(),
            twin,
            phase: BypassPhase::Depart,
            ticks: 0,
        };
        true
    }

    fn start_lane_change(&mut self, to: &str) {
        let v = &mut self.state.vehicle;
        v.maneuver = Maneuver::LaneChange { from: v.route_lane.clone(), to: to.to_string(), ticks: 0 };
        v.route_lane = to.to_string();
    }

    fn plan(&mut self) {
        let target = self.stop_target();
        self.state.planner.planned_lane = self.preferred_lane();

        if self.state.vehicle.maneuver == Maneuver::Cruise {
            let stopped_at_obstacle = target.as_ref().filter(|t| {
                t.reason == StopReason::Obstacle && t.distance <= 0.1 && self.state.vehicle.speed < STOPPED_SPEED_EPS
            });
            match stopped_at_obstacle {
                Some(t) => {
                    let tick = self.state.tick;
                    let hold = match self.state.planner.hold.take() {
                        Some(h) if h.fixture == t.source => h,
                        _ => Hold { fixture: t.source.clone(), since_tick: tick },
                    };
                    let held = (tick - hold.since_tick) as f64 * DT;
                    let mut released = false;
                    if held + 1e-9 >= self.state.params.stop_duration {
                        let route = self.lane(&self.state.vehicle.route_lane).clone();
                        let neighbour = [route.left.as_deref(), route.right.as_deref()]
                            .into_iter()
                            .flatten()
                            .find(|n| self.lane_is_free(n))
                            .map(str::to_string);
                        if let Some(n) = neighbour {
                            self.start_lane_change(&n);
                            released = true;
                        } else {
                            released = self.start_bypass(&t.source);
                        }
                    }
                    self.state.planner.hold = (!released).then_some(hold);
                }
                None => {
                    self.state.planner.hold = None;
                    let approaching = target.as_ref().filter(|t| {
                        t.reason == StopReason::Obstacle
                            && t.distance + self.state.params.stop_margin + STOP_BUFFER <= BYPASS_TRIGGER
                    });
                    let bypassing = approaching.is_some_and(|t| self.start_bypass(&t.source.clone()));
                    if !bypassing {
                        let planned = self.state.planner.planned_lane.clone();
                        let clear = target.as_ref().is_none_or(|t| t.distance > LANE_CHANGE_CLEARANCE);
                        if planned != self.state.vehicle.route_lane && clear {
                            let next = self
                                .scenario
                                .map
                                .step_toward(&self.state.vehicle.route_lane, &planned)
                                .map(str::to_string);
                            if let Some(next) = next.filter(|n| self.lane_is_free(n)) {
                                self.start_lane_change(&next);
                            }
                        }
                    }
                }
            }
        }

        // Recompute after a maneuver may have changed which lanes matter.
        self.state.perception = self.perceive();
        let target = self.stop_target();
        let cap = self.state.vehicle.cruise_speed.min(SPEED_CAP);
        self.state.vehicle.target_speed = match &target {
            Some(t) => cap.min(ladder_speed(t.distance.max(0.0))),
            None => cap,
        };
        self.state.planner.stop_target = target;
    }

    fn control(&mut self) {
        let v = &mut self.state.vehicle;
        let dv = (v.target_speed - v.speed).clamp(-ACCEL_LIMIT * DT, ACCEL_LIMIT * DT);
        v.speed = (v.speed + dv).clamp(0.0, SPEED_CAP);
        v.offset += v.speed * DT;

        let half = MANEUVER_TICKS / 2;
        let mut done = false;
        match &mut v.maneuver {
            Maneuver::Cruise => {}
            Maneuver::LaneChange { to, ticks, .. } => {
                *ticks += 1;
                if *ticks == half {
                    v.lane = to.clone();
                }
                done = *ticks >= MANEUVER_TICKS;
            }
            Maneuver::Bypass { fixture_offset, origin, twin, phase, ticks, .. } => match phase {
                BypassPhase::Depart => {
                    *ticks += 1;
                    if *ticks == half {
                        v.lane = twin.clone();
                    }
                    if *ticks >= MANEUVER_TICKS {
                        *phase = BypassPhase::Pass;
                        *ticks = 0;
                    }
                }
                BypassPhase::Pass => {
                    if v.offset > *fixture_offset + PASS_CLEARANCE {
                        *phase = BypassPhase::Return;
                    }
                }
                BypassPhase::Return => {
                    *ticks += 1;
                    if *ticks == half {
                        v.lane = origin.clone();
                    }
                    done = *ticks >= MANEUVER_TICKS;
                }
            },
        }
        if done {
            v.maneuver = Maneuver::Cruise;
        }

        let length = self.scenario.map.lane(&v.route_lane).map_or(f64::INFINITY, |l| l.length);
        if v.offset > length {
            let next = self.scenario.map.lane(&v.route_lane).and_then(|l| l.successors.first().cloned());
            match next {
                Some(next) if v.maneuver == Maneuver::Cruise => {
                    v.offset -= length;
                    v.lane = next.clone();
                    v.route_lane = next;
                }
                _ => v.offset = length,
            }
        }
    }
}

/// One JSON object per line.
pub fn write_trajectory<W: Write>(states: &[WorldState], mut out: W) -> io::Result<()> {
    for s in states {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Runs a scenario without any instruction to its horizon, returning every
/// state including the initial one.
pub fn run_baseline(scenario: &Scenario) -> Result<Vec<WorldState>, SimError> {
    let mut sim = Simulator::new(scenario.clone())?;
    let mut states = vec![sim.state().clone()];
    for _ in 0..sim.horizon_ticks() {
        states.push(sim.step().clone());
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_agree_with_registry() {
        let params = NodeParams::default();
        for path in NodeParams::PATHS {
            let path = ParamPath::parse(path).unwrap();
            assert_eq!(params.get(&path), Some(registry().get(&path).unwrap().default.clone()), "{path}");
        }
        assert_eq!(registry().len(), NodeParams::PATHS.len());
    }

    #[test]
    fn param_writes_are_checked() {
        let mut p = NodeParams::default();
        let lane = ParamPath::parse(LANE_PREFER).unwrap();
        assert_eq!(p.set(&lane, &ConfigValue::Token("LEFT".into())), Ok(ConfigValue::Token("NONE".into())));
        assert_eq!(p.lane_prefer, LanePrefer::Left);
        let flag = ParamPath::parse(USE_FLAG).unwrap();
        assert!(matches!(p.set(&flag, &ConfigValue::Token("LEFT".into())), Err(SimError::TypeMismatch { .. })));
        assert!(p.use_flag);
        let margin = ParamPath::parse(STOP_MARGIN).unwrap();
        assert!(matches!(p.set(&margin, &ConfigValue::Number(11.0)), Err(SimError::OutOfRange { .. })));
        let nowhere = ParamPath::new("planning", "mission_planner", "sunroof");
        assert!(matches!(p.set(&nowhere, &ConfigValue::Bool(true)), Err(SimError::UnknownPath(_))));
    }

    /// Simulates the braking ladder tick by tick.
    fn ladder_distance(v: f64) -> f64 {
        let mut v = v;
        let mut d = 0.0;
        while v > 1e-12 {
            d += v * DT;
            v = (v - PLAN_DECEL * DT).max(0.0);
        }
        d
    }

    #[test]
    fn ladder_covers_its_distance() {
        for d in [0.01, 0.025, 0.5, 1.0, 3.4, 7.77, 20.0, 28.95, 55.0] {
            let v = ladder_speed(d);
            assert!((ladder_distance(v) - d).abs() < 1e-9, "d={d} v={v}");
        }
        assert_eq!(ladder_speed(0.0), 0.0);
        assert_eq!(ladder_speed(-1.0), 0.0);
    }
}
