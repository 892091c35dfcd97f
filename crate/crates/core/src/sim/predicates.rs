//! Success predicates, evaluated offline over a recorded trajectory.

use serde::{Deserialize, Serialize};

use super::{Maneuver, WorldState};
use crate::autoir::{ConfigValue, ParamPath};
use crate::bus::msgs::LightColor;
use crate::rules::STOPPED_SPEED_EPS;
use crate::sim::map::FixtureKind;
use crate::sim::Scenario;

/// Which runs a predicate applies to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum When {
    #[default]
    Always,
    /// Runs that inject the scenario's instruction.
    Instructed,
    /// Runs without any instruction.
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Check {
    /// The vehicle front passes the fixture, optionally by `within_s`.
    CrossesFixture {
        fixture: String,
        #[serde(default)]
        within_s: Option<f64>,
    },
    /// Never passes the stop line while its light is Red and the classifier
    /// is on.
    NeverRunsRed { fixture: String },
    /// Gap to the fixture at the first stop in front of it.
    StopGap { fixture: String, min: f64, max: f64 },
    /// Length of the first stop of the run.
    FirstStopDuration {
        min: f64,
        #[serde(default)]
        max: Option<f64>,
    },
    /// While `path` equals `value`, the vehicle reaches `lane` within
    /// `settle_s` and does not leave it.
    HoldsLaneWhile { path: String, value: ConfigValue, lane: String, settle_s: f64 },
    /// The first planning pass after `path` leaves `value` plans for `lane`.
    RevertsAfter { path: String, value: ConfigValue, lane: String },
    /// The vehicle never leaves `lane`.
    StaysInLane { lane: String },
    /// Goes around the fixture through `via` and comes back to its lane.
    BypassesFixture { fixture: String, via: String },
    /// Once stopped in front of the fixture, never moves again.
    StaysStopped { fixture: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    #[serde(default)]
    pub when: When,
    pub check: Check,
    #[serde(default = "yes")]
    pub expect: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateOutcome {
    pub name: String,
    pub expect: bool,
    pub holds: bool,
    pub passed: bool,
    pub detail: String,
}

fn stopped(s: &WorldState) -> bool {
    s.vehicle.speed < STOPPED_SPEED_EPS
}

fn param_is(s: &WorldState, path: &str, value: &ConfigValue) -> bool {
    ParamPath::parse(path).and_then(|p| s.params.get(&p)).as_ref() == Some(value)
}

/// Vehicle front minus fixture offset, when the vehicle is on the fixture's
/// lane frame.
fn past(s: &WorldState, fixture_lane: &str, fixture_offset: f64) -> Option<f64> {
    (s.vehicle.route_lane == fixture_lane).then_some(s.vehicle.offset - fixture_offset)
}

fn eval(check: &Check, scenario: &Scenario, states: &[WorldState]) -> (bool, String) {
    let fixture = |id: &str| scenario.fixture(id).map(|f| (f.lane.clone(), f.offset, f.kind.clone()));
    match check {
        Check::CrossesFixture { fixture: id, within_s } => {
            let Some((lane, offset, _)) = fixture(id) else { return (false, format!("no fixture `{id}`")) };
            match states.iter().find(|s| past(s, &lane, offset).is_some_and(|d| d > 0.0)) {
                Some(s) => {
                    let ok = within_s.is_none_or(|w| s.time <= w + 1e-9);
                    (ok, format!("crossed at t={:.1}s", s.time))
                }
                None => (false, "never crossed".into()),
            }
        }
        Check::NeverRunsRed { fixture: id } => {
            let Some((lane, offset, FixtureKind::StopLine { light_id })) = fixture(id) else {
                return (false, format!("no stop line `{id}`"));
            };
            for w in states.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                let crossing = past(a, &lane, offset).is_some_and(|d| d <= 0.0)
                    && past(b, &lane, offset).is_some_and(|d| d > 0.0);
                if crossing && b.params.use_flag && b.lights.get(&light_id) == Some(&LightColor::Red) {
                    return (false, format!("ran the red light at t={:.1}s", b.time));
                }
            }
            (true, "never ran the red light".into())
        }
        Check::StopGap { fixture: id, min, max } => {
            let Some((lane, offset, _)) = fixture(id) else { return (false, format!("no fixture `{id}`")) };
            let first = states.iter().skip(1).find(|s| stopped(s) && past(s, &lane, offset).is_some_and(|d| d < 0.0));
            match first {
                Some(s) => {
                    let gap = offset - s.vehicle.offset;
                    (gap >= *min && gap <= *max, format!("stopped {gap:.3} m short at t={:.1}s", s.time))
                }
                None => (false, "never stopped in front of it".into()),
            }
        }
        Check::FirstStopDuration { min, max } => {
            let Some(start) = states.iter().skip(1).position(stopped).map(|i| i + 1) else {
                return (false, "never stopped".into());
            };
            let end = states[start..].iter().position(|s| !stopped(s)).map(|i| i + start);
            let Some(end) = end else {
                return (false, format!("stopped at t={:.1}s and never moved again", states[start].time));
            };
            let held = states[end].time - states[start].time;
            let ok = held + 1e-9 >= *min && max.is_none_or(|m| held <= m + 1e-9);
            (ok, format!("held {held:.1} s from t={:.1}s", states[start].time))
        }
        Check::HoldsLaneWhile { path, value, lane, settle_s } => {
            let Some(on) = states.iter().position(|s| param_is(s, path, value)) else {
                return (false, format!("{path} never became {value}"));
            };
            let off = states[on..].iter().position(|s| !param_is(s, path, value)).map_or(states.len(), |i| i + on);
            let window = &states[on..off];
            let Some(reached) = window.iter().position(|s| &s.vehicle.lane == lane) else {
                return (false, format!("never reached {lane} while {path}={value}"));
            };
            let settle = window[reached].time - window[0].time;
            if settle > settle_s + 1e-9 {
                return (false, format!("reached {lane} after {settle:.1} s"));
            }
            if let Some(left) = window[reached..].iter().find(|s| &s.vehicle.lane != lane) {
                return (false, format!("left {lane} at t={:.1}s", left.time));
            }
            (
                true,
                format!(
                    "reached {lane} after {settle:.1} s and held it for {:.1} s",
                    window.last().map_or(0.0, |s| s.time) - window[reached].time
                ),
            )
        }
        Check::RevertsAfter { path, value, lane } => {
            let Some(on) = states.iter().position(|s| param_is(s, path, value)) else {
                return (false, format!("{path} never became {value}"));
            };
            match states[on..].iter().find(|s| !param_is(s, path, value)) {
                Some(s) => (&s.planner.planned_lane == lane, format!("planned {} at t={:.1}s", s.planner.planned_lane, s.time)),
                None => (false, format!("{path} never left {value}")),
            }
        }
        Check::StaysInLane { lane } => match states.iter().find(|s| &s.vehicle.lane != lane) {
            Some(s) => (false, format!("in {} at t={:.1}s", s.vehicle.lane, s.time)),
            None => (true, format!("stayed in {lane}")),
        },
        Check::BypassesFixture { fixture: id, via } => {
            let Some((lane, offset, _)) = fixture(id) else { return (false, format!("no fixture `{id}`")) };
            let Some(out) = states.iter().position(|s| &s.vehicle.lane == via) else {
                return (false, format!("never entered {via}"));
            };
            let back = states[out..].iter().find(|s| {
                s.vehicle.lane == lane && s.vehicle.maneuver == Maneuver::Cruise && s.vehicle.offset > offset
            });
            match back {
                Some(s) => (true, format!("entered {via} at t={:.1}s, back in {lane} at t={:.1}s", states[out].time, s.time)),
                None => (false, format!("entered {via} but never returned past {id}")),
            }
        }
        Check::StaysStopped { fixture: id } => {
            let Some((lane, offset, _)) = fixture(id) else { return (false, format!("no fixture `{id}`")) };
            let first = states
                .iter()
                .skip(1)
                .position(|s| stopped(s) && past(s, &lane, offset).is_some_and(|d| d < 0.0));
            let Some(start) = first.map(|i| i + 1) else {
                return (false, "never stopped in front of it".into());
            };
            match states[start..].iter().find(|s| !stopped(s)) {
                Some(s) => (false, format!("moved again at t={:.1}s", s.time)),
                None => (true, format!("stopped from t={:.1}s to the horizon", states[start].time)),
            }
        }
    }
}

/// Evaluates the predicates that apply to this kind of run.
pub fn evaluate_predicates(scenario: &Scenario, states: &[WorldState], instructed: bool) -> Vec<PredicateOutcome> {
    scenario
        .predicates
        .iter()
        .filter(|p| match p.when {
            When::Always => true,
            When::Instructed => instructed,
            When::Baseline => !instructed,
        })
        .map(|p| {
            let (holds, detail) = eval(&p.check, scenario, states);
            PredicateOutcome { name: p.name.clone(), expect: p.expect, holds, passed: holds == p.expect, detail }
        })
        .collect()
}
