//! Safety rules and the tree-indexed rule base.
//!
//! Rule file format (JSON array):
//!
//! ```json
//! [
//!   {
//!     "module": "perception",
//!     "node": "traffic_light_classifier_node",
//!     "param": "use_flag",
//!     "conditions": {
//!       "motion_state": "Stopped",
//!       "speed_min": 0.0,
//!       "speed_max": 0.0,
//!       "required": ["TrafficLightDetected"],
//!       "forbidden": []
//!     },
//!     "timer_cap": 30.0
//!   }
//! ]
//! ```
//!
//! `speed_max` may be `null` or omitted for an unbounded interval; `timer_cap`
//! may be omitted.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::status::{MotionState, Perception, VehicleStatus};
use crate::autoir::{AutoIRProgram, ParamPath};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotionCondition {
    Driving,
    Stopped,
    Any,
}

impl MotionCondition {
    pub fn admits(self, state: MotionState) -> bool {
        match self {
            MotionCondition::Any => true,
            MotionCondition::Driving => state == MotionState::Driving,
            MotionCondition::Stopped => state == MotionState::Stopped,
        }
    }
}

impl From<MotionState> for MotionCondition {
    fn from(s: MotionState) -> Self {
        match s {
            MotionState::Driving => MotionCondition::Driving,
            MotionState::Stopped => MotionCondition::Stopped,
        }
    }
}

/// Closed speed interval plus perception requirements. `speed_max` is
/// `f64::INFINITY` when unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSet {
    pub motion_state: MotionCondition,
    pub speed_min: f64,
    pub speed_max: f64,
    pub required: BTreeSet<Perception>,
    pub forbidden: BTreeSet<Perception>,
}

impl ConditionSet {
    /// Conditions every status satisfies.
    pub fn vacuous() -> Self {
        ConditionSet {
            motion_state: MotionCondition::Any,
            speed_min: 0.0,
            speed_max: f64::INFINITY,
            required: BTreeSet::new(),
            forbidden: BTreeSet::new(),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.speed_min.is_nan() || self.speed_max.is_nan() {
            return Err("speed bounds must be numbers".into());
        }
        if self.speed_min > self.speed_max {
            return Err(format!(
                "speed_min {} exceeds speed_max {}",
                self.speed_min, self.speed_max
            ));
        }
        if let Some(p) = self.required.intersection(&self.forbidden).next() {
            return Err(format!("{p} is both required and forbidden"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub search_index: ParamPath,
    pub conditions: ConditionSet,
    /// Seconds; caps (never extends) the instruction lifetime.
    pub timer_cap: Option<f64>,
}

impl Rule {
    pub fn effective_timer(&self, program_timer: f64) -> f64 {
        match self.timer_cap {
            Some(cap) => program_timer.min(cap),
            None => program_timer,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ConditionsDoc {
    motion_state: MotionCondition,
    #[serde(default)]
    speed_min: f64,
    #[serde(default)]
    speed_max: Option<f64>,
    #[serde(default)]
    required: Vec<Perception>,
    #[serde(default)]
    forbidden: Vec<Perception>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RuleDoc {
    module: String,
    node: String,
    param: String,
    conditions: ConditionsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timer_cap: Option<f64>,
}

impl From<&Rule> for RuleDoc {
    fn from(r: &Rule) -> Self {
        let c = &r.conditions;
        RuleDoc {
            module: r.search_index.module.clone(),
            node: r.search_index.node.clone(),
            param: r.search_index.param.clone(),
            conditions: ConditionsDoc {
                motion_state: c.motion_state,
                speed_min: c.speed_min,
                speed_max: c.speed_max.is_finite().then_some(c.speed_max),
                required: c.required.iter().copied().collect(),
                forbidden: c.forbidden.iter().copied().collect(),
            },
            timer_cap: r.timer_cap,
        }
    }
}

impl Serialize for Rule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RuleDoc::from(self).serialize(s)
    }
}

impl From<RuleDoc> for Rule {
    fn from(d: RuleDoc) -> Self {
        let c = d.conditions;
        Rule {
            search_index: ParamPath::new(d.module, d.node, d.param),
            conditions: ConditionSet {
                motion_state: c.motion_state,
                speed_min: c.speed_min,
                speed_max: c.speed_max.unwrap_or(f64::INFINITY),
                required: c.required.into_iter().collect(),
                forbidden: c.forbidden.into_iter().collect(),
            },
            timer_cap: d.timer_cap,
        }
    }
}

/// Reads the rule-file shape. No consistency checks; those happen when the
/// rule joins a [`RuleBase`].
impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        RuleDoc::deserialize(d).map(Rule::from)
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule file is malformed: {0}")]
    Parse(String),
    #[error("more than one rule for {0}")]
    DuplicatePath(ParamPath),
    #[error("rule {path}: {message}")]
    BadCondition { path: ParamPath, message: String },
}

type Tree = BTreeMap<String, BTreeMap<String, BTreeMap<String, usize>>>;

/// Rules indexed module → node → param, with the flat list kept alongside.
#[derive(Clone, Debug, Default)]
pub struct RuleBase {
    tree: Tree,
    rules: Vec<Rule>,
}

impl RuleBase {
    pub fn new(rules: Vec<Rule>) -> Result<Self, RuleError> {
        let mut base = RuleBase::default();
        for rule in rules {
            base.insert(rule)?;
        }
        Ok(base)
    }

    pub fn shipped() -> Self {
        load_rule_base(include_str!("../../data/rules.json")).expect("shipped rule file is valid")
    }

    pub fn insert(&mut self, rule: Rule) -> Result<(), RuleError> {
        let path = rule.search_index.clone();
        if path.module.is_empty() || path.node.is_empty() || path.param.is_empty() {
            return Err(RuleError::BadCondition {
                path,
                message: "search index components must be non-empty".into(),
            });
        }
        rule.conditions
            .check()
            .map_err(|message| RuleError::BadCondition { path: path.clone(), message })?;
        if let Some(cap) = rule.timer_cap {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(RuleError::BadCondition {
                    path,
                    message: format!("timer_cap must be positive, got {cap}"),
                });
            }
        }
        let slot = self
            .tree
            .entry(path.module.clone())
            .or_default()
            .entry(path.node.clone())
            .or_default();
        if slot.contains_key(&path.param) {
            return Err(RuleError::DuplicatePath(path));
        }
        slot.insert(path.param.clone(), self.rules.len());
        self.rules.push(rule);
        Ok(())
    }

    /// Flat view in insertion order.
    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Exact three-level descent; `None` when any level misses.
    pub fn lookup(&self, module: &str, node: &str, param: &str) -> Option<&Rule> {
        let idx = *self.tree.get(module)?.get(node)?.get(param)?;
        Some(&self.rules[idx])
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("rules serialize")
    }
}

/// Parses a rule file. Blank input yields an empty base.
pub fn load_rule_base(document: &str) -> Result<RuleBase, RuleError> {
    if document.trim().is_empty() {
        return Ok(RuleBase::default());
    }
    let docs: Vec<RuleDoc> =
        serde_json::from_str(document).map_err(|e| RuleError::Parse(e.to_string()))?;
    let mut base = RuleBase::default();
    for d in docs {
        base.insert(Rule::from(d))?;
    }
    Ok(base)
}

pub fn search_rule<'a>(rule_base: &'a RuleBase, program: &AutoIRProgram) -> Option<&'a Rule> {
    rule_base.lookup(
        program.module_select.as_str(),
        program.node_select.as_str(),
        program.param_select.as_str(),
    )
}

pub fn match_conditions(rule: &Rule, status: &VehicleStatus) -> bool {
    let c = &rule.conditions;
    c.motion_state.admits(status.motion_state)
        && status.speed >= c.speed_min
        && status.speed <= c.speed_max
        && c.required.is_subset(&status.perceptions)
        && c.forbidden.is_disjoint(&status.perceptions)
}
