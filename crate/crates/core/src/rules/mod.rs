//! Safety rule base and the runtime instruction validation algorithm.

mod base;
pub mod bench;
mod status;
mod validation;

pub use base::{
    load_rule_base, match_conditions, search_rule, ConditionSet, MotionCondition, Rule, RuleBase,
    RuleError,
};
pub use status::{MotionState, Perception, StopReason, VehicleStatus, STOPPED_SPEED_EPS};
pub use validation::{
    validate_instruction, Begin, Clock, Decision, PollRecord, RejectReason, ScriptedClock,
    StatusError, StatusSource, Step, SystemClock, Validation, ValidationError, POLL_PERIOD,
    STATUS_GRACE,
};
