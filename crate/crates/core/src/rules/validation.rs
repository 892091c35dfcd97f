//! Runtime instruction validation: search the rule once, then poll live
//! status until the conditions hold or the instruction's lifetime runs out.
//!
//! [`Validation`] is the step-driven core, polled by whoever owns the clock
//! (the executor polls it once per simulation tick). [`validate_instruction`]
//! wraps it in a blocking loop over a [`Clock`] and a [`StatusSource`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::base::{match_conditions, search_rule, Rule, RuleBase};
use super::status::VehicleStatus;
use crate::autoir::AutoIRProgram;

/// 10 Hz.
pub const POLL_PERIOD: Duration = Duration::from_millis(100);
/// Consecutive status failures tolerated before giving up.
pub const STATUS_GRACE: Duration = Duration::from_secs(1);

/// Monotonic time source.
pub trait Clock {
    fn now(&self) -> Duration;
    fn sleep_until(&self, t: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, t: Duration) {
        let now = self.now();
        if t > now {
            std::thread::sleep(t - now);
        }
    }
}

/// A clock that only moves when asked to; sleeping jumps straight to the
/// wake-up time.
#[derive(Default)]
pub struct ScriptedClock {
    nanos: AtomicU64,
}

impl ScriptedClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        self.nanos.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for ScriptedClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }

    fn sleep_until(&self, t: Duration) {
        self.nanos.fetch_max(t.as_nanos() as u64, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("vehicle status unavailable: {0}")]
pub struct StatusError(pub String);

pub trait StatusSource {
    fn current_status(&mut self) -> Result<VehicleStatus, StatusError>;
}

impl<F> StatusSource for F
where
    F: FnMut() -> Result<VehicleStatus, StatusError>,
{
    fn current_status(&mut self) -> Result<VehicleStatus, StatusError> {
        self()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    /// No rule addresses the program's parameter.
    NoRule,
    /// Status was observed, but never matched, within the lifetime.
    ConditionsNeverMet,
    /// The lifetime ran out before any status could be observed.
    Expired,
    /// Withdrawn by the operator before activation.
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PollRecord {
    pub at: Duration,
    pub status: Option<VehicleStatus>,
    pub matched: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Decision {
    Activated {
        rule: Rule,
        /// Seconds: the program timer, capped by the rule.
        effective_timer: f64,
        at: Duration,
        polls: Vec<PollRecord>,
    },
    NotActivated {
        reason: RejectReason,
        at: Duration,
        polls: Vec<PollRecord>,
    },
}

impl Decision {
    pub fn polls(&self) -> &[PollRecord] {
        match self {
            Decision::Activated { polls, .. } | Decision::NotActivated { polls, .. } => polls,
        }
    }

    pub fn at(&self) -> Duration {
        match self {
            Decision::Activated { at, .. } | Decision::NotActivated { at, .. } => *at,
        }
    }

    pub fn is_activated(&self) -> bool {
        matches!(self, Decision::Activated { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("status unavailable for more than {grace:?}: {last}")]
    StatusUnavailable { grace: Duration, last: StatusError },
}

#[derive(Debug)]
pub enum Begin {
    Decided(Decision),
    Running(Validation),
}

#[derive(Debug, PartialEq)]
pub enum Step {
    Pending,
    Decided(Decision),
    Failed(ValidationError),
}

/// One in-flight validation.
#[derive(Clone, Debug)]
pub struct Validation {
    rule: Rule,
    program_timer: f64,
    started: Duration,
    lifetime: Duration,
    next_poll: Duration,
    polls: Vec<PollRecord>,
    failing_since: Option<Duration>,
}

impl Validation {
    /// Searches the rule base once. A miss decides immediately, with no polls.
    pub fn begin(program: &AutoIRProgram, rule_base: &RuleBase, now: Duration) -> Begin {
        match search_rule(rule_base, program) {
            None => Begin::Decided(Decision::NotActivated {
                reason: RejectReason::NoRule,
                at: now,
                polls: Vec::new(),
            }),
            Some(rule) => Begin::Running(Validation {
                rule: rule.clone(),
                program_timer: program.timer,
                started: now,
                lifetime: program.timer_duration(),
                next_poll: now,
                polls: Vec::new(),
                failing_since: None,
            }),
        }
    }

    pub fn rule(&self) -> &Rule {
        &self.rule
    }

    pub fn next_poll_at(&self) -> Duration {
        self.next_poll
    }

    pub fn deadline(&self) -> Duration {
        self.started + self.lifetime
    }

    pub fn polls(&self) -> &[PollRecord] {
        &self.polls
    }

    /// Whether a call to [`Validation::poll`] at `now` would do anything.
    pub fn due(&self, now: Duration) -> bool {
        now >= self.next_poll || now >= self.deadline()
    }

    /// Advances the validation. Calls before the next poll slot are no-ops.
    pub fn poll(&mut self, now: Duration, status: Result<&VehicleStatus, &StatusError>) -> Step {
        if now >= self.deadline() {
            let observed = self.polls.iter().any(|p| p.status.is_some());
            return Step::Decided(Decision::NotActivated {
                reason: if observed {
                    RejectReason::ConditionsNeverMet
                } else {
                    RejectReason::Expired
                },
                at: now,
                polls: std::mem::take(&mut self.polls),
            });
        }
        if now < self.next_poll {
            return Step::Pending;
        }
        while self.next_poll <= now {
            self.next_poll += POLL_PERIOD;
        }

        match status {
            Ok(status) => {
                self.failing_since = None;
                let matched = match_conditions(&self.rule, status);
                self.polls.push(PollRecord { at: now, status: Some(status.clone()), matched });
                if matched {
                    return Step::Decided(Decision::Activated {
                        rule: self.rule.clone(),
                        effective_timer: self.rule.effective_timer(self.program_timer),
                        at: now,
                        polls: std::mem::take(&mut self.polls),
                    });
                }
            }
            Err(err) => {
                self.polls.push(PollRecord { at: now, status: None, matched: false });
                let since = *self.failing_since.get_or_insert(now);
                if now - since > STATUS_GRACE {
                    return Step::Failed(ValidationError::StatusUnavailable {
                        grace: STATUS_GRACE,
                        last: err.clone(),
                    });
                }
            }
        }
        Step::Pending
    }
}

/// Blocking form: returns once the instruction is activated, rejected, or
/// status has been unavailable for longer than [`STATUS_GRACE`].
pub fn validate_instruction(
    program: &AutoIRProgram,
    rule_base: &RuleBase,
    status_source: &mut dyn StatusSource,
    clock: &dyn Clock,
) -> Result<Decision, ValidationError> {
    let mut validation = match Validation::begin(program, rule_base, clock.now()) {
        Begin::Decided(d) => return Ok(d),
        Begin::Running(v) => v,
    };
    loop {
        let now = clock.now();
        let step = if now >= validation.deadline() {
            validation.poll(now, Err(&StatusError("not polled".into())))
        } else {
            let status = status_source.current_status();
            validation.poll(now, status.as_ref())
        };
        match step {
            Step::Pending => {
                clock.sleep_until(validation.next_poll_at().min(validation.deadline()))
            }
            Step::Decided(d) => return Ok(d),
            Step::Failed(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoir::ConfigValue;
    use crate::rules::status::Perception;

    fn program(param: &str, timer: f64) -> AutoIRProgram {
        let (m, n, v) = match param {
            "use_flag" => ("perception", "traffic_light_classifier_node", ConfigValue::Bool(false)),
            "lane_prefer" => ("planning", "mission_planner", ConfigValue::Token("LEFT".into())),
            _ => ("planning", "mission_planner", ConfigValue::Bool(true)),
        };
        AutoIRProgram::new(m, n, param, v, timer).unwrap()
    }

    #[test]
    fn activates_on_first_poll_when_stopped_at_red() {
        let rules = RuleBase::shipped();
        let clock = ScriptedClock::new();
        let mut source = || Ok(VehicleStatus::stopped([Perception::TrafficLightDetected]));
        let d = validate_instruction(&program("use_flag", 10.0), &rules, &mut source, &clock).unwrap();
        assert!(d.is_activated());
        assert_eq!(d.polls().len(), 1);
        assert_eq!(d.at(), Duration::ZERO);
    }

    #[test]
    fn never_matching_status_expires_at_lifetime() {
        let rules = RuleBase::shipped();
        let clock = ScriptedClock::new();
        let mut source = || Ok(VehicleStatus::from_speed(22.0, []));
        let d = validate_instruction(&program("lane_prefer", 10.0), &rules, &mut source, &clock).unwrap();
        match &d {
            Decision::NotActivated { reason, at, polls } => {
                assert_eq!(*reason, RejectReason::ConditionsNeverMet);
                assert_eq!(*at, Duration::from_secs(10));
                // Ticks 0.0, 0.1, ..., 9.9.
                assert_eq!(polls.len(), 100);
                assert!(polls.iter().all(|p| !p.matched));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn no_rule_means_no_polls() {
        let rules = RuleBase::shipped();
        let clock = ScriptedClock::new();
        let mut calls = 0;
        let mut source = || {
            calls += 1;
            Ok(VehicleStatus::stopped([]))
        };
        let d = validate_instruction(&program("sunroof", 10.0), &rules, &mut source, &clock).unwrap();
        assert_eq!(
            d,
            Decision::NotActivated { reason: RejectReason::NoRule, at: Duration::ZERO, polls: vec![] }
        );
        assert_eq!(calls, 0);
    }

    #[test]
    fn persistent_status_failure_is_an_error() {
        let rules = RuleBase::shipped();
        let clock = ScriptedClock::new();
        let mut source = || Err(StatusError("topic silent".into()));
        let err = validate_instruction(&program("lane_prefer", 10.0), &rules, &mut source, &clock)
            .unwrap_err();
        assert!(matches!(err, ValidationError::StatusUnavailable { .. }));
        // First failure at 0.0; the first poll strictly past the grace is 1.1.
        assert_eq!(clock.now(), Duration::from_millis(1100));
    }

    #[test]
    fn short_lifetime_without_status_expires() {
        let rules = RuleBase::shipped();
        let clock = ScriptedClock::new();
        let mut source = || Err(StatusError("topic silent".into()));
        let d = validate_instruction(&program("lane_prefer", 0.5), &rules, &mut source, &clock).unwrap();
        assert!(matches!(d, Decision::NotActivated { reason: RejectReason::Expired, .. }));
    }

    #[test]
    fn status_flip_is_picked_up_within_one_period() {
        let rules = RuleBase::shipped();
        let clock = ScriptedClock::new();
        let flip_at = Duration::from_millis(3250);
        let clock_ref = &clock;
        let mut source = move || {
            if clock_ref.now() >= flip_at {
                Ok(VehicleStatus::stopped([Perception::TrafficLightDetected]))
            } else {
                Ok(VehicleStatus::from_speed(8.0, [Perception::TrafficLightDetected]))
            }
        };
        let d = validate_instruction(&program("use_flag", 10.0), &rules, &mut source, &clock).unwrap();
        assert!(d.is_activated());
        assert!(d.at() >= flip_at && d.at() - flip_at <= POLL_PERIOD);
    }

    #[test]
    fn early_calls_do_not_poll() {
        let rules = RuleBase::shipped();
        let Begin::Running(mut v) = Validation::begin(&program("lane_prefer", 10.0), &rules, Duration::ZERO)
        else {
            panic!("rule expected");
        };
        let status = VehicleStatus::from_speed(22.0, []);
        assert_eq!(v.poll(Duration::ZERO, Ok(&status)), Step::Pending);
        assert_eq!(v.poll(Duration::from_millis(50), Ok(&status)), Step::Pending);
        assert_eq!(v.polls().len(), 1);
        assert_eq!(v.poll(Duration::from_millis(100), Ok(&status)), Step::Pending);
        assert_eq!(v.polls().len(), 2);
    }
}
