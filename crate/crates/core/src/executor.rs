//! Live parameter overrides with backup and timed restore.
//!
//! The executor is tick driven: [`Executor::tick`] expires overrides whose
//! timer ran out, then advances every in-flight validation by one poll.
//! Every parameter write goes through the [`ParamStore`], and the writes a
//! tick produced are handed back so the caller can mirror them onto the
//! driving stack.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoir::{AutoIRProgram, ConfigValue, ParamPath};
use crate::registry::{validate_program, ParamRegistry, ValidationReport};
use crate::rules::{
    Begin, Decision, RejectReason, Rule, RuleBase, StatusError, Step, Validation, VehicleStatus,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Instruction(u64),
    Restore(u64),
    /// A restore that replaced a value someone else wrote after the override.
    Overwrite(u64),
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeRecord {
    /// Seconds on the executor clock.
    pub t: f64,
    pub path: String,
    pub old: ConfigValue,
    pub new: ConfigValue,
    pub cause: Cause,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub path: ParamPath,
    pub original: ConfigValue,
    pub taken_at: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("no parameter at `{0}`")]
    UnknownPath(String),
    #[error("{path}: {message}")]
    TypeMismatch { path: String, message: String },
}

/// Current value of every registered parameter, plus the change log.
#[derive(Clone, Debug)]
pub struct ParamStore {
    registry: ParamRegistry,
    values: BTreeMap<String, ConfigValue>,
    log: Vec<ChangeRecord>,
}

impl ParamStore {
    /// Every parameter starts at its registry default.
    pub fn new(registry: ParamRegistry) -> Self {
        let values = registry.iter().map(|(path, d)| (path.to_string(), d.default.clone())).collect();
        ParamStore { registry, values, log: Vec::new() }
    }

    pub fn registry(&self) -> &ParamRegistry {
        &self.registry
    }

    pub fn get(&self, path: &ParamPath) -> Option<&ConfigValue> {
        self.values.get(&path.to_string())
    }

    pub fn values(&self) -> &BTreeMap<String, ConfigValue> {
        &self.values
    }

    pub fn log(&self) -> &[ChangeRecord] {
        &self.log
    }

    /// Canonical serialization of the live values.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.values).expect("values serialize")
    }

    pub fn write_log_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.log {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Checked write; returns the replaced value.
    pub fn write(&mut self, path: &ParamPath, value: &ConfigValue, t: f64, cause: Cause) -> Result<ConfigValue, StoreError> {
        let key = path.to_string();
        let desc = self.registry.get(path).ok_or_else(|| StoreError::UnknownPath(key.clone()))?;
        desc.check(value).map_err(|(_, message)| StoreError::TypeMismatch { path: key.clone(), message })?;
        let old = self.values.insert(key.clone(), value.clone()).expect("registered paths have values");
        self.log.push(ChangeRecord { t, path: key, old: old.clone(), new: value.clone(), cause });
        Ok(old)
    }

    /// Backs up the current value and writes `value` in one step.
    pub fn apply_override(&mut self, path: &ParamPath, value: &ConfigValue, t: f64, id: u64) -> Result<ParamSnapshot, StoreError> {
        let original = self.write(path, value, t, Cause::Instruction(id))?;
        Ok(ParamSnapshot { path: path.clone(), original, taken_at: t })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstructionState {
    Pending,
    Validating,
    Active,
    Expired,
    Rejected,
    Failed,
}

impl InstructionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, InstructionState::Expired | InstructionState::Rejected | InstructionState::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Rejected(RejectReason),
    StatusUnavailable(String),
    /// Withdrawn while Active.
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstructionRecord {
    pub id: u64,
    pub program: AutoIRProgram,
    pub state: InstructionState,
    pub rule: Option<Rule>,
    pub snapshot: Option<ParamSnapshot>,
    pub submitted_at: f64,
    pub activated_at: Option<f64>,
    pub expires_at: Option<f64>,
    pub reason: Option<Outcome>,
    /// Status polls the validation made.
    pub polls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum ExecEvent {
    Activated { id: u64, rule: Rule, effective_timer: f64, at: f64, polls: usize },
    Rejected { id: u64, reason: RejectReason, at: f64, polls: usize },
    Failed { id: u64, message: String, at: f64 },
    Expired { id: u64, at: f64, restored: ConfigValue, overwrote: bool },
}

impl ExecEvent {
    pub fn id(&self) -> u64 {
        match self {
            ExecEvent::Activated { id, .. }
            | ExecEvent::Rejected { id, .. }
            | ExecEvent::Failed { id, .. }
            | ExecEvent::Expired { id, .. } => *id,
        }
    }
}

/// What one tick did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TickOutput {
    pub events: Vec<ExecEvent>,
    /// Parameter writes, in order, for mirroring onto the stack.
    pub writes: Vec<(ParamPath, ConfigValue)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveOverride {
    pub id: u64,
    pub path: ParamPath,
    pub value: ConfigValue,
    /// Seconds, floored at zero.
    pub remaining: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("instruction {holder} already holds {path}")]
    ConflictPending { path: String, holder: u64 },
    #[error("program does not fit the registry: {0}")]
    Invalid(ValidationReport),
    #[error("no instruction with id {0}")]
    UnknownInstruction(u64),
    #[error("instruction {0} has already finished")]
    AlreadyTerminal(u64),
}

pub struct Executor {
    store: ParamStore,
    rule_base: RuleBase,
    records: Vec<InstructionRecord>,
    validations: BTreeMap<u64, Validation>,
    /// Decisions made at submission, reported on the next tick.
    decided: Vec<ExecEvent>,
    next_id: u64,
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

impl Executor {
    pub fn new(registry: ParamRegistry, rule_base: RuleBase) -> Self {
        Executor {
            store: ParamStore::new(registry),
            rule_base,
            records: Vec::new(),
            validations: BTreeMap::new(),
            decided: Vec::new(),
            next_id: 1,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn rule_base(&self) -> &RuleBase {
        &self.rule_base
    }

    pub fn records(&self) -> &[InstructionRecord] {
        &self.records
    }

    pub fn record(&self, id: u64) -> Option<&InstructionRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    fn record_mut(&mut self, id: u64) -> &mut InstructionRecord {
        self.records.iter_mut().find(|r| r.id == id).expect("record exists")
    }

    /// Registers a program and starts validating it. A program whose path
    /// has no rule is rejected straight away, without touching the store.
    pub fn submit(&mut self, program: AutoIRProgram, now: Duration) -> Result<u64, ExecError> {
        let report = validate_program(&program, self.store.registry());
        if !report.ok {
            return Err(ExecError::Invalid(report));
        }
        let path = program.path();
        if let Some(holder) = self.records.iter().find(|r| {
            r.program.path() == path && matches!(r.state, InstructionState::Validating | InstructionState::Active)
        }) {
            return Err(ExecError::ConflictPending { path: path.to_string(), holder: holder.id });
        }

        let id = self.next_id;
        self.next_id += 1;
        let mut record = InstructionRecord {
            id,
            program: program.clone(),
            state: InstructionState::Pending,
            rule: None,
            snapshot: None,
            submitted_at: secs(now),
            activated_at: None,
            expires_at: None,
            reason: None,
            polls: 0,
        };
        match Validation::begin(&program, &self.rule_base, now) {
            Begin::Decided(Decision::NotActivated { reason, at, polls }) => {
                record.state = InstructionState::Rejected;
                record.reason = Some(Outcome::Rejected(reason));
                self.decided.push(ExecEvent::Rejected { id, reason, at: secs(at), polls: polls.len() });
            }
            Begin::Decided(Decision::Activated { .. }) => unreachable!("begin never activates"),
            Begin::Running(v) => {
                record.state = InstructionState::Validating;
                record.rule = Some(v.rule().clone());
                self.validations.insert(id, v);
            }
        }
        self.records.push(record);
        Ok(id)
    }

    /// Expires due overrides, then polls every in-flight validation.
    pub fn tick(&mut self, now: Duration, status: Result<&VehicleStatus, &StatusError>) -> TickOutput {
        let mut out = TickOutput { events: std::mem::take(&mut self.decided), writes: Vec::new() };
        let t = secs(now);

        let due: Vec<u64> = self
            .records
            .iter()
            .filter(|r| r.state == InstructionState::Active && r.expires_at.is_some_and(|e| e <= t + 1e-9))
            .map(|r| r.id)
            .collect();
        for id in due {
            self.restore(id, t, None, &mut out);
        }

        let ids: Vec<u64> = self.validations.keys().copied().collect();
        for id in ids {
            let v = self.validations.get_mut(&id).expect("listed");
            let step = v.poll(now, status);
            let polls = v.polls().len();
            self.record_mut(id).polls = polls;
            match step {
                Step::Pending => {}
                Step::Decided(Decision::Activated { rule, effective_timer, at, polls }) => {
                    self.validations.remove(&id);
                    let program = self.record_mut(id).program.clone();
                    let path = program.path();
                    let snapshot = self
                        .store
                        .apply_override(&path, &program.config_action, t, id)
                        .expect("program was checked against the registry at submit");
                    out.writes.push((path, program.config_action.clone()));
                    let r = self.record_mut(id);
                    r.state = InstructionState::Active;
                    r.snapshot = Some(snapshot);
                    r.activated_at = Some(t);
                    r.expires_at = Some(t + effective_timer);
                    r.polls = polls.len();
                    out.events.push(ExecEvent::Activated { id, rule, effective_timer, at: secs(at), polls: polls.len() });
                }
                Step::Decided(Decision::NotActivated { reason, at, polls }) => {
                    self.validations.remove(&id);
                    let r = self.record_mut(id);
                    r.state = InstructionState::Rejected;
                    r.reason = Some(Outcome::Rejected(reason));
                    r.polls = polls.len();
                    out.events.push(ExecEvent::Rejected { id, reason, at: secs(at), polls: polls.len() });
                }
                Step::Failed(err) => {
                    self.validations.remove(&id);
                    let r = self.record_mut(id);
                    r.state = InstructionState::Failed;
                    r.reason = Some(Outcome::StatusUnavailable(err.to_string()));
                    out.events.push(ExecEvent::Failed { id, message: err.to_string(), at: t });
                }
            }
        }
        out
    }

    fn restore(&mut self, id: u64, t: f64, outcome: Option<Outcome>, out: &mut TickOutput) {
        let r = self.record_mut(id);
        let snapshot = r.snapshot.clone().expect("active records hold a snapshot");
        let written = r.program.config_action.clone();
        r.state = InstructionState::Expired;
        if outcome.is_some() {
            r.reason = outcome;
        }
        let overwrote = self.store.get(&snapshot.path) != Some(&written);
        let cause = if overwrote { Cause::Overwrite(id) } else { Cause::Restore(id) };
        self.store
            .write(&snapshot.path, &snapshot.original, t, cause)
            .expect("snapshot values satisfy their descriptor");
        out.writes.push((snapshot.path.clone(), snapshot.original.clone()));
        out.events.push(ExecEvent::Expired { id, at: t, restored: snapshot.original, overwrote });
    }

    /// Withdraws an instruction. A validating one is rejected; an active one
    /// is restored immediately.
    pub fn cancel(&mut self, id: u64, now: Duration) -> Result<TickOutput, ExecError> {
        let state = self.record(id).ok_or(ExecError::UnknownInstruction(id))?.state;
        let mut out = TickOutput::default();
        match state {
            InstructionState::Validating | InstructionState::Pending => {
                self.validations.remove(&id);
                let r = self.record_mut(id);
                r.state = InstructionState::Rejected;
                r.reason = Some(Outcome::Rejected(RejectReason::Cancelled));
                out.events.push(ExecEvent::Rejected { id, reason: RejectReason::Cancelled, at: secs(now), polls: r.polls });
            }
            InstructionState::Active => self.restore(id, secs(now), Some(Outcome::Cancelled), &mut out),
            _ => return Err(ExecError::AlreadyTerminal(id)),
        }
        Ok(out)
    }

    /// An operator write outside any instruction.
    pub fn manual_write(&mut self, path: &ParamPath, value: &ConfigValue, now: Duration) -> Result<ConfigValue, StoreError> {
        self.store.write(path, value, secs(now), Cause::Manual)
    }

    pub fn active_overrides(&self, now: Duration) -> Vec<ActiveOverride> {
        let t = secs(now);
        self.records
            .iter()
            .filter(|r| r.state == InstructionState::Active)
            .map(|r| ActiveOverride {
                id: r.id,
                path: r.program.path(),
                value: r.program.config_action.clone(),
                remaining: (r.expires_at.unwrap_or(t) - t).max(0.0),
            })
            .collect()
    }

    /// No record is validating or active.
    pub fn is_idle(&self) -> bool {
        self.records.iter().all(|r| r.state.is_terminal())
    }
}
