//! One live driving session: simulator, bus, translator and executor wired
//! together and advanced tick by tick.
//!
//! Tick order: simulator step, status publish, scripted injection,
//! translation, then the executor (submit new programs, poll, expire) whose
//! parameter writes are mirrored onto the simulator for the next step.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use flexlane_core::autoir::{serialize_autoir, ConfigValue};
use flexlane_core::bus::msgs::{
    AutoIrMsg, DetectedObjectsMsg, MotionStateMsg, TrafficLightRoisMsg, UserInstructionMsg, Utterance,
    VelocityStatusMsg, TOPIC_AUTOIR, TOPIC_MOTION_STATE, TOPIC_OBJECTS, TOPIC_TRAFFIC_LIGHTS,
    TOPIC_USER_INSTRUCTION, TOPIC_VELOCITY,
};
use flexlane_core::bus::{Bus, BusError, Payload, Publisher, SchemaId, Subscription};
use flexlane_core::executor::{ActiveOverride, ExecEvent, Executor};
use flexlane_core::rules::{Perception, RejectReason, Rule, RuleBase, StatusError, VehicleStatus};
use flexlane_core::sim::{reconstruct_status, Scenario, SimError, Simulator, Trigger, WorldState};
use flexlane_core::translation::{Attempt, Outcome, RetrievedRef, Translation, TranslationError, Translator};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceKind {
    Received { text: String },
    Verdict { relevant: bool, rationale: String },
    Retrieved { entries: Vec<RetrievedRef> },
    Generated { autoir: String, attempts: Vec<Attempt> },
    TranslationFailed { error: TranslationError, attempts: Vec<Attempt> },
    Submitted { instruction_id: u64 },
    SubmitRefused { message: String },
    Activated { instruction_id: u64, rule: Rule, effective_timer: f64, polls: usize, status: Option<VehicleStatus> },
    Rejected { instruction_id: u64, reason: RejectReason, polls: usize },
    Failed { instruction_id: u64, message: String },
    Expired { instruction_id: u64, restored: ConfigValue, overwrote: bool },
}

impl TraceKind {
    /// Position in the pipeline; events of one trace never go backwards.
    pub fn stage(&self) -> u8 {
        match self {
            TraceKind::Received { .. } => 0,
            TraceKind::Verdict { .. } => 1,
            TraceKind::Retrieved { .. } => 2,
            TraceKind::Generated { .. } | TraceKind::TranslationFailed { .. } => 3,
            TraceKind::Submitted { .. } | TraceKind::SubmitRefused { .. } => 4,
            TraceKind::Activated { .. } | TraceKind::Rejected { .. } | TraceKind::Failed { .. } => 5,
            TraceKind::Expired { .. } => 6,
        }
    }

    fn ends_trace(&self) -> bool {
        matches!(
            self,
            TraceKind::Verdict { relevant: false, .. }
                | TraceKind::TranslationFailed { .. }
                | TraceKind::SubmitRefused { .. }
                | TraceKind::Rejected { .. }
                | TraceKind::Failed { .. }
                | TraceKind::Expired { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub trace_id: u64,
    pub stage: u8,
    /// Sim seconds.
    pub t: f64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub trace_id: u64,
    pub utterance: String,
    pub instruction_id: Option<u64>,
    pub finished: bool,
    pub events: Vec<TraceEvent>,
}

/// What the gateway streams each tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub scenario: String,
    pub tick: u64,
    pub time: f64,
    pub world: WorldState,
    pub status: VehicleStatus,
    pub overrides: Vec<ActiveOverride>,
    pub trace_events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("instruction text is empty")]
    EmptyInstruction,
}

/// Watches for a scenario's injection trigger.
#[derive(Clone, Debug)]
pub struct TriggerWatch {
    trigger: Trigger,
    stopped_since: Option<f64>,
    first_seen: BTreeMap<Perception, f64>,
}

impl TriggerWatch {
    pub fn new(trigger: Trigger) -> Self {
        TriggerWatch { trigger, stopped_since: None, first_seen: BTreeMap::new() }
    }

    /// Feeds one observed tick; true once the trigger condition holds.
    pub fn observe(&mut self, time: f64, status: &VehicleStatus) -> bool {
        if status.motion_state == flexlane_core::rules::MotionState::Stopped {
            self.stopped_since.get_or_insert(time);
        } else {
            self.stopped_since = None;
        }
        for p in &status.perceptions {
            self.first_seen.entry(*p).or_insert(time);
        }
        match &self.trigger {
            Trigger::At { t } => time + 1e-9 >= *t,
            Trigger::StoppedFor { secs } => self.stopped_since.is_some_and(|s| time - s + 1e-9 >= *secs),
            Trigger::Perceived { tag, delay } => self.first_seen.get(tag).is_some_and(|s| time - s + 1e-9 >= *delay),
        }
    }
}

struct StatusSubs {
    motion: Subscription,
    velocity: Subscription,
    objects: Subscription,
    rois: Subscription,
}

#[derive(Default)]
struct LatestStatus {
    motion: Option<MotionStateMsg>,
    velocity: Option<VelocityStatusMsg>,
    objects: Option<DetectedObjectsMsg>,
    rois: Option<TrafficLightRoisMsg>,
}

struct Injection {
    text: String,
    watch: TriggerWatch,
    fired: bool,
}

/// A finished background translation and the trace it belongs to.
type Finished = (u64, Translation);

pub struct Session {
    bus: Bus,
    sim: Simulator,
    translator: Arc<Translator>,
    executor: Executor,
    sim_pub: Publisher,
    front_pub: Publisher,
    translator_pub: Publisher,
    status_subs: StatusSubs,
    instruction_sub: Subscription,
    autoir_sub: Subscription,
    latest: LatestStatus,
    traces: BTreeMap<u64, Trace>,
    by_instruction: BTreeMap<u64, u64>,
    next_trace: u64,
    background: Option<(mpsc::Sender<Finished>, mpsc::Receiver<Finished>)>,
    injection: Option<Injection>,
    record: bool,
    states: Vec<WorldState>,
    tick_events: Vec<TraceEvent>,
}

impl Session {
    pub fn new(scenario: Scenario, translator: Arc<Translator>, rule_base: RuleBase) -> Result<Session, SessionError> {
        let sim = Simulator::new(scenario)?;
        let bus = Bus::new();
        Simulator::declare_status_topics(&bus)?;
        bus.declare_reliable_topic(TOPIC_USER_INSTRUCTION, SchemaId::Utterance)?;
        bus.declare_reliable_topic(TOPIC_AUTOIR, SchemaId::AutoIRProgram)?;
        let status_subs = StatusSubs {
            motion: bus.subscribe(TOPIC_MOTION_STATE)?,
            velocity: bus.subscribe(TOPIC_VELOCITY)?,
            objects: bus.subscribe(TOPIC_OBJECTS)?,
            rois: bus.subscribe(TOPIC_TRAFFIC_LIGHTS)?,
        };
        let executor = Executor::new(translator.registry.as_ref().clone(), rule_base);
        Ok(Session {
            sim_pub: bus.publisher(),
            front_pub: bus.publisher(),
            translator_pub: bus.publisher(),
            instruction_sub: bus.subscribe(TOPIC_USER_INSTRUCTION)?,
            autoir_sub: bus.subscribe(TOPIC_AUTOIR)?,
            status_subs,
            bus,
            sim,
            translator,
            executor,
            latest: LatestStatus::default(),
            traces: BTreeMap::new(),
            by_instruction: BTreeMap::new(),
            next_trace: 1,
            background: None,
            injection: None,
            record: false,
            states: Vec::new(),
            tick_events: Vec::new(),
        })
    }

    /// Keep every world state for a transcript. The initial state is kept
    /// straight away.
    pub fn record_states(&mut self) {
        self.record = true;
        self.states = vec![self.sim.state().clone()];
    }

    /// Translate on worker threads instead of inside the tick. Results join
    /// the pipeline on the first tick after they are ready.
    pub fn translate_in_background(&mut self) {
        self.background = Some(mpsc::channel());
    }

    /// Injects `text` when the scenario's trigger fires, or on the first
    /// tick when the scenario has none.
    pub fn schedule_instruction(&mut self, text: &str) {
        let trigger =
            self.sim.scenario().instruction.as_ref().map_or(Trigger::At { t: 0.0 }, |s| s.trigger.clone());
        self.injection = Some(Injection { text: text.to_string(), watch: TriggerWatch::new(trigger), fired: false });
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn states(&self) -> &[WorldState] {
        &self.states
    }

    pub fn trace(&self, trace_id: u64) -> Option<&Trace> {
        self.traces.get(&trace_id)
    }

    pub fn traces(&self) -> impl Iterator<Item = &Trace> {
        self.traces.values()
    }

    fn now(&self) -> Duration {
        Duration::from_secs_f64(self.sim.time())
    }

    fn push_event(&mut self, trace_id: u64, kind: TraceKind) {
        let event = TraceEvent { trace_id, stage: kind.stage(), t: self.sim.time(), kind };
        if let Some(trace) = self.traces.get_mut(&trace_id) {
            trace.finished |= event.kind.ends_trace();
            trace.events.push(event.clone());
        }
        self.tick_events.push(event);
    }

    /// The single way instructions enter the session: published on the
    /// user instruction topic and picked up by the translator stage.
    pub fn submit_utterance(&mut self, text: &str) -> Result<u64, SessionError> {
        let utterance = Utterance::new(text.trim()).ok_or(SessionError::EmptyInstruction)?;
        let trace_id = self.next_trace;
        self.front_pub.publish(
            TOPIC_USER_INSTRUCTION,
            Payload::Utterance(UserInstructionMsg { trace_id, utterance: utterance.clone() }),
        )?;
        self.next_trace += 1;
        self.traces.insert(
            trace_id,
            Trace { trace_id, utterance: utterance.text.clone(), instruction_id: None, finished: false, events: Vec::new() },
        );
        self.push_event(trace_id, TraceKind::Received { text: utterance.text });
        Ok(trace_id)
    }

    /// Advances one tick and returns the frame describing it.
    pub fn tick(&mut self) -> StateFrame {
        self.sim.step();
        if self.record {
            self.states.push(self.sim.state().clone());
        }
        // The sim publisher is the only writer on these topics; a failure
        // here would be a wiring bug.
        self.sim.publish_status(&self.sim_pub).expect("status topics are declared");

        let status = self.sim.vehicle_status();
        let time = self.sim.time();
        if let Some(inj) = self.injection.as_mut().filter(|i| !i.fired) {
            if inj.watch.observe(time, &status) {
                inj.fired = true;
                let text = inj.text.clone();
                // Scripted text is non-empty by construction of the callers.
                let _ = self.submit_utterance(&text);
            }
        }

        self.translator_stage();
        self.executor_stage();

        StateFrame {
            scenario: self.sim.scenario().name.clone(),
            tick: self.sim.state().tick,
            time: self.sim.time(),
            world: self.sim.state().clone(),
            status,
            overrides: self.executor.active_overrides(self.now()),
            trace_events: std::mem::take(&mut self.tick_events),
        }
    }

    fn translator_stage(&mut self) {
        let mut ready = Vec::new();
        if let Some((_, rx)) = &self.background {
            ready.extend(rx.try_iter());
        }
        for env in self.instruction_sub.drain() {
            let Payload::Utterance(msg) = env.payload else { continue };
            match &self.background {
                Some((tx, _)) => {
                    let (tx, translator) = (tx.clone(), Arc::clone(&self.translator));
                    std::thread::spawn(move || {
                        let t = translator.translate(&msg.utterance.text);
                        let _ = tx.send((msg.trace_id, t));
                    });
                }
                None => ready.push((msg.trace_id, self.translator.translate(&msg.utterance.text))),
            }
        }
        for (trace_id, t) in ready {
            self.record_translation(trace_id, t);
        }
    }

    fn record_translation(&mut self, trace_id: u64, t: Translation) {
        if let Some(v) = &t.verdict {
            self.push_event(trace_id, TraceKind::Verdict { relevant: v.relevant, rationale: v.rationale.clone() });
        }
        if !t.retrieved.is_empty() {
            self.push_event(trace_id, TraceKind::Retrieved { entries: t.retrieved.clone() });
        }
        match t.outcome {
            Outcome::Irrelevant => {}
            Outcome::Program { program } => {
                self.push_event(
                    trace_id,
                    TraceKind::Generated { autoir: serialize_autoir(&program), attempts: t.attempts },
                );
                if let Err(e) =
                    self.translator_pub.publish(TOPIC_AUTOIR, Payload::AutoIRProgram(AutoIrMsg { trace_id, program }))
                {
                    self.push_event(trace_id, TraceKind::SubmitRefused { message: e.to_string() });
                }
            }
            Outcome::Failed { error } => {
                self.push_event(trace_id, TraceKind::TranslationFailed { error, attempts: t.attempts });
            }
        }
    }

    fn current_status(&mut self) -> Result<VehicleStatus, StatusError> {
        let s = &self.status_subs;
        let l = &mut self.latest;
        macro_rules! latest {
            ($sub:expr, $slot:expr, $variant:ident) => {
                for env in $sub.drain() {
                    if let Payload::$variant(m) = env.payload {
                        $slot = Some(m);
                    }
                }
            };
        }
        latest!(s.motion, l.motion, MotionState);
        latest!(s.velocity, l.velocity, VelocityStatus);
        latest!(s.objects, l.objects, DetectedObjects);
        latest!(s.rois, l.rois, TrafficLightRois);
        match (&l.motion, &l.velocity, &l.objects, &l.rois) {
            (Some(m), Some(v), Some(o), Some(r)) => Ok(reconstruct_status(m, v, o, r)),
            _ => Err(StatusError("status topics have not all published yet".into())),
        }
    }

    fn executor_stage(&mut self) {
        let now = self.now();
        for env in self.autoir_sub.drain() {
            let Payload::AutoIRProgram(msg) = env.payload else { continue };
            match self.executor.submit(msg.program, now) {
                Ok(id) => {
                    self.by_instruction.insert(id, msg.trace_id);
                    if let Some(t) = self.traces.get_mut(&msg.trace_id) {
                        t.instruction_id = Some(id);
                    }
                    self.push_event(msg.trace_id, TraceKind::Submitted { instruction_id: id });
                }
                Err(e) => self.push_event(msg.trace_id, TraceKind::SubmitRefused { message: e.to_string() }),
            }
        }
        let status = self.current_status();
        let out = self.executor.tick(now, status.as_ref());
        for event in out.events {
            let Some(&trace_id) = self.by_instruction.get(&event.id()) else { continue };
            let kind = match event {
                ExecEvent::Activated { id, rule, effective_timer, polls, .. } => TraceKind::Activated {
                    instruction_id: id,
                    rule,
                    effective_timer,
                    polls,
                    status: status.as_ref().ok().cloned(),
                },
                ExecEvent::Rejected { id, reason, polls, .. } => {
                    TraceKind::Rejected { instruction_id: id, reason, polls }
                }
                ExecEvent::Failed { id, message, .. } => TraceKind::Failed { instruction_id: id, message },
                ExecEvent::Expired { id, restored, overwrote, .. } => {
                    TraceKind::Expired { instruction_id: id, restored, overwrote }
                }
            };
            self.push_event(trace_id, kind);
        }
        for (path, value) in out.writes {
            // The executor validated the program against the same registry
            // the simulator uses.
            self.sim.set_node_param(&path, &value).expect("registered parameter");
        }
    }
}
