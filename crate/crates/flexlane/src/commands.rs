//! The operator commands, as library functions the binary and the tests
//! share.

use std::path::Path;
use std::sync::Arc;

use flexlane_core::autoir::AutoIRProgram;
use flexlane_core::executor::ChangeRecord;
use flexlane_core::registry::ParamRegistry;
use flexlane_core::rules::bench::{bench_rule_matching, probes_for, scaled_rule_base, LatencyStats, MIN_ROUNDS};
use flexlane_core::rules::{ConditionSet, MotionCondition, Perception, Rule, RuleBase, VehicleStatus};
use flexlane_core::sim::{evaluate_predicates, PredicateOutcome, Scenario, Simulator, WorldState};
use flexlane_core::translation::kb::{entries_from_document, load_kb_dir, shipped_entries};
use flexlane_core::translation::{
    build_index, data_dir, evaluate, load_golden, EvalReport, HttpProvider, MockProvider, Provider, Translator,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{Session, Trace, TriggerWatch};

/// Half-width of the speed band a recorded rule admits, m/s.
pub const RECORD_SPEED_BAND: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, files or datasets.
    #[error("{0}")]
    Input(String),
    /// The command ran but the scenario did not do what it should.
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 3,
            CliError::Failure(_) => 2,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ProviderKind {
    Mock,
    Http,
}

pub fn make_provider(kind: ProviderKind) -> Result<Arc<dyn Provider>, CliError> {
    Ok(match kind {
        ProviderKind::Mock => Arc::new(MockProvider::shipped()),
        ProviderKind::Http => Arc::new(HttpProvider::from_env().map_err(input)?),
    })
}

/// Translator over a knowledge base path: a directory of `.kb` files, or a
/// single document that is chunked with no paired programs.
pub fn translator_for(kb: &Path, provider: Arc<dyn Provider>) -> Result<Translator, CliError> {
    let registry = ParamRegistry::shipped();
    let entries = if kb.is_dir() {
        load_kb_dir(kb, &registry).map_err(input)?
    } else {
        let text = std::fs::read_to_string(kb).map_err(|e| input(format!("{}: {e}", kb.display())))?;
        let stem = kb.file_stem().and_then(|s| s.to_str()).unwrap_or("document");
        entries_from_document(stem, &text)
    };
    Ok(Translator::new(build_index(entries).map_err(input)?, provider, registry))
}

/// Translator over the curated knowledge base.
pub fn shipped_translator(provider: Arc<dyn Provider>) -> Translator {
    let registry = ParamRegistry::shipped();
    let entries = shipped_entries(&registry).expect("shipped knowledge base loads");
    Translator::new(build_index(entries).expect("shipped entry ids are unique"), provider, registry)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTranscript {
    pub scenario: Scenario,
    pub instruction: Option<String>,
    pub provider: String,
    pub trace: Option<Trace>,
    /// World state before the first tick, then after every tick.
    pub states: Vec<WorldState>,
    pub change_log: Vec<ChangeRecord>,
    pub outcome: Vec<PredicateOutcome>,
    pub passed: bool,
}

impl RunTranscript {
    /// Re-evaluates the predicates from the recorded states alone.
    pub fn reevaluate(&self) -> Vec<PredicateOutcome> {
        evaluate_predicates(&self.scenario, &self.states, self.instruction.is_some())
    }
}

/// Runs a scenario to its horizon, injecting `instruction` at the scripted
/// moment when given.
pub fn cmd_run(scenario: Scenario, instruction: Option<&str>, translator: Arc<Translator>) -> Result<RunTranscript, CliError> {
    if instruction.is_some_and(|t| t.trim().is_empty()) {
        return Err(CliError::Input("instruction text is empty".into()));
    }
    let provider = translator.provider.name().to_string();
    let mut session = Session::new(scenario.clone(), translator, RuleBase::shipped()).map_err(input)?;
    session.record_states();
    if let Some(text) = instruction {
        session.schedule_instruction(text);
    }
    for _ in 0..session.sim().horizon_ticks() {
        session.tick();
    }
    let states = session.states().to_vec();
    let outcome = evaluate_predicates(&scenario, &states, instruction.is_some());
    let trace = session.traces().next().cloned();
    Ok(RunTranscript {
        passed: outcome.iter().all(|o| o.passed),
        trace,
        change_log: session.executor().store().log().to_vec(),
        instruction: instruction.map(str::to_string),
        provider,
        scenario,
        states,
        outcome,
    })
}

/// Golden-set evaluation against the given knowledge base.
pub fn cmd_eval(dataset: &Path, kb: &Path, provider: Arc<dyn Provider>) -> Result<EvalReport, CliError> {
    let items = load_golden(dataset).map_err(input)?;
    let translator = translator_for(kb, provider)?;
    Ok(evaluate(&items, &translator))
}

pub fn default_dataset() -> std::path::PathBuf {
    data_dir().join("golden.jsonl")
}

pub fn default_kb() -> std::path::PathBuf {
    data_dir().join("kb")
}

pub fn manual_kb() -> std::path::PathBuf {
    data_dir().join("manual.md")
}

/// Status the bench matches every probe against.
pub fn bench_status() -> VehicleStatus {
    VehicleStatus::stopped([Perception::TrafficLightDetected])
}

pub fn cmd_bench(rules: usize, rounds: usize) -> Result<LatencyStats, CliError> {
    if rules == 0 {
        return Err(CliError::Input("--rules must be at least 1".into()));
    }
    if rounds < MIN_ROUNDS {
        return Err(CliError::Input(format!("--rounds must be at least {MIN_ROUNDS}, got {rounds}")));
    }
    let base = scaled_rule_base(&RuleBase::shipped(), rules);
    bench_rule_matching(&base, &probes_for(&base), &bench_status(), rounds).map_err(input)
}

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("scenario `{0}` has no instruction trigger to record at")]
    NoTrigger(String),
    #[error("the injection point was never reached within {0} s")]
    InjectionNeverReached(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleDraft {
    pub captured_at: f64,
    pub status: VehicleStatus,
    pub rule: Rule,
}

/// Drives the scenario without instructions until its injection trigger
/// fires and turns the status seen there into a rule for `program`'s path.
pub fn cmd_record_rule(scenario: &Scenario, program: &AutoIRProgram) -> Result<RuleDraft, RecordError> {
    let script = scenario.instruction.as_ref().ok_or_else(|| RecordError::NoTrigger(scenario.name.clone()))?;
    let mut watch = TriggerWatch::new(script.trigger.clone());
    let mut sim = Simulator::new(scenario.clone()).expect("scenario was checked when loaded");
    for _ in 0..sim.horizon_ticks() {
        sim.step();
        let status = sim.vehicle_status();
        if watch.observe(sim.time(), &status) {
            let rule = Rule {
                search_index: program.path(),
                conditions: ConditionSet {
                    motion_state: MotionCondition::from(status.motion_state),
                    speed_min: (status.speed - RECORD_SPEED_BAND).max(0.0),
                    speed_max: status.speed + RECORD_SPEED_BAND,
                    required: status.perceptions.clone(),
                    forbidden: Default::default(),
                },
                timer_cap: None,
            };
            return Ok(RuleDraft { captured_at: sim.time(), status, rule });
        }
    }
    Err(RecordError::InjectionNeverReached(scenario.horizon))
}
