//! Randomized oracle drivers shared by the core integration tests and the
//! acceptance suite. Each returns how many cases it checked, or the first
//! disagreement.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

use flexlane_core::autoir::{AutoIRProgram, ConfigValue, ParamPath};
use flexlane_core::bus::msgs::{VelocityStatusMsg, TOPIC_VELOCITY};
use flexlane_core::bus::{Bus, Payload, PublisherId, SchemaId, SENSOR_QUEUE_CAPACITY};
use flexlane_core::executor::{Cause, Executor, InstructionState, Outcome, ParamStore};
use flexlane_core::registry::{ParamDescriptor, ParamRegistry, ValueSpec};
use flexlane_core::rules::{
    match_conditions, search_rule, ConditionSet, MotionCondition, MotionState, Perception, Rule,
    RuleBase, StatusError, VehicleStatus,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 4] = ["a", "b", "c", "d"];
const PERCEPTIONS: [Perception; 3] =
    [Perception::TrafficLightDetected, Perception::ObstacleDetected, Perception::PedestrianDetected];

fn random_path(rng: &mut ChaCha8Rng) -> ParamPath {
    ParamPath::new(NAMES[rng.gen_range(0..4)], NAMES[rng.gen_range(0..4)], NAMES[rng.gen_range(0..4)])
}

fn random_conditions(rng: &mut ChaCha8Rng) -> ConditionSet {
    let mut required = BTreeSet::new();
    let mut forbidden = BTreeSet::new();
    for p in PERCEPTIONS {
        match rng.gen_range(0..4) {
            0 => {
                required.insert(p);
            }
            1 => {
                forbidden.insert(p);
            }
            _ => {}
        }
    }
    let lo = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..10.0) };
    let hi = if rng.gen_bool(0.2) { f64::INFINITY } else { lo + rng.gen_range(0.0..15.0) };
    ConditionSet {
        motion_state: [MotionCondition::Any, MotionCondition::Driving, MotionCondition::Stopped][rng.gen_range(0..3)],
        speed_min: lo,
        speed_max: hi,
        required,
        forbidden,
    }
}

fn random_status(rng: &mut ChaCha8Rng) -> VehicleStatus {
    let speed = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..20.0) };
    let perceptions: Vec<Perception> = PERCEPTIONS.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
    VehicleStatus::from_speed(speed, perceptions)
}

/// Independent reading of a rule's conditions.
fn conditions_hold(c: &ConditionSet, s: &VehicleStatus) -> bool {
    let motion = match c.motion_state {
        MotionCondition::Any => true,
        MotionCondition::Driving => s.motion_state == MotionState::Driving,
        MotionCondition::Stopped => s.motion_state == MotionState::Stopped,
    };
    let in_band = s.speed >= c.speed_min && s.speed <= c.speed_max;
    let mut tags_ok = true;
    for p in PERCEPTIONS {
        let seen = s.perceptions.contains(&p);
        if (c.required.contains(&p) && !seen) || (c.forbidden.contains(&p) && seen) {
            tags_ok = false;
        }
    }
    motion && in_band && tags_ok
}

/// Tree search plus matching against a linear scan over the same rules.
pub fn rule_search_vs_linear_scan(seed: u64, bases: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for b in 0..bases {
        let mut rules: Vec<Rule> = Vec::new();
        for _ in 0..rng.gen_range(0..48) {
            let path = random_path(&mut rng);
            if rules.iter().all(|r| r.search_index != path) {
                rules.push(Rule {
                    search_index: path,
                    conditions: random_conditions(&mut rng),
                    timer_cap: rng.gen_bool(0.7).then(|| rng.gen_range(1.0..30.0)),
                });
            }
        }
        let base = RuleBase::new(rules.clone()).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let probe = random_path(&mut rng);
            let program = AutoIRProgram::new(&probe.module, &probe.node, &probe.param, ConfigValue::Bool(true), 1.0)
                .map_err(|e| e.to_string())?;
            let status = random_status(&mut rng);
            let linear = rules.iter().find(|r| r.search_index == probe);
            let tree = search_rule(&base, &program);
            if tree != linear {
                return Err(format!("base {b}: search for {probe} disagrees"));
            }
            let tree_match = tree.map(|r| match_conditions(r, &status));
            let oracle_match = linear.map(|r| conditions_hold(&r.conditions, &status));
            if tree_match != oracle_match {
                return Err(format!("base {b}: match for {probe} under {status:?} disagrees"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Interleaved publishes from several publishers and partial reads by
/// several subscribers, against an exact model of drop-oldest queues.
pub fn bus_fifo_vs_model(seed: u64, schedules: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in 0..schedules {
        let bus = Bus::new();
        bus.declare_topic(TOPIC_VELOCITY, SchemaId::VelocityStatus).map_err(|e| e.to_string())?;
        let publishers: Vec<_> = (0..rng.gen_range(2..4)).map(|_| bus.publisher()).collect();
        let subs: Vec<_> = (0..rng.gen_range(1..4)).map(|_| bus.subscribe(TOPIC_VELOCITY).unwrap()).collect();
        let mut model: Vec<VecDeque<(PublisherId, u64, f64)>> = vec![VecDeque::new(); subs.len()];
        let mut model_drops = vec![0u64; subs.len()];
        let mut next_seq: BTreeMap<PublisherId, u64> = BTreeMap::new();
        let mut last_seen: Vec<BTreeMap<PublisherId, u64>> = vec![BTreeMap::new(); subs.len()];

        for op in 0..rng.gen_range(10..300) {
            if rng.gen_bool(0.75) {
                let p = publishers.choose(&mut rng).unwrap();
                let value = (op as f64) + f64::from(rng.gen_range(0..1000u32)) / 1000.0;
                let seq = p
                    .publish(TOPIC_VELOCITY, Payload::VelocityStatus(VelocityStatusMsg { longitudinal_velocity: value }))
                    .map_err(|e| e.to_string())?;
                let expected = next_seq.entry(p.id()).or_insert(0);
                *expected += 1;
                if seq != *expected {
                    return Err(format!("schedule {n}: seq {seq}, expected {expected}"));
                }
                for (q, drops) in model.iter_mut().zip(model_drops.iter_mut()) {
                    if q.len() == SENSOR_QUEUE_CAPACITY {
                        q.pop_front();
                        *drops += 1;
                    }
                    q.push_back((p.id(), seq, value));
                }
            } else {
                let i = rng.gen_range(0..subs.len());
                for _ in 0..rng.gen_range(1..40) {
                    let got = subs[i].try_recv();
                    let want = model[i].pop_front();
                    match (got, want) {
                        (None, None) => break,
                        (Some(e), Some((pid, seq, value))) => {
                            let Payload::VelocityStatus(m) = &e.payload else {
                                return Err(format!("schedule {n}: wrong payload schema"));
                            };
                            if (e.publisher, e.seq, m.longitudinal_velocity) != (pid, seq, value) {
                                return Err(format!("schedule {n}: got {:?}/{}, model {pid:?}/{seq}", e.publisher, e.seq));
                            }
                            let last = last_seen[i].insert(pid, seq).unwrap_or(0);
                            if seq <= last {
                                return Err(format!("schedule {n}: {pid:?} went from {last} to {seq}"));
                            }
                        }
                        (got, want) => return Err(format!("schedule {n}: got {got:?}, model {want:?}")),
                    }
                }
            }
        }
        for (i, s) in subs.iter().enumerate() {
            if s.dropped() != model_drops[i] {
                return Err(format!("schedule {n}: {} drops, model {}", s.dropped(), model_drops[i]));
            }
        }
    }
    Ok(schedules)
}

fn random_registry(rng: &mut ChaCha8Rng) -> ParamRegistry {
    let mut reg = ParamRegistry::default();
    for _ in 0..rng.gen_range(1..10) {
        let path = random_path(rng);
        if reg.get(&path).is_some() {
            continue;
        }
        let (spec, default) = match rng.gen_range(0..3) {
            0 => (ValueSpec::Boolean, ConfigValue::Bool(rng.gen_bool(0.5))),
            1 => {
                let min = rng.gen_range(-10.0..10.0f64).round();
                let max = min + rng.gen_range(1.0..50.0f64).round();
                let default = (rng.gen_range(min..=max) * 10.0f64).round() / 10.0;
                (
                    ValueSpec::Number { unit: None, min: Some(min), max: Some(max) },
                    ConfigValue::Number(default.clamp(min, max)),
                )
            }
            _ => {
                let count = rng.gen_range(2..5);
                let tokens: Vec<String> = ["LEFT", "RIGHT", "NONE", "FAST", "SLOW"]
                    .choose_multiple(rng, count)
                    .map(|t| t.to_string())
                    .collect();
                let default = ConfigValue::Token(tokens.choose(rng).unwrap().clone());
                (ValueSpec::Enum { tokens }, default)
            }
        };
        reg.insert(&path, ParamDescriptor { spec, default, description: None }).unwrap();
    }
    reg
}

fn random_value(rng: &mut ChaCha8Rng, desc: &ParamDescriptor) -> ConfigValue {
    match &desc.spec {
        ValueSpec::Boolean => ConfigValue::Bool(rng.gen_bool(0.5)),
        ValueSpec::Number { min, max, .. } => {
            let (lo, hi) = (min.unwrap_or(0.0), max.unwrap_or(100.0));
            ConfigValue::Number(((rng.gen_range(lo..=hi) * 100.0).round() / 100.0).clamp(lo, hi))
        }
        ValueSpec::Enum { tokens } => ConfigValue::Token(tokens.choose(rng).unwrap().clone()),
    }
}

const TICK: Duration = Duration::from_millis(100);

/// Random submit/cancel schedules over random registries and rule bases.
/// Once everything is terminal the store must serialize exactly as a fresh
/// one, and only activated instructions may appear in the change log.
pub fn rollback_schedules(seed: u64, schedules: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut activations, mut expiries) = (0usize, 0usize);
    for n in 0..schedules {
        let registry = random_registry(&mut rng);
        let paths: Vec<(ParamPath, ParamDescriptor)> = registry.iter().map(|(p, d)| (p, d.clone())).collect();
        let mut rules: Vec<Rule> = Vec::new();
        for (p, _) in &paths {
            if rng.gen_bool(0.8) {
                rules.push(Rule {
                    search_index: p.clone(),
                    conditions: random_conditions(&mut rng),
                    timer_cap: rng.gen_bool(0.6).then(|| rng.gen_range(0.5..8.0)),
                });
            }
        }
        let fresh = ParamStore::new(registry.clone()).to_json();
        let mut ex = Executor::new(registry, RuleBase::new(rules).map_err(|e| e.to_string())?);

        let mut now = Duration::ZERO;
        let mut status_down = 0u32;
        let ticks = rng.gen_range(20..200);
        let mut tick = 0;
        loop {
            if tick < ticks {
                if rng.gen_bool(0.15) {
                    let (path, desc) = paths.choose(&mut rng).unwrap();
                    let timer = (rng.gen_range(0.1..12.0f64) * 10.0).round() / 10.0;
                    let program =
                        AutoIRProgram::new(&path.module, &path.node, &path.param, random_value(&mut rng, desc), timer.max(0.1))
                            .map_err(|e| e.to_string())?;
                    let _ = ex.submit(program, now);
                }
                if rng.gen_bool(0.03) && !ex.records().is_empty() {
                    let id = ex.records().choose(&mut rng).unwrap().id;
                    let _ = ex.cancel(id, now);
                }
            } else if ex.is_idle() {
                break;
            }
            if tick > ticks + 2000 {
                return Err(format!("schedule {n}: never settled"));
            }
            if status_down == 0 && rng.gen_bool(0.02) {
                status_down = rng.gen_range(1..20);
            }
            let status = random_status(&mut rng);
            let err = StatusError("status topic silent".into());
            let result = if status_down > 0 {
                status_down -= 1;
                Err(&err)
            } else {
                Ok(&status)
            };
            ex.tick(now, result);

            let mut active = BTreeSet::new();
            for r in ex.records().iter().filter(|r| r.state == InstructionState::Active) {
                if !active.insert(r.program.path()) {
                    return Err(format!("schedule {n}: two active records on {}", r.program.path()));
                }
            }
            now += TICK;
            tick += 1;
        }

        if ex.store().to_json() != fresh {
            return Err(format!("schedule {n}: store {} differs from defaults {fresh}", ex.store().to_json()));
        }
        let activated: BTreeSet<u64> =
            ex.records().iter().filter(|r| r.activated_at.is_some()).map(|r| r.id).collect();
        activations += activated.len();
        expiries += ex.records().iter().filter(|r| r.state == InstructionState::Expired).count();
        for change in ex.store().log() {
            let id = match change.cause {
                Cause::Instruction(id) | Cause::Restore(id) | Cause::Overwrite(id) => id,
                Cause::Manual => return Err(format!("schedule {n}: unexpected manual write")),
            };
            if !activated.contains(&id) {
                return Err(format!("schedule {n}: write by never-activated instruction {id}"));
            }
        }
        for r in ex.records() {
            if let (Some(on), Some(Outcome::Rejected(_)) | None) = (r.activated_at, &r.reason) {
                let off = ex
                    .store()
                    .log()
                    .iter()
                    .find(|c| matches!(c.cause, Cause::Restore(id) | Cause::Overwrite(id) if id == r.id))
                    .map(|c| c.t)
                    .ok_or_else(|| format!("schedule {n}: instruction {} never restored", r.id))?;
                let limit = r.rule.as_ref().map_or(r.program.timer, |rule| rule.effective_timer(r.program.timer));
                if off - on > limit + TICK.as_secs_f64() + 1e-9 {
                    return Err(format!("schedule {n}: instruction {} active {:.2}s > {limit}", r.id, off - on));
                }
            }
        }
    }
    // The property is vacuous unless overrides actually happened.
    if activations < schedules || expiries < schedules {
        return Err(format!("only {activations} activations and {expiries} expiries"));
    }
    Ok(schedules)
}
