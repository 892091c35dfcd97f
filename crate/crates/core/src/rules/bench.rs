use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use super::base::{match_conditions, search_rule, ConditionSet, MotionCondition, Rule, RuleBase};
use super::status::{Perception, VehicleStatus};
use crate::autoir::{AutoIRProgram, ConfigValue, ParamPath};

pub const MIN_ROUNDS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyStats {
    pub rules: usize,
    pub rounds: usize,
    pub hits: usize,
    pub max_ms: f64,
    pub mean_ms: f64,
    pub p99_ms: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("at least {MIN_ROUNDS} rounds are required, got {0}")]
    TooFewRounds(usize),
    #[error("no probe programs given")]
    NoProbes,
}

/// Times `iterations` rounds of search + condition matching against a fixed
/// status, cycling through `probes`. Each round is timed on its own.
pub fn bench_rule_matching(
    rule_base: &RuleBase,
    probes: &[AutoIRProgram],
    status: &VehicleStatus,
    iterations: usize,
) -> Result<LatencyStats, BenchError> {
    if iterations < MIN_ROUNDS {
        return Err(BenchError::TooFewRounds(iterations));
    }
    if probes.is_empty() {
        return Err(BenchError::NoProbes);
    }
    let mut samples = vec![0u64; iterations];
    let mut hits = 0usize;
    for (i, slot) in samples.iter_mut().enumerate() {
        let probe = &probes[i % probes.len()];
        let t0 = Instant::now();
        let matched = search_rule(black_box(rule_base), black_box(probe))
            .map(|rule| match_conditions(rule, black_box(status)));
        let elapsed = t0.elapsed();
        if black_box(matched).is_some() {
            hits += 1;
        }
        *slot = elapsed.as_nanos() as u64;
    }
    samples.sort_unstable();
    let to_ms = |ns: u64| ns as f64 / 1e6;
    let total: u128 = samples.iter().map(|&s| s as u128).sum();
    let p99_idx = ((iterations as f64) * 0.99).ceil() as usize - 1;
    Ok(LatencyStats {
        rules: rule_base.len(),
        rounds: iterations,
        hits,
        max_ms: to_ms(*samples.last().unwrap()),
        mean_ms: total as f64 / iterations as f64 / 1e6,
        p99_ms: to_ms(samples[p99_idx.min(iterations - 1)]),
    })
}

/// A rule base of exactly `n` rules: the first `n` of `base`, padded with
/// synthetic rules under a `bench` module when `base` is smaller.
pub fn scaled_rule_base(base: &RuleBase, n: usize) -> RuleBase {
    let mut rules: Vec<Rule> = base.rules().iter().take(n).cloned().collect();
    let mut i = 0;
    while rules.len() < n {
        rules.push(Rule {
            search_index: ParamPath::new("bench", format!("node_{}", i / 8), format!("param_{}", i % 8)),
            conditions: ConditionSet {
                motion_state: MotionCondition::Driving,
                speed_min: 0.0,
                speed_max: 5.0 + i as f64,
                required: [Perception::ObstacleDetected].into(),
                forbidden: [Perception::PedestrianDetected].into(),
            },
            timer_cap: Some(10.0),
        });
        i += 1;
    }
    RuleBase::new(rules).expect("distinct synthetic paths")
}

/// One hit probe per rule plus one miss per module level.
pub fn probes_for(rule_base: &RuleBase) -> Vec<AutoIRProgram> {
    let mut probes: Vec<AutoIRProgram> = rule_base
        .rules()
        .iter()
        .filter_map(|r| {
            let p = &r.search_index;
            AutoIRProgram::new(&p.module, &p.node, &p.param, ConfigValue::Bool(true), 10.0).ok()
        })
        .collect();
    for (m, n, p) in [
        ("nomodule", "x", "y"),
        ("planning", "nonode", "y"),
        ("planning", "mission_planner", "noparam"),
    ] {
        probes.push(AutoIRProgram::new(m, n, p, ConfigValue::Bool(true), 10.0).unwrap());
    }
    probes
}
