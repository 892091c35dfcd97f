//! Golden-set evaluation: per-field translation accuracy and relevance
//! accuracy.
//!
//! Golden file: JSON Lines of
//! `{"utterance": "...", "relevant": true, "expected_program": "<canonical AutoIR>"}`.
//! `expected_program` is required when `relevant` is true and ignored otherwise.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pipeline::Translator;
use crate::autoir::{parse_autoir, AutoIRProgram};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenItem {
    pub utterance: String,
    pub relevant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_program: Option<String>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("bad dataset, line {line}: {message}")]
    BadDataset { line: usize, message: String },
    #[error("bad dataset: no items")]
    Empty,
}

/// Parses and checks a golden file's text.
pub fn parse_golden(text: &str) -> Result<Vec<(GoldenItem, Option<AutoIRProgram>)>, EvalError> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::BadDataset { line: i + 1, message };
        let item: GoldenItem = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if item.utterance.trim().is_empty() {
            return Err(bad("empty utterance".into()));
        }
        let expected = match (&item.expected_program, item.relevant) {
            (Some(p), true) => Some(parse_autoir(p).map_err(|e| bad(e.to_string()))?),
            (None, true) => return Err(bad("relevant item without expected_program".into())),
            (_, false) => None,
        };
        items.push((item, expected));
    }
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(items)
}

pub fn load_golden(path: &Path) -> Result<Vec<(GoldenItem, Option<AutoIRProgram>)>, EvalError> {
    let text =
        fs::read_to_string(path).map_err(|e| EvalError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_golden(&text)
}

/// Accuracies are percentages. Field columns count relevant items only; an
/// item judged irrelevant or left untranslated misses every field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub size: usize,
    pub relevant_items: usize,
    pub irrelevant_items: usize,
    pub module_select: f64,
    pub node_select: f64,
    pub param_select: f64,
    pub config_action: f64,
    pub overall: f64,
    /// Correct verdicts over all items.
    pub relevance: f64,
    /// Utterances that missed at least one field or got the wrong verdict.
    pub misses: Vec<String>,
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        100.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

pub fn evaluate(items: &[(GoldenItem, Option<AutoIRProgram>)], translator: &Translator) -> EvalReport {
    let mut fields = [0usize; 4];
    let (mut overall, mut verdicts, mut relevant) = (0, 0, 0);
    let mut misses = Vec::new();
    for (item, expected) in items {
        let t = translator.translate(&item.utterance);
        let said_relevant = t.verdict.as_ref().map(|v| v.relevant);
        let verdict_ok = said_relevant == Some(item.relevant);
        verdicts += verdict_ok as usize;
        let mut all = verdict_ok;
        if let Some(want) = expected {
            relevant += 1;
            let hits = match t.program() {
                Some(got) => [
                    got.module_select == want.module_select,
                    got.node_select == want.node_select,
                    got.param_select == want.param_select,
                    got.config_action == want.config_action,
                ],
                None => [false; 4],
            };
            for (f, h) in fields.iter_mut().zip(hits) {
                *f += h as usize;
            }
            let ok = hits.iter().all(|&h| h);
            overall += ok as usize;
            all &= ok;
        }
        if !all {
            misses.push(item.utterance.clone());
        }
    }
    EvalReport {
        size: items.len(),
        relevant_items: relevant,
        irrelevant_items: items.len() - relevant,
        module_select: pct(fields[0], relevant),
        node_select: pct(fields[1], relevant),
        param_select: pct(fields[2], relevant),
        config_action: pct(fields[3], relevant),
        overall: pct(overall, relevant),
        relevance: pct(verdicts, items.len()),
        misses,
    }
}
