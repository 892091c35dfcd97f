//! Relevance gate followed by retrieval-backed generation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::kb::{retrieve, KbIndex, Retrieved};
use super::prompt::{build_generation_prompt, build_relevance_prompt, PromptTemplate};
use super::provider::{Mode, Provider, ProviderError, ProviderRequest};
use crate::autoir::{parse_autoir, AutoIRProgram};
use crate::registry::{validate_program, ParamRegistry, ValidationReport};

/// Knowledge base entries handed to the generator.
pub const RETRIEVE_K: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceVerdict {
    pub relevant: bool,
    pub rationale: String,
}

/// Why one generation attempt was refused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptFailure {
    Parse { message: String },
    Invalid { report: ValidationReport },
}

impl std::fmt::Display for AttemptFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttemptFailure::Parse { message } => write!(f, "not an AutoIR program: {message}"),
            AttemptFailure::Invalid { report } => write!(f, "program does not fit the registry: {report}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum TranslationError {
    #[error("{message}")]
    Provider { message: String },
    #[error("no YES/NO verdict in provider response `{text}`")]
    UnparseableResponse { text: String },
    #[error("translation failed twice: {first}; then {second}")]
    TranslationFailed { first: AttemptFailure, second: AttemptFailure },
}

impl From<ProviderError> for TranslationError {
    fn from(e: ProviderError) -> Self {
        TranslationError::Provider { message: e.to_string() }
    }
}

/// One provider answer during generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub response: String,
    pub failure: Option<AttemptFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub entry_id: String,
    pub score: f64,
}

/// Everything that happened while translating one utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub utterance: String,
    /// Absent when the relevance step itself failed.
    pub verdict: Option<RelevanceVerdict>,
    pub retrieved: Vec<RetrievedRef>,
    pub attempts: Vec<Attempt>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Irrelevant,
    Program { program: AutoIRProgram },
    Failed { error: TranslationError },
}

impl Translation {
    pub fn program(&self) -> Option<&AutoIRProgram> {
        match &self.outcome {
            Outcome::Program { program } => Some(program),
            _ => None,
        }
    }
}

/// Reads the leading YES/NO word of a relevance answer.
pub fn parse_verdict(text: &str) -> Result<RelevanceVerdict, TranslationError> {
    let first = text.split_whitespace().next().unwrap_or("");
    let word = first.trim_matches(|c: char| !c.is_alphanumeric());
    let relevant = if word.eq_ignore_ascii_case("yes") {
        true
    } else if word.eq_ignore_ascii_case("no") {
        false
    } else {
        return Err(TranslationError::UnparseableResponse { text: text.to_string() });
    };
    let rationale = text.trim_start()[first.len()..].trim().to_string();
    Ok(RelevanceVerdict { relevant, rationale })
}

pub fn classify_relevance(
    utterance: &str,
    template: &PromptTemplate,
    provider: &dyn Provider,
) -> Result<RelevanceVerdict, TranslationError> {
    let prompt = build_relevance_prompt(template, utterance);
    let resp = provider.complete(&ProviderRequest { prompt, mode: Mode::Relevance })?;
    parse_verdict(&resp.text)
}

fn check_answer(text: &str, registry: &ParamRegistry) -> Result<AutoIRProgram, AttemptFailure> {
    let program = parse_autoir(text).map_err(|e| AttemptFailure::Parse { message: e.to_string() })?;
    let report = validate_program(&program, registry);
    if report.ok {
        Ok(program)
    } else {
        Err(AttemptFailure::Invalid { report })
    }
}

/// Generation with one retry; `attempts` receives each provider answer.
fn generate_traced(
    instruction: &str,
    retrieved: &[Retrieved<'_>],
    template: &PromptTemplate,
    provider: &dyn Provider,
    registry: &ParamRegistry,
    attempts: &mut Vec<Attempt>,
) -> Result<AutoIRProgram, TranslationError> {
    let mut first: Option<AttemptFailure> = None;
    loop {
        let feedback = first.as_ref().map(|f| f.to_string());
        let prompt = build_generation_prompt(template, retrieved, instruction, feedback.as_deref());
        let resp = provider.complete(&ProviderRequest { prompt, mode: Mode::Generation })?;
        let checked = check_answer(&resp.text, registry);
        attempts.push(Attempt { response: resp.text, failure: checked.as_ref().err().cloned() });
        match (checked, first.take()) {
            (Ok(p), _) => return Ok(p),
            (Err(f), None) => first = Some(f),
            (Err(second), Some(first)) => return Err(TranslationError::TranslationFailed { first, second }),
        }
    }
}

/// Retrieves the top entries, asks the provider for a program and validates
/// it, retrying once with the refusal reason.
pub fn generate_autoir(
    instruction: &str,
    index: &KbIndex,
    template: &PromptTemplate,
    provider: &dyn Provider,
    registry: &ParamRegistry,
) -> Result<AutoIRProgram, TranslationError> {
    let retrieved = retrieve(index, instruction, RETRIEVE_K);
    generate_traced(instruction, &retrieved, template, provider, registry, &mut Vec::new())
}

/// A ready-to-use translation pipeline. Immutable, so it can be shared
/// across threads.
#[derive(Clone)]
pub struct Translator {
    pub index: Arc<KbIndex>,
    pub relevance_template: PromptTemplate,
    pub generation_template: PromptTemplate,
    pub provider: Arc<dyn Provider>,
    pub registry: Arc<ParamRegistry>,
}

impl Translator {
    pub fn new(index: KbIndex, provider: Arc<dyn Provider>, registry: ParamRegistry) -> Self {
        Translator {
            index: Arc::new(index),
            relevance_template: PromptTemplate::cot_relevance(),
            generation_template: PromptTemplate::generation(),
            provider,
            registry: Arc::new(registry),
        }
    }

    pub fn translate(&self, utterance: &str) -> Translation {
        let mut t = Translation {
            utterance: utterance.to_string(),
            verdict: None,
            retrieved: Vec::new(),
            attempts: Vec::new(),
            outcome: Outcome::Irrelevant,
        };
        match classify_relevance(utterance, &self.relevance_template, self.provider.as_ref()) {
            Ok(v) => {
                let relevant = v.relevant;
                t.verdict = Some(v);
                if !relevant {
                    return t;
                }
            }
            Err(error) => {
                t.outcome = Outcome::Failed { error };
                return t;
            }
        }
        let retrieved = retrieve(&self.index, utterance, RETRIEVE_K);
        t.retrieved =
            retrieved.iter().map(|r| RetrievedRef { entry_id: r.entry.entry_id.clone(), score: r.score }).collect();
        t.outcome = match generate_traced(
            utterance,
            &retrieved,
            &self.generation_template,
            self.provider.as_ref(),
            &self.registry,
            &mut t.attempts,
        ) {
            Ok(program) => Outcome::Program { program },
            Err(error) => Outcome::Failed { error },
        };
        t
    }
}
