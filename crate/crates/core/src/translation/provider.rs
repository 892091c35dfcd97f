//! Completion providers: a deterministic offline mock and a plain HTTP
//! client for a remote model service.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::normalize_token;
use super::prompt::{first_program_block, trailing_text, INSTRUCTION_MARKER, USER_INPUT_MARKER};
use super::tokenize;
use crate::autoir::{is_ident, parse_decimal};

pub const PROVIDER_URL_ENV: &str = "FLEX_PROVIDER_URL";
pub const PROVIDER_KEY_ENV: &str = "FLEX_PROVIDER_KEY";
pub const PROVIDER_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Relevance,
    Generation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub prompt: String,
    pub mode: Mode,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider not configured: {0}")]
    Config(String),
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("provider timed out")]
    Timeout,
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("provider returned an empty response")]
    EmptyResponse,
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

/// Crude suffix stripping, enough to fold `lanes`/`lane` and
/// `stopping`/`stopp`. Applied to both lexicon and input.
fn lemma(word: &str) -> String {
    let w = normalize_token(word);
    let n = w.chars().count();
    if let Some(stem) = w.strip_suffix("ies").filter(|_| n > 4) {
        format!("{stem}y")
    } else if let Some(stem) = w.strip_suffix("ing").filter(|_| n > 5) {
        stem.to_string()
    } else if let Some(stem) = w.strip_suffix("ed").filter(|_| n > 4) {
        stem.to_string()
    } else if let Some(stem) = w.strip_suffix('s').filter(|_| n > 3 && !w.ends_with("ss")) {
        stem.to_string()
    } else {
        w
    }
}

const SHIPPED_LEXICON: &str = include_str!("../../data/lexicon.txt");

/// Offline provider.
///
/// Relevance: YES when the user input shares a lemma with the driving
/// lexicon. Generation: echoes the first reference program in the prompt;
/// without one, guesses a parameter path mentioned in the reference text and
/// a value from the instruction wording.
#[derive(Clone, Debug)]
pub struct MockProvider {
    lexicon: BTreeSet<String>,
}

impl MockProvider {
    /// Lexicon text: one word per line, `#` starts a comment.
    pub fn new(lexicon: &str) -> Self {
        let lexicon = lexicon
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .flat_map(|w| [normalize_token(w), lemma(w)])
            .collect();
        MockProvider { lexicon }
    }

    pub fn shipped() -> Self {
        Self::new(SHIPPED_LEXICON)
    }

    /// Lexicon words found in `text`, in order of appearance.
    pub fn lexicon_hits(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| self.lexicon.contains(&normalize_token(t)) || self.lexicon.contains(&lemma(t)))
            .map(normalize_token)
            .collect()
    }

    fn relevance(&self, prompt: &str) -> String {
        let hits = self.lexicon_hits(trailing_text(prompt, USER_INPUT_MARKER));
        match hits.first() {
            Some(w) => format!("YES. The input mentions `{w}`, which concerns how the vehicle drives."),
            None => "NO. Nothing in the input concerns driving.".to_string(),
        }
    }

    fn generation(&self, prompt: &str) -> String {
        if let Some(block) = first_program_block(prompt) {
            return block.to_string();
        }
        let instruction = trailing_text(prompt, INSTRUCTION_MARKER);
        let references = prompt.rfind(INSTRUCTION_MARKER).map_or(prompt, |i| &prompt[..i]);
        match guess_path(references, instruction) {
            Some(path) => {
                let mut parts = path.split('/');
                let (m, n, p) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""), parts.next().unwrap_or(""));
                format!(
                    "moduleSelect: {m}\nnodeSelect: {n}\nparamSelect: {p}\nconfigAction: {}\n",
                    guess_value(instruction)
                )
            }
            None => "I could not find a parameter that matches this instruction.".to_string(),
        }
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let text = match request.mode {
            Mode::Relevance => self.relevance(&request.prompt),
            Mode::Generation => self.generation(&request.prompt),
        };
        Ok(ProviderResponse { text })
    }
}

fn as_path(token: &str) -> Option<String> {
    let t = token.trim_matches(|c: char| !(c.is_ascii_alphanumeric() || c == '_'));
    let parts: Vec<&str> = t.split('/').collect();
    (parts.len() == 3 && parts.iter().all(|p| is_ident(p))).then(|| t.to_string())
}

/// The `module/node/param` mention whose sentence shares the most content
/// words with the instruction; earliest mention wins ties.
fn guess_path(references: &str, instruction: &str) -> Option<String> {
    let wanted: BTreeSet<String> =
        tokenize(instruction).into_iter().map(lemma).filter(|w| w.chars().count() >= 4).collect();
    let mut best: Option<(usize, String)> = None;
    let mut sentence: Vec<&str> = Vec::new();
    let mut consider = |sentence: &[&str]| {
        let overlap = sentence.iter().map(|t| lemma(t)).filter(|w| wanted.contains(w)).count();
        for path in sentence.iter().filter_map(|t| as_path(t)) {
            if best.as_ref().is_none_or(|(s, _)| overlap > *s) {
                best = Some((overlap, path));
            }
        }
    };
    for tok in tokenize(references) {
        sentence.push(tok);
        if tok.ends_with(['.', '!', '?']) {
            consider(&sentence);
            sentence.clear();
        }
    }
    consider(&sentence);
    best.map(|(_, p)| p)
}

const NUMBER_WORDS: [&str; 11] =
    ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"];

fn guess_value(instruction: &str) -> String {
    let words: Vec<String> = tokenize(instruction).into_iter().map(normalize_token).collect();
    for w in &words {
        if let Some(n) = parse_decimal(w) {
            return format!("{n:?}");
        }
        if let Some(n) = NUMBER_WORDS.iter().position(|x| x == w) {
            return format!("{:?}", n as f64);
        }
    }
    let has = |xs: &[&str]| words.iter().any(|w| xs.contains(&w.as_str()));
    if has(&["left", "leftmost"]) {
        "LEFT".into()
    } else if has(&["right", "rightmost"]) {
        "RIGHT".into()
    } else if has(&["not", "don't", "ignore", "never", "disable", "off"]) {
        "FALSE".into()
    } else {
        "TRUE".into()
    }
}

/// Remote provider: POSTs `{prompt, mode}` as JSON and reads `{text}`.
pub struct HttpProvider {
    url: String,
    key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct HttpReply {
    text: String,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>, key: Option<String>, timeout: Duration) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(HttpProvider { url: url.into(), key, client })
    }

    /// Endpoint from `FLEX_PROVIDER_URL`, bearer key from `FLEX_PROVIDER_KEY`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let url = std::env::var(PROVIDER_URL_ENV)
            .map_err(|_| ProviderError::Config(format!("{PROVIDER_URL_ENV} is not set")))?;
        Self::new(url, std::env::var(PROVIDER_KEY_ENV).ok(), PROVIDER_TIMEOUT)
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let mut req = self.client.post(&self.url).json(request);
        if let Some(key) = &self.key {
            req = req.bearer_auth(key);
        }
        let transport = |e: reqwest::Error| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        };
        let resp = req.send().map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ProviderError::Status { status: status.as_u16(), body });
        }
        let reply: HttpReply = resp.json().map_err(transport)?;
        if reply.text.trim().is_empty() {
            return Err(ProviderError::EmptyResponse);
        }
        Ok(ProviderResponse { text: reply.text })
    }
}
