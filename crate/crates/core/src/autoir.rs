//! AutoIR programs: the structured form a user instruction takes once it has
//! been translated, plus its canonical text encoding.
//!
//! The canonical text is one `key: value` pair per line in a fixed order:
//!
//! ```text
//! moduleSelect: perception
//! nodeSelect: traffic_light_classifier_node
//! paramSelect: use_flag
//! configAction: FALSE
//! Timer: 10.0
//! ```
//!
//! Parsing also accepts a JSON object carrying the same keys. Key names are
//! matched case-insensitively; identifiers and values keep their case.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lifetime given to programs whose source omits a `Timer` line.
pub const DEFAULT_TIMER_S: f64 = 10.0;

const KEY_MODULE: &str = "moduleSelect";
const KEY_NODE: &str = "nodeSelect";
const KEY_PARAM: &str = "paramSelect";
const KEY_ACTION: &str = "configAction";
const KEY_TIMER: &str = "Timer";

/// A lowercase identifier matching `[a-z][a-z0-9_]*`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ident(String);

impl Ident {
    pub fn new(s: impl Into<String>) -> Result<Self, String> {
        let s = s.into();
        if is_ident(&s) {
            Ok(Ident(s))
        } else {
            Err(format!("`{s}` is not a valid identifier"))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Ident {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        Ident::new(s)
    }
}

impl From<Ident> for String {
    fn from(id: Ident) -> String {
        id.0
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Ident {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

pub fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Address of one parameter in the driving stack.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamPath {
    pub module: String,
    pub node: String,
    pub param: String,
}

impl ParamPath {
    pub fn new(module: impl Into<String>, node: impl Into<String>, param: impl Into<String>) -> Self {
        ParamPath {
            module: module.into(),
            node: node.into(),
            param: param.into(),
        }
    }

    /// Parses `module/node/param` or `module.node.param`.
    pub fn parse(s: &str) -> Option<Self> {
        let sep = if s.contains('/') { '/' } else { '.' };
        let parts: Vec<&str> = s.trim().split(sep).collect();
        match parts.as_slice() {
            [m, n, p] if !m.is_empty() && !n.is_empty() && !p.is_empty() => {
                Some(ParamPath::new(*m, *n, *p))
            }
            _ => None,
        }
    }
}

impl fmt::Display for ParamPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.module, self.node, self.param)
    }
}

/// A scalar configuration value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Bool(bool),
    Number(f64),
    Token(String),
}

impl ConfigValue {
    /// Interprets raw program text without reference to any registry:
    /// `TRUE`/`FALSE` in any case, then decimal literals, then a token.
    pub fn from_raw(raw: &str) -> ConfigValue {
        let raw = raw.trim();
        if raw.eq_ignore_ascii_case("true") {
            ConfigValue::Bool(true)
        } else if raw.eq_ignore_ascii_case("false") {
            ConfigValue::Bool(false)
        } else if let Some(n) = parse_decimal(raw) {
            ConfigValue::Number(n)
        } else {
            ConfigValue::Token(raw.to_string())
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ConfigValue::Bool(_) => "boolean",
            ConfigValue::Number(_) => "number",
            ConfigValue::Token(_) => "enum",
        }
    }
}

impl fmt::Display for ConfigValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigValue::Bool(true) => f.write_str("TRUE"),
            ConfigValue::Bool(false) => f.write_str("FALSE"),
            ConfigValue::Number(n) => f.write_str(&format_number(*n)),
            ConfigValue::Token(t) => f.write_str(t),
        }
    }
}

/// Shortest round-trip decimal rendering that still reads as a number
/// (`3.0`, `0.25`, `1e21`).
pub fn format_number(n: f64) -> String {
    format!("{n:?}")
}

/// Strict decimal literal: optional sign, digits with optional fraction,
/// optional exponent. Rejects `inf`, `nan`, hex and the like.
pub fn parse_decimal(s: &str) -> Option<f64> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let mut parts = mantissa.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    let digits = |p: &str| p.chars().all(|c| c.is_ascii_digit());
    let mantissa_ok = digits(int)
        && frac.is_none_or(digits)
        && (!int.is_empty() || frac.is_some_and(|f| !f.is_empty()));
    let exponent_ok = exponent.is_none_or(|e| {
        let e = e.strip_prefix(['+', '-']).unwrap_or(e);
        !e.is_empty() && digits(e)
    });
    if !(mantissa_ok && exponent_ok) {
        return None;
    }
    s.parse::<f64>().ok().filter(|n| n.is_finite())
}

/// A translated user instruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoIRProgram {
    pub module_select: Ident,
    pub node_select: Ident,
    pub param_select: Ident,
    pub config_action: ConfigValue,
    /// Lifetime in seconds, strictly positive.
    pub timer: f64,
}

impl AutoIRProgram {
    pub fn new(
        module: &str,
        node: &str,
        param: &str,
        config_action: ConfigValue,
        timer: f64,
    ) -> Result<Self, ParseError> {
        let ident = |field: &'static str, v: &str| {
            Ident::new(v).map_err(|e| ParseError::BadValue { field, message: e })
        };
        check_timer(timer)?;
        Ok(AutoIRProgram {
            module_select: ident(KEY_MODULE, module)?,
            node_select: ident(KEY_NODE, node)?,
            param_select: ident(KEY_PARAM, param)?,
            config_action,
            timer,
        })
    }

    pub fn path(&self) -> ParamPath {
        ParamPath::new(
            self.module_select.as_str(),
            self.node_select.as_str(),
            self.param_select.as_str(),
        )
    }

    pub fn timer_duration(&self) -> Duration {
        Duration::from_secs_f64(self.timer)
    }
}

impl fmt::Display for AutoIRProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_autoir(self))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("bad value for `{field}`: {message}")]
    BadValue { field: &'static str, message: String },
}

fn check_timer(t: f64) -> Result<(), ParseError> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(ParseError::BadValue {
            field: KEY_TIMER,
            message: format!("timer must be a positive number of seconds, got {t}"),
        })
    }
}

fn canonical_key(key: &str) -> Option<&'static str> {
    [KEY_MODULE, KEY_NODE, KEY_PARAM, KEY_ACTION, KEY_TIMER]
        .into_iter()
        .find(|k| k.eq_ignore_ascii_case(key.trim()))
}

#[derive(Default)]
struct Fields {
    module: Option<String>,
    node: Option<String>,
    param: Option<String>,
    action: Option<ConfigValue>,
    timer: Option<f64>,
}

impl Fields {
    fn into_program(self) -> Result<AutoIRProgram, ParseError> {
        let required = |v: Option<String>, key: &'static str| match v {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(ParseError::MissingField(key)),
        };
        let module = required(self.module, KEY_MODULE)?;
        let node = required(self.node, KEY_NODE)?;
        let param = required(self.param, KEY_PARAM)?;
        let action = match self.action {
            Some(ConfigValue::Token(t)) if t.is_empty() => {
                return Err(ParseError::MissingField(KEY_ACTION))
            }
            Some(a) => a,
            None => return Err(ParseError::MissingField(KEY_ACTION)),
        };
        AutoIRProgram::new(
            &module,
            &node,
            &param,
            action,
            self.timer.unwrap_or(DEFAULT_TIMER_S),
        )
    }
}

fn parse_timer_text(raw: &str) -> Result<f64, ParseError> {
    let t = raw.trim();
    let t = t.strip_suffix('s').map(str::trim_end).unwrap_or(t);
    let n = parse_decimal(t).ok_or_else(|| ParseError::BadValue {
        field: KEY_TIMER,
        message: format!("`{raw}` is not a number"),
    })?;
    check_timer(n)?;
    Ok(n)
}

/// Parses an AutoIR document in key/value or JSON-object form.
pub fn parse_autoir(text: &str) -> Result<AutoIRProgram, ParseError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(ParseError::Syntax("empty document".into()));
    }
    if trimmed.starts_with('{') {
        return parse_object(trimmed);
    }

    let mut fields = Fields::default();
    for (lineno, line) in trimmed.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("```") {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| {
            ParseError::Syntax(format!("line {}: expected `key: value`", lineno + 1))
        })?;
        let key = canonical_key(key).ok_or_else(|| {
            ParseError::Syntax(format!("line {}: unknown key `{}`", lineno + 1, key.trim()))
        })?;
        let value = value.trim();
        let dup = || ParseError::Syntax(format!("duplicate key `{key}`"));
        match key {
            KEY_MODULE => set_once(&mut fields.module, value.to_string()).map_err(|_| dup())?,
            KEY_NODE => set_once(&mut fields.node, value.to_string()).map_err(|_| dup())?,
            KEY_PARAM => set_once(&mut fields.param, value.to_string()).map_err(|_| dup())?,
            KEY_ACTION => {
                set_once(&mut fields.action, ConfigValue::from_raw(value)).map_err(|_| dup())?
            }
            _ => set_once(&mut fields.timer, parse_timer_text(value)?).map_err(|_| dup())?,
        }
    }
    fields.into_program()
}

fn set_once<T>(slot: &mut Option<T>, v: T) -> Result<(), ()> {
    if slot.is_some() {
        return Err(());
    }
    *slot = Some(v);
    Ok(())
}

fn parse_object(text: &str) -> Result<AutoIRProgram, ParseError> {
    let map: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| ParseError::Syntax(e.to_string()))?;
    let mut fields = Fields::default();
    for (k, v) in map {
        let key = canonical_key(&k)
            .ok_or_else(|| ParseError::Syntax(format!("unknown key `{k}`")))?;
        let as_string = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => Ok(s.trim().to_string()),
            other => Err(ParseError::BadValue {
                field: key,
                message: format!("expected a string, got {other}"),
            }),
        };
        let dup = || ParseError::Syntax(format!("duplicate key `{key}`"));
        match key {
            KEY_MODULE => set_once(&mut fields.module, as_string(&v)?).map_err(|_| dup())?,
            KEY_NODE => set_once(&mut fields.node, as_string(&v)?).map_err(|_| dup())?,
            KEY_PARAM => set_once(&mut fields.param, as_string(&v)?).map_err(|_| dup())?,
            KEY_ACTION => {
                let value = match &v {
                    serde_json::Value::Bool(b) => ConfigValue::Bool(*b),
                    serde_json::Value::Number(n) => ConfigValue::Number(
                        n.as_f64().ok_or_else(|| ParseError::BadValue {
                            field: KEY_ACTION,
                            message: format!("{n} is not representable"),
                        })?,
                    ),
                    serde_json::Value::String(s) => ConfigValue::from_raw(s),
                    other => {
                        return Err(ParseError::BadValue {
                            field: KEY_ACTION,
                            message: format!("compound values are not supported: {other}"),
                        })
                    }
                };
                set_once(&mut fields.action, value).map_err(|_| dup())?
            }
            _ => {
                let t = match &v {
                    serde_json::Value::Number(n) => {
                        let t = n.as_f64().unwrap_or(f64::NAN);
                        check_timer(t)?;
                        t
                    }
                    serde_json::Value::String(s) => parse_timer_text(s)?,
                    other => {
                        return Err(ParseError::BadValue {
                            field: KEY_TIMER,
                            message: format!("expected seconds, got {other}"),
                        })
                    }
                };
                set_once(&mut fields.timer, t).map_err(|_| dup())?
            }
        }
    }
    fields.into_program()
}

/// Emits the canonical key/value form, newline-terminated.
pub fn serialize_autoir(program: &AutoIRProgram) -> String {
    format!(
        "{KEY_MODULE}: {}\n{KEY_NODE}: {}\n{KEY_PARAM}: {}\n{KEY_ACTION}: {}\n{KEY_TIMER}: {}\n",
        program.module_select,
        program.node_select,
        program.param_select,
        program.config_action,
        format_number(program.timer),
    )
}
