//! Catalog of the driving stack's tunable parameters and the checks that
//! keep translated programs inside it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoir::{parse_decimal, AutoIRProgram, ConfigValue, ParamPath};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ValueSpec {
    Boolean,
    Number {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    Enum {
        tokens: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    #[serde(flatten)]
    pub spec: ValueSpec,
    pub default: ConfigValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl ParamDescriptor {
    pub fn type_name(&self) -> &'static str {
        match self.spec {
            ValueSpec::Boolean => "boolean",
            ValueSpec::Number { .. } => "number",
            ValueSpec::Enum { .. } => "enum",
        }
    }

    /// Checks type and range. The error carries the failing issue code.
    pub fn check(&self, value: &ConfigValue) -> Result<(), (IssueCode, String)> {
        match (&self.spec, value) {
            (ValueSpec::Boolean, ConfigValue::Bool(_)) => Ok(()),
            (ValueSpec::Number { min, max, unit }, ConfigValue::Number(n)) => {
                let unit = unit.as_deref().unwrap_or("");
                if !n.is_finite() {
                    return Err((IssueCode::OutOfRange, format!("{n} is not finite")));
                }
                if let Some(lo) = min.filter(|lo| n < lo) {
                    return Err((IssueCode::OutOfRange, format!("{n}{unit} is below the minimum {lo}{unit}")));
                }
                if let Some(hi) = max.filter(|hi| n > hi) {
                    return Err((IssueCode::OutOfRange, format!("{n}{unit} is above the maximum {hi}{unit}")));
                }
                Ok(())
            }
            (ValueSpec::Enum { tokens }, ConfigValue::Token(t)) => {
                if tokens.iter().any(|k| k == t) {
                    Ok(())
                } else {
                    Err((
                        IssueCode::OutOfRange,
                        format!("`{t}` is not one of {}", tokens.join(", ")),
                    ))
                }
            }
            (_, v) => Err((
                IssueCode::TypeMismatch,
                format!("expected {}, got {} `{v}`", self.type_name(), v.kind()),
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry document is malformed: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: default value is invalid: {message}")]
    BadDefault { path: ParamPath, message: String },
    #[error("`{0}` is not a valid identifier")]
    BadName(String),
}

/// module → node → param → descriptor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamRegistry {
    pub modules: BTreeMap<String, BTreeMap<String, BTreeMap<String, ParamDescriptor>>>,
}

impl ParamRegistry {
    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let reg: ParamRegistry = serde_json::from_str(text)?;
        reg.check()?;
        Ok(reg)
    }

    /// The registry shipped with the stack: the five parameters the bundled
    /// scenarios exercise.
    pub fn shipped() -> Self {
        Self::from_json(include_str!("../data/registry.json")).expect("shipped registry is valid")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    fn check(&self) -> Result<(), RegistryError> {
        for (path, desc) in self.iter() {
            for name in [&path.module, &path.node, &path.param] {
                if !crate::autoir::is_ident(name) {
                    return Err(RegistryError::BadName(name.clone()));
                }
            }
            desc.check(&desc.default)
                .map_err(|(_, message)| RegistryError::BadDefault { path: path.clone(), message })?;
        }
        Ok(())
    }

    pub fn insert(&mut self, path: &ParamPath, desc: ParamDescriptor) -> Result<(), RegistryError> {
        desc.check(&desc.default).map_err(|(_, message)| RegistryError::BadDefault {
            path: path.clone(),
            message,
        })?;
        self.modules
            .entry(path.module.clone())
            .or_default()
            .entry(path.node.clone())
            .or_default()
            .insert(path.param.clone(), desc);
        Ok(())
    }

    pub fn get(&self, path: &ParamPath) -> Option<&ParamDescriptor> {
        self.modules.get(&path.module)?.get(&path.node)?.get(&path.param)
    }

    /// All descriptors in path order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamPath, &ParamDescriptor)> {
        self.modules.iter().flat_map(|(m, nodes)| {
            nodes.iter().flat_map(move |(n, params)| {
                params
                    .iter()
                    .map(move |(p, d)| (ParamPath::new(m.as_str(), n.as_str(), p.as_str()), d))
            })
        })
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IssueCode {
    UnknownModule,
    UnknownNode,
    UnknownParam,
    TypeMismatch,
    OutOfRange,
    BadTimer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub path: String,
    pub code: IssueCode,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn from_issues(issues: Vec<Issue>) -> Self {
        ValidationReport { ok: issues.is_empty(), issues }
    }

    pub fn codes(&self) -> Vec<IssueCode> {
        self.issues.iter().map(|i| i.code).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("ok");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{:?} at {}: {}", issue.code, issue.path, issue.message)?;
        }
        Ok(())
    }
}

/// Checks a program against the registry, collecting every violation.
pub fn validate_program(program: &AutoIRProgram, registry: &ParamRegistry) -> ValidationReport {
    let mut issues = Vec::new();
    let path = program.path();

    if !(program.timer.is_finite() && program.timer > 0.0) {
        issues.push(Issue {
            path: path.to_string(),
            code: IssueCode::BadTimer,
            message: format!("timer must be positive, got {}", program.timer),
        });
    }

    let Some(nodes) = registry.modules.get(&path.module) else {
        issues.push(Issue {
            path: path.module.clone(),
            code: IssueCode::UnknownModule,
            message: format!("no module named `{}`", path.module),
        });
        return ValidationReport::from_issues(issues);
    };
    let Some(params) = nodes.get(&path.node) else {
        issues.push(Issue {
            path: format!("{}/{}", path.module, path.node),
            code: IssueCode::UnknownNode,
            message: format!("module `{}` has no node `{}`", path.module, path.node),
        });
        return ValidationReport::from_issues(issues);
    };
    let Some(desc) = params.get(&path.param) else {
        issues.push(Issue {
            path: path.to_string(),
            code: IssueCode::UnknownParam,
            message: format!("node `{}` has no parameter `{}`", path.node, path.param),
        });
        return ValidationReport::from_issues(issues);
    };
    if let Err((code, message)) = desc.check(&program.config_action) {
        issues.push(Issue { path: path.to_string(), code, message });
    }
    ValidationReport::from_issues(issues)
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cannot read `{raw}` as {expected}")]
pub struct TypeMismatch {
    pub raw: String,
    pub expected: &'static str,
}

/// Reads raw configuration text as the type the descriptor declares.
/// Enum tokens match exactly first, then case-insensitively (yielding the
/// registry's spelling).
pub fn coerce_config_value(raw: &str, desc: &ParamDescriptor) -> Result<ConfigValue, TypeMismatch> {
    let raw = raw.trim();
    let mismatch = || TypeMismatch { raw: raw.to_string(), expected: desc.type_name() };
    match &desc.spec {
        ValueSpec::Boolean => {
            if raw.eq_ignore_ascii_case("true") {
                Ok(ConfigValue::Bool(true))
            } else if raw.eq_ignore_ascii_case("false") {
                Ok(ConfigValue::Bool(false))
            } else {
                Err(mismatch())
            }
        }
        ValueSpec::Number { .. } => parse_decimal(raw).map(ConfigValue::Number).ok_or_else(mismatch),
        ValueSpec::Enum { tokens } => tokens
            .iter()
            .find(|t| t.as_str() == raw)
            .or_else(|| tokens.iter().find(|t| t.eq_ignore_ascii_case(raw)))
            .map(|t| ConfigValue::Token(t.clone()))
            .ok_or_else(mismatch),
    }
}
