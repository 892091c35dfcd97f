//! Knowledge base files and the exact cosine index over them.
//!
//! A `.kb` file holds one entry. The entry id is the file stem.
//!
//! ```text
//! scenario:
//! The traffic light is broken and the user wants the vehicle to ignore it.
//! autoir:
//! moduleSelect: perception
//! nodeSelect: traffic_light_classifier_node
//! paramSelect: use_flag
//! configAction: FALSE
//! Timer: 10.0
//! ```

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::{cosine, embed_text, Embedding};
use super::{chunk_document, CHUNK_TOKENS};
use crate::autoir::{parse_autoir, AutoIRProgram};
use crate::registry::{validate_program, ParamRegistry, ValidationReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub entry_id: String,
    pub scenario_text: String,
    /// Absent for entries cut from unstructured documents.
    pub program: Option<AutoIRProgram>,
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{entry}: {message}")]
    Syntax { entry: String, message: String },
    #[error("{entry}: program is not valid for the registry: {report}")]
    Invalid { entry: String, report: ValidationReport },
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
}

/// Parses the text of one `.kb` file.
pub fn parse_entry(entry_id: &str, text: &str) -> Result<KnowledgeEntry, KbError> {
    let syntax = |message: &str| KbError::Syntax { entry: entry_id.to_string(), message: message.to_string() };
    let mut section = None;
    let (mut scenario, mut autoir) = (Vec::new(), Vec::new());
    for line in text.lines() {
        match line.trim() {
            "scenario:" => section = Some(0),
            "autoir:" => section = Some(1),
            _ => match section {
                Some(0) => scenario.push(line.trim()),
                Some(_) => autoir.push(line),
                None if line.trim().is_empty() || line.trim_start().starts_with('#') => {}
                None => return Err(syntax("text before the `scenario:` section")),
            },
        }
    }
    let scenario_text = scenario.iter().filter(|l| !l.is_empty()).copied().collect::<Vec<_>>().join(" ");
    if scenario_text.is_empty() {
        return Err(syntax("missing or empty `scenario:` section"));
    }
    if autoir.iter().all(|l| l.trim().is_empty()) {
        return Err(syntax("missing or empty `autoir:` section"));
    }
    let program = parse_autoir(&autoir.join("\n")).map_err(|e| syntax(&e.to_string()))?;
    Ok(KnowledgeEntry { entry_id: entry_id.to_string(), scenario_text, program: Some(program) })
}

/// Reads every `.kb` file in `dir`, ordered by file name, and checks each
/// program against the registry.
pub fn load_kb_dir(dir: &Path, registry: &ParamRegistry) -> Result<Vec<KnowledgeEntry>, KbError> {
    let io = |e: std::io::Error| KbError::Io { path: dir.display().to_string(), message: e.to_string() };
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "kb"))
        .collect();
    paths.sort();
    let mut entries = Vec::with_capacity(paths.len());
    for path in paths {
        let text = fs::read_to_string(&path)
            .map_err(|e| KbError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let entry = parse_entry(id, &text)?;
        if let Some(program) = &entry.program {
            let report = validate_program(program, registry);
            if !report.ok {
                return Err(KbError::Invalid { entry: entry.entry_id, report });
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Entries cut from one unstructured document: one per 700-token chunk,
/// with no paired programs.
pub fn entries_from_document(source_id: &str, text: &str) -> Vec<KnowledgeEntry> {
    chunk_document(source_id, text, CHUNK_TOKENS)
        .into_iter()
        .map(|c| KnowledgeEntry {
            entry_id: format!("{}#{}", c.source_id, c.ordinal),
            scenario_text: c.text,
            program: None,
        })
        .collect()
}

/// The curated knowledge base under `data/kb`.
pub fn shipped_entries(registry: &ParamRegistry) -> Result<Vec<KnowledgeEntry>, KbError> {
    load_kb_dir(&super::data_dir().join("kb"), registry)
}

/// The unstructured manual under `data/manual.md`, chunked.
pub fn manual_entries() -> Result<Vec<KnowledgeEntry>, KbError> {
    let path = super::data_dir().join("manual.md");
    let text = fs::read_to_string(&path)
        .map_err(|e| KbError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(entries_from_document("manual", &text))
}

/// Exact search over entry embeddings. Immutable once built.
#[derive(Clone, Debug, Default)]
pub struct KbIndex {
    entries: Vec<(KnowledgeEntry, Embedding)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Retrieved<'a> {
    pub entry: &'a KnowledgeEntry,
    pub score: f64,
}

pub fn build_index(entries: Vec<KnowledgeEntry>) -> Result<KbIndex, KbError> {
    let mut seen = BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.entry_id.as_str()) {
            return Err(KbError::DuplicateId(e.entry_id.clone()));
        }
    }
    Ok(KbIndex {
        entries: entries
            .into_iter()
            .map(|e| {
                let v = embed_text(&e.scenario_text);
                (e, v)
            })
            .collect(),
    })
}

impl KbIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.entries.iter().map(|(e, _)| e)
    }
}

/// Top `k` entries by cosine similarity to the query, best first, ties
/// broken by ascending entry id.
///
/// Panics if `k` is zero.
pub fn retrieve<'a>(index: &'a KbIndex, query: &str, k: usize) -> Vec<Retrieved<'a>> {
    assert!(k >= 1, "k must be at least 1");
    let q = embed_text(query);
    let mut hits: Vec<Retrieved<'a>> =
        index.entries.iter().map(|(entry, v)| Retrieved { entry, score: cosine(&q, v) }).collect();
    hits.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.entry.entry_id.cmp(&b.entry.entry_id),
        o => o,
    });
    hits.truncate(k);
    hits
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = "# comment\nscenario:\nThe light is broken.\nIgnore it.\nautoir:\nmoduleSelect: perception\nnodeSelect: traffic_light_classifier_node\nparamSelect: use_flag\nconfigAction: FALSE\n";

    fn entry(id: &str, text: &str) -> KnowledgeEntry {
        KnowledgeEntry { entry_id: id.into(), scenario_text: text.into(), program: None }
    }

    #[test]
    fn parses_sections() {
        let e = parse_entry("tl", DOC).unwrap();
        assert_eq!(e.scenario_text, "The light is broken. Ignore it.");
        assert_eq!(e.program.unwrap().param_select.as_str(), "use_flag");
    }

    #[test]
    fn rejects_missing_sections() {
        assert!(matches!(parse_entry("x", "autoir:\nmoduleSelect: a\n"), Err(KbError::Syntax { .. })));
        assert!(matches!(parse_entry("x", "scenario:\nsomething\n"), Err(KbError::Syntax { .. })));
        assert!(matches!(parse_entry("x", "stray\nscenario:\na\nautoir:\nb\n"), Err(KbError::Syntax { .. })));
    }

    #[test]
    fn duplicate_ids_are_refused() {
        let r = build_index(vec![entry("a", "x"), entry("a", "y")]);
        assert!(matches!(r, Err(KbError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn empty_index_retrieves_nothing() {
        let idx = build_index(Vec::new()).unwrap();
        assert!(retrieve(&idx, "anything", 3).is_empty());
    }

    #[test]
    fn ties_break_by_id() {
        let idx = build_index(vec![entry("b", "same words"), entry("a", "same words"), entry("c", "other")]).unwrap();
        let ids: Vec<_> = retrieve(&idx, "same words", 3).iter().map(|r| r.entry.entry_id.clone()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }
}
