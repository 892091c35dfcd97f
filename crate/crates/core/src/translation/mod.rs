//! Natural-language instruction translation: relevance gating, a small
//! retrieval index over the knowledge base, and provider-backed AutoIR
//! generation.

pub mod embed;
pub mod eval;
pub mod kb;
pub mod pipeline;
pub mod prompt;
pub mod provider;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use embed::{cosine, embed_text, Embedding, EMBED_DIM};
pub use eval::{evaluate, load_golden, parse_golden, EvalError, EvalReport, GoldenItem};
pub use kb::{build_index, retrieve, KbError, KbIndex, KnowledgeEntry, Retrieved};
pub use pipeline::{
    classify_relevance, generate_autoir, parse_verdict, Attempt, AttemptFailure, Outcome, RelevanceVerdict,
    RetrievedRef, Translation, TranslationError, Translator, RETRIEVE_K,
};
pub use prompt::{build_generation_prompt, build_relevance_prompt, PromptTemplate, QaExample};
pub use provider::{HttpProvider, MockProvider, Mode, Provider, ProviderError, ProviderRequest, ProviderResponse};

/// Chunk size used when ingesting unstructured documents.
pub const CHUNK_TOKENS: usize = 700;

/// Directory holding the shipped translation data (knowledge base, golden
/// set, lexicon, manual).
pub fn data_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/data"))
}

/// Whitespace tokens. Punctuation stays on its word.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub source_id: String,
    pub ordinal: usize,
    pub text: String,
    pub token_count: usize,
}

/// Greedy packing of the source tokens into chunks of at most `max_tokens`.
/// Chunk text is its tokens joined by single spaces.
///
/// Panics if `max_tokens` is zero.
pub fn chunk_document(source_id: &str, text: &str, max_tokens: usize) -> Vec<Chunk> {
    assert!(max_tokens >= 1, "max_tokens must be at least 1");
    tokenize(text)
        .chunks(max_tokens)
        .enumerate()
        .map(|(ordinal, toks)| Chunk {
            source_id: source_id.to_string(),
            ordinal,
            text: toks.join(" "),
            token_count: toks.len(),
        })
        .collect()
}
