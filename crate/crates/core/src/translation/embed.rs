//! Hashed term-frequency embeddings.

use std::hash::Hasher;

use fnv::FnvHasher;

use super::tokenize;

pub const EMBED_DIM: usize = 256;

/// Fixed FNV-1a key. Changing it reshuffles every bucket, so the shipped
/// similarity scores depend on it.
const HASH_SEED: u64 = 0xcbf2_9ce4_8422_23ff;

pub type Embedding = [f64; EMBED_DIM];

/// Lowercases and trims surrounding punctuation, so `light.` and `Light`
/// count as the same term. A token that is all punctuation is kept as is.
pub fn normalize_token(token: &str) -> String {
    let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() { token } else { trimmed }.to_lowercase()
}

fn bucket(term: &str) -> usize {
    let mut h = FnvHasher::with_key(HASH_SEED);
    h.write(term.as_bytes());
    (h.finish() % EMBED_DIM as u64) as usize
}

/// Unit-length term-frequency vector; all zeros for text without tokens.
pub fn embed_text(text: &str) -> Embedding {
    let mut v = [0.0; EMBED_DIM];
    for tok in tokenize(text) {
        v[bucket(&normalize_token(tok))] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Dot product, which is the cosine for unit vectors. Zero when either side
/// is the zero vector.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0)
}
