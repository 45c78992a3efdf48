//! Document parsing as three stages: structure detection finds layout blocks,
//! recognition transcribes each block independently, and a relation model
//! orders the blocks. Around that pipeline sit a synthetic ground-truth
//! corpus, evaluation metrics and a layer-pruning harness for the relation
//! transformer.

pub mod corpus;
pub mod cpd;
pub mod document;
pub mod error;
pub mod eval;
pub mod html;
pub mod pipeline;
pub mod recognition;
pub mod relation;
pub mod structure;

pub use error::{Error, Result};

/// FNV-1a over length-prefixed parts. Stable across builds and platforms,
/// used to derive per-page and per-block seeds.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for part in parts {
        for &b in (part.len() as u64).to_le_bytes().iter().chain(part.iter()) {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}
