//! Agent-based A/B testing harness: persona-conditioned agents interact with
//! web environments (live browser or deterministic mock storefront), producing
//! session traces and a statistical comparison report between design variants.

pub mod agent;
pub mod allocation;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod env;
pub mod extract;
pub mod mockshop;
pub mod model;
pub mod orchestrator;
pub mod persona;
pub mod stats;
pub mod trace;
pub mod webdriver;

/// Stable 64-bit seed derivation: first 8 bytes of SHA-256 over the parts.
/// Used wherever per-entity seeds must be independent of scheduling order.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
