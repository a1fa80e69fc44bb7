//! Temporal robustness testing for question-answering language models.
//!
//! A QA model that answers "Bernardo Corradi played for which team in 2006?"
//! correctly may still fail the same question phrased as "... 17 years ago?",
//! with the year removed, with the year moved to the front, or asked in the
//! inverse direction ("When did ... play for ...?"). This crate measures those
//! failure modes. It provides:
//!
//! * question transformations over a small trailing-year grammar ([`transform`]),
//! * corpus loading, filtering and sampling for the four record kinds ([`corpus`]),
//! * an async chat-completions client with retries, caching and a deterministic
//!   mock endpoint for hermetic runs ([`gateway`]),
//! * answer metrics, including granularity-aware date matching ([`metrics`]),
//! * the eight-test robustness suite and its report writers ([`suite`], [`report`]),
//! * consistency probing and a trained trust model over probe agreement ([`trust`]),
//! * guided reformulation of time-referencing questions ([`reformulate`]).
//!
//! Everything downstream of the endpoint is deterministic: all randomness flows
//! from a single seed, reports use sorted keys, and a warm response cache makes
//! reruns byte-identical.

pub mod corpus;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod reformulate;
pub mod report;
pub mod suite;
pub mod transform;
pub mod trust;

pub use error::{Error, Result};

/// Inclusive range of 4-digit tokens treated as calendar years throughout.
pub const YEAR_MIN: i32 = 1000;
/// See [`YEAR_MIN`].
pub const YEAR_MAX: i32 = 2100;

/// Stable 64-bit string hash (FNV-1a) used to derive per-item RNG streams.
///
/// `std::hash::DefaultHasher` is not guaranteed stable across releases, and
/// seeds derived from it would silently change results on a toolchain bump.
pub(crate) fn stable_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes the run seed with a per-item hash into one RNG seed.
pub(crate) fn mix_seed(seed: u64, key: &str) -> u64 {
    seed ^ stable_hash(key).rotate_left(17)
}
