//! Error type shared across the crate.
//!
//! Variants are grouped by the stage that raises them. The CLI maps these onto
//! process exit codes, so the grouping is part of the public contract:
//! configuration problems exit 1, data problems exit 2, fatal endpoint
//! problems exit 3.

use std::path::PathBuf;
use std::time::Duration;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // Configuration and usage.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown relation {0:?}; not in the relation registry")]
    UnknownRelation(String),
    #[error("template slot {{{0}}} was not filled")]
    MissingSlot(String),
    #[error("invalid template for relation {relation:?}: {reason}")]
    InvalidTemplate { relation: String, reason: String },
    #[error("label set is ambiguous: {0:?} is a case-insensitive prefix of {1:?}")]
    AmbiguousLabels(String, String),

    // Data.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no valid records")]
    EmptyDataset { path: PathBuf },
    #[error("sample size {requested} exceeds population {population}")]
    SampleTooLarge { requested: usize, population: usize },
    #[error("question has no trailing year reference: {0:?}")]
    MissingYearRef(String),
    #[error("question has no time reference to absolutize: {0:?}")]
    MissingRelativeRef(String),
    #[error("year {year} is not in the past relative to {now_year}")]
    YearNotPast { year: i32, now_year: i32 },
    #[error("shifting {year} by {k} leaves the supported year range in both directions")]
    ShiftOutOfRange { year: i32, k: u32 },
    #[error("{k} years before {now_year} falls outside the supported year range")]
    RelativeOutOfRange { k: i64, now_year: i32 },
    #[error("year {year} outside the fact span {start}..={end}")]
    YearOutsideSpan { year: i32, start: i32, end: i32 },
    #[error("gold date is missing parts required at {0} granularity")]
    GoldMissingParts(&'static str),
    #[error("item {item} carries no stored original year")]
    MissingStoredYear { item: String },
    #[error("consistency vector is missing the {0} component")]
    MissingComponent(&'static str),
    #[error("trust fit needs both correct and incorrect examples")]
    SingleClassInput,
    #[error("judge verdict is neither yes nor no: {0:?}")]
    UnparseableVerdict(String),
    #[error("no test specs given")]
    EmptySuite,

    // Endpoint.
    #[error("endpoint rejected credentials (status {status})")]
    AuthFailure { status: u16 },
    #[error("endpoint failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("endpoint request failed: {0}")]
    Transport(String),
    #[error("endpoint response missing choices[0].message.content: {0}")]
    MalformedResponse(String),
    #[error("endpoint timed out after {0:?}")]
    Timeout(Duration),
}

impl Error {
    /// Process exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) | UnknownRelation(_) | MissingSlot(_) | InvalidTemplate { .. }
            | AmbiguousLabels(..) | EmptySuite => 1,
            AuthFailure { .. } | Exhausted { .. } | Transport(_) | MalformedResponse(_)
            | Timeout(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
