use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sentence view is empty: summary has no participants or attributes")]
    EmptyView,
    #[error("input text is empty")]
    EmptyInput,

    #[error("prompt template error: {0}")]
    Template(String),
    #[error("no JSON object found in model response")]
    Parse,
    #[error("summary failed validation: {0}")]
    SummaryQuality(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("missing API key: environment variable {0} is not set")]
    MissingApiKey(String),

    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown document id {0}")]
    UnknownDoc(String),
    #[error("rankings belong to different queries ({0} vs {1})")]
    QueryMismatch(String, String),

    #[error("non-finite value in {0}")]
    Numerical(String),
    #[error("claim {claim} has only {available} usable negatives, need {needed}")]
    InsufficientNegatives {
        claim: String,
        available: usize,
        needed: usize,
    },

    #[error("missing event summary for {0}")]
    MissingSummary(String),
    #[error("recall depth p={p} out of range 1..={n}")]
    InvalidP { p: usize, n: usize },
    #[error("rerank depth q={q} exceeds {available} candidates")]
    InvalidQ { q: usize, available: usize },
    #[error("stage plan requires q < p <= n (q={q}, p={p}, n={n})")]
    InvalidStagePlan { q: usize, p: usize, n: usize },

    #[error("{file}:{line}: {msg}")]
    Ingest {
        file: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("run file line {line}: {msg}")]
    RunParse { line: usize, msg: String },
    #[error("run and qrels share no claims")]
    NoOverlap,

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid artifact: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
