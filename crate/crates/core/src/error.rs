use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the linkage library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("column `{0}` is not present in the header")]
    MissingColumn(String),
    #[error("column `{0}` appears more than once in the header")]
    DuplicateColumn(String),
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("record has {found} fields but the schema expects {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("invalid comparison schema: {0}")]
    InvalidSchema(String),
    #[error("field {field}: level {level} outside 1..={levels}")]
    LevelOutOfRange {
        field: usize,
        level: usize,
        levels: usize,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("traditional blocking requested but file {0} has no blocking key column")]
    NoBlockingKey(char),
    #[error("thresholds must satisfy lambda >= mu (lambda = {lambda}, mu = {mu})")]
    ThresholdOrder { lambda: f64, mu: f64 },
    #[error("record pair ({a}, {b}) is outside a {n_a} x {n_b} problem")]
    UnknownRecord {
        a: usize,
        b: usize,
        n_a: usize,
        n_b: usize,
    },
    #[error("matching is not one-to-one: record {side}{index} is linked twice")]
    NotOneToOne { side: char, index: usize },
    #[error("malformed artifact: {0}")]
    Artifact(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
