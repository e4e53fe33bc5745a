use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("range error: value {value} does not fit in {width} bits")]
    Range { width: u32, value: i128 },

    #[error("width error: {0}")]
    Width(String),

    #[error("assignment-type error: {0}")]
    Type(String),

    #[error("storage error: {0}")]
    Storage(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("single-driver error: {0}")]
    SingleDriver(String),

    #[error("elaboration error: {0}")]
    Elaboration(String),

    #[error("naming error: {0}")]
    Naming(String),

    #[error("pipeline-shape error: {0}")]
    PipelineShape(String),

    #[error("connection error: {0}")]
    Connection(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("truthiness error: {0}")]
    Truthiness(String),

    #[error("conversion error: {0}")]
    Conversion(String),

    #[error("conversion-grammar error: {0}")]
    Grammar(String),

    #[error("no-progress error: unsatisfied templates: {}", .0.join(", "))]
    NoProgress(Vec<String>),

    #[error("oscillation error after {deltas} deltas at tick {tick}: cycling nodes {}", .nodes.join(", "))]
    Oscillation {
        tick: u64,
        deltas: usize,
        nodes: Vec<String>,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("setup error: {0}")]
    Setup(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Prefixes the message of context-carrying variants with an instance path.
    pub fn in_context(self, path: &str) -> Error {
        match self {
            Error::Elaboration(m) => Error::Elaboration(format!("{path}: {m}")),
            Error::Type(m) => Error::Type(format!("{path}: {m}")),
            Error::Storage(m) => Error::Storage(format!("{path}: {m}")),
            Error::Connection(m) => Error::Connection(format!("{path}: {m}")),
            Error::PipelineShape(m) => Error::PipelineShape(format!("{path}: {m}")),
            Error::Naming(m) => Error::Naming(format!("{path}: {m}")),
            Error::Template(m) => Error::Template(format!("{path}: {m}")),
            other => other,
        }
    }
}
