use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the compiler stages and the MPC runtime.
///
/// Structural graph validation does not use this type; [`crate::graph::validate`]
/// returns the full list of violations instead of failing on the first one.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("cycle detected involving node {0}")]
    Cycle(crate::graph::NodeId),

    #[error("frontend: missing annotation for input \"{0}\"")]
    MissingAnnotation(String),

    #[error("interpret: unsupported op {op} at node {node} for this stage")]
    UnsupportedOp { op: String, node: crate::graph::NodeId },

    #[error("interpret: {0}")]
    Eval(String),

    #[error("no approximation for {op} at {site}")]
    NoApproximation { op: String, site: String },

    #[error("rewrite did not terminate: {0}")]
    NonTermination(String),

    #[error("knob {knob} at {site}: value {value} outside [{lo}, {hi}]")]
    KnobOutOfRange { site: String, knob: String, value: i64, lo: i64, hi: i64 },

    #[error("lowering failed at {site}: {msg}")]
    Lower { site: String, msg: String },

    #[error("scale overflow at {site}: product scale exponent {exp} exceeds limit {limit}")]
    ScaleOverflow { site: String, exp: u32, limit: u32 },

    #[error("protocol error at instruction {index}: {msg}")]
    Protocol { index: usize, msg: String },

    #[error("dealer: {0}")]
    Dealer(String),

    #[error("tuner: {0}")]
    Tuner(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(err: &serde_json::Error) -> Error {
        Error::Parse { line: err.line(), column: err.column(), msg: err.to_string() }
    }
}
