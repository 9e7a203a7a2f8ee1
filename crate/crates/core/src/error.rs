use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("type mismatch: {left} {op} {right}")]
    TypeMismatch { op: &'static str, left: &'static str, right: &'static str },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] crate::sql::ParseError),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("interleaving cap exceeded: {count} interleavings for {total} modifications (cap {cap})")]
    CapExceeded { count: String, total: usize, cap: usize },
    #[error("oracle aborted: {states} tuple states for row {rid} exceed the limit of {limit}")]
    StateExplosion { rid: String, states: usize, limit: usize },
    #[error("csv line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
