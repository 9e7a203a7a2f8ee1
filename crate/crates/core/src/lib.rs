//! Versioned single-table datasets: branch histories of SQL modifications,
//! symbolic detection of order-dependent rows, and interactive merging.

pub mod backtrack;
pub mod bench;
pub mod condition;
pub mod csvio;
pub mod detect;
pub mod error;
pub mod expr;
pub mod fixture;
pub mod modification;
pub mod oracle;
pub mod repo;
pub mod resolve;
pub mod service;
pub mod sql;
pub mod table;
pub mod value;

pub use backtrack::{backtrack_condition, backtrack_through, BacktrackResult};
pub use condition::{canonicalize, simplify, CmpOp, Condition};
pub use detect::{detect, noncommute_condition, ConflictKind, ConflictReport, PairConflict};
pub use error::{Error, EvalError, Result};
pub use expr::Expr;
pub use modification::{
    apply_history, apply_modification, materialization_count, History, Interleaving, ModId, ModKind, Modification, Side,
};
pub use oracle::{oracle_conflicts, Granularity};
pub use resolve::{resolve, start_session, ConflictScope, MergeSession, Prompt, ResolveOptions, SessionState};
pub use sql::{parse_condition, parse_statement, ParseError, Statement};
pub use table::{RowId, Schema, TableSnapshot, Tuple};
pub use value::{ColumnType, Value};
