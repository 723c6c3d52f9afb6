use thiserror::Error;

use crate::market::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quantity {quantity} outside bid domain ({detail})")]
    Domain { quantity: f64, detail: String },

    #[error("invalid market instance: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("bid profile has no entry for bidder {0}")]
    MissingBid(usize),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("ground set of {size} bidders exceeds the exhaustive cap of {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("Clarke pivot undefined: the market is infeasible without bidder {0}")]
    PivotUndefined(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("cannot merge bids: {0}")]
    Merge(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("unsupported generator cost model {model} in gencost row {row}")]
    UnsupportedCost { row: usize, model: u32 },

    #[error("no line between buses {from} and {to}")]
    UnknownLine { from: usize, to: usize },

    #[error("unknown bus {0}")]
    UnknownBus(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
