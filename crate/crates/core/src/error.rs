use thiserror::Error;

use crate::deceptive::InfeasibleReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("policy has no row for state {0}")]
    MissingPolicyRow(String),

    #[error("policy row for state {state} has {got} entries, expected {expected}")]
    PolicyShape {
        state: String,
        got: usize,
        expected: usize,
    },

    #[error("state {0} has infinite expected residence time")]
    DivergentResidence(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("target not almost-surely reachable from states: {0:?}")]
    TargetNotAlmostSure(Vec<String>),

    #[error("formula syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("proposition '{0}' is not declared")]
    UnknownProposition(String),

    #[error("alphabet of {0} letters exceeds the 2^16 limit; reduce the declared propositions")]
    AlphabetTooLarge(usize),

    #[error("automata alphabets differ")]
    AlphabetMismatch,

    #[error("infeasible: {0}")]
    Infeasible(InfeasibleReport),

    #[error("infeasible constraint set: {0}")]
    InfeasibleSet(String),

    #[error("numerical trouble: {0}")]
    Numerical(String),

    #[error("closed-class assumption violated: {0}")]
    ClosedSetMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
