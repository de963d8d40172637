//! Experiment-optimization harness: parameter space, dataset oracle, proposers and campaigns.

mod campaign;
mod dataset;
mod kdtree;
mod proposer;
mod space;

pub use campaign::*;
pub use dataset::*;
pub use kdtree::*;
pub use proposer::*;
pub use space::*;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizerError {
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("{}{field} = {value} is out of bounds", row.map(|r| format!("row {r}: ")).unwrap_or_default())]
    BoundViolation {
        row: Option<usize>,
        field: String,
        value: f64,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need {needed} low-performing records, found {available}")]
    InsufficientLowPerformers { needed: usize, available: usize },
    #[error("remote proposer unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("malformed remote reply: {0}")]
    MalformedRemoteReply(String),
    #[error("budget must be at least 1")]
    InvalidBudget,
    #[error("unknown proposer `{0}`")]
    UnknownProposer(String),
    #[error("io: {0}")]
    Io(String),
}

impl OptimizerError {
    pub(crate) fn at_row(self, row: usize) -> Self {
        match self {
            OptimizerError::BoundViolation { field, value, .. } => OptimizerError::BoundViolation {
                row: Some(row),
                field,
                value,
            },
            other => other,
        }
    }
}
