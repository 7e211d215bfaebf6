use alloc::string::String;

use crate::model::DatasetReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(DatasetReport),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("matrix is not positive definite after jitter escalation: {0}")]
    NotPositiveDefinite(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("no data: {0}")]
    NoData(String),
    /// An M-step failure for one learning resource (1-based id).
    #[error("resource {id}: {source}")]
    Resource {
        id: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
    /// An M-step failure for one question (1-based id).
    #[error("question {id}: {source}")]
    Question {
        id: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl From<DatasetReport> for Error {
    fn from(report: DatasetReport) -> Self {
        Error::InvalidDataset(report)
    }
}
