//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has {got} fields, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("cell ({row}, {col}) `{text}` is neither a number nor the missing token")]
    BadCell { row: usize, col: usize, text: String },
    #[error("column {index} ({label}) has {observed} observed values; at least 2 are required")]
    ColumnRejected { index: usize, label: String, observed: usize },
    #[error("input has no data rows")]
    EmptyInput,
    #[error("latent gap cell ({row}, {col}) has no imputed value")]
    UnimputedGap { row: usize, col: usize },
    #[error("gaps present: monotone data augmentation required (re-run with mda enabled, e.g. `fit --mda`)")]
    GapsRequireMda,
    #[error("column {col} is constant over the regression rows; drop it before fitting")]
    ConstantColumn { col: usize },
    #[error("design for column {col} is rank deficient (n_j = {rows} <= {cols} coefficients); lower delta or use a shrinkage prior")]
    RankDeficient { col: usize, rows: usize, cols: usize },
    #[error("matrix is not positive definite: {context}")]
    NotPositiveDefinite { context: String },
    #[error("numerical breakdown: {0}")]
    Numeric(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible problem: {0}")]
    Infeasible(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
}

impl Error {
    /// Process exit code class: 3 for data problems, 4 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RaggedRow { .. }
            | Error::BadCell { .. }
            | Error::ColumnRejected { .. }
            | Error::EmptyInput
            | Error::UnimputedGap { .. }
            | Error::GapsRequireMda
            | Error::Config(_)
            | Error::Dimension(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Format(_) => 3,
            Error::ConstantColumn { .. }
            | Error::RankDeficient { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::Numeric(_)
            | Error::Infeasible(_) => 4,
        }
    }
}
