use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not antisymmetric: |M + M^T|_F = {0:e}")]
    NotAntisymmetric(f64),

    #[error("matrix is not an SE2(3) element: {0}")]
    NotInGroup(String),

    #[error("anchor geometry is degenerate: {0}")]
    GeometryDegenerate(String),

    #[error("vector triads are degenerate: {0}")]
    DegenerateTriads(String),

    #[error("invalid parameters: {0}")]
    BadParams(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("{}: row {row}, column `{column}`: {message}", file.display())]
    Schema {
        file: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{}: timestamps not strictly increasing at row {row}", file.display())]
    Clock { file: PathBuf, row: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Context { source, .. } => source.exit_code(),
            Error::Config(_) | Error::BadParams(_) => 2,
            Error::Schema { .. }
            | Error::Clock { .. }
            | Error::TooFewSamples { .. }
            | Error::Io(_)
            | Error::Csv(_) => 3,
            Error::NotAntisymmetric(_)
            | Error::NotInGroup(_)
            | Error::GeometryDegenerate(_)
            | Error::DegenerateTriads(_)
            | Error::Numerical(_) => 4,
        }
    }
}
