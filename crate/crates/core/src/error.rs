use thiserror::Error;

/// Crate-wide error type.
///
/// Variants follow where the fault lies: `Config` for caller-supplied
/// settings, `Data` for malformed or insufficient input data, `Param` for
/// model parameters outside their valid region, `Numeric` for linear-algebra
/// breakdowns, and `State` for calling an operation before its prerequisites
/// exist (e.g. predicting with an untrained scaler).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("parameter: {0}")]
    Param(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("state: {0}")]
    State(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
