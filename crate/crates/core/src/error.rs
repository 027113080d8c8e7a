use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not Hermitian at ({row}, {col})")]
    NotHermitian { row: usize, col: usize },
    #[error("matrix is indefinite (minimum eigenvalue {min_eigenvalue:e})")]
    Indefinite { min_eigenvalue: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "outage threshold not bracketed: probability {probability} at {upper_bits} bits is below the target {target}"
    )]
    NotBracketed {
        upper_bits: f64,
        probability: f64,
        target: f64,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
