use thiserror::Error;

/// Errors produced by plant construction, discretization and solving.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid plant: {0}")]
    InvalidPlant(String),

    #[error("complex roots must appear in conjugate pairs (offending root {re}{im:+}i)")]
    NonConjugateRoots { re: f64, im: f64 },

    #[error("transfer function must be strictly proper ({nz} zeros, {np} poles)")]
    ImproperTransferFunction { nz: usize, np: usize },

    #[error("discretization produced non-finite entries")]
    NonFiniteDiscretization,

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("solution carries no dual estimates; cannot certify")]
    Uncertifiable,

    #[error("unknown catalog id {0:?}")]
    UnknownCatalogId(String),

    #[error("catalog asset is malformed: {0}")]
    CatalogFormat(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
