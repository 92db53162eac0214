use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigenvalue {k} not bracketed on [{lo}, {hi}]")]
    Bracketing { k: usize, lo: f64, hi: f64 },

    #[error("eigenfunction {k} has {found} interior zeros, expected {expected}")]
    ZeroCount {
        k: usize,
        found: usize,
        expected: usize,
    },

    #[error("spectral data inconsistent: {0}")]
    SpectralInconsistency(String),

    #[error("regime is {regime}, operation requires {required}")]
    UnsupportedRegime {
        regime: &'static str,
        required: &'static str,
    },

    #[error("series not converged: {0}")]
    SeriesNotConverged(String),

    #[error("simulation exceeded the particle cap of {cap}")]
    ParticleCap { cap: usize },

    #[error("numerical scheme failed: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
