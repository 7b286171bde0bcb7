//! Penalized model selection over hyperbolic (anisotropic tensor-product)
//! wavelet models for multivariate intensity estimation.
//!
//! The crate estimates a bounded intensity `s` on a hyperrectangle `Q` from
//! one of five kinds of data (plain samples, copula pseudo-observations,
//! Poisson points, Lévy jumps observed continuously, or Lévy increments).
//! In every case the observations define an empirical measure, the intensity
//! is expanded in a hyperbolic wavelet basis (tensor products of univariate
//! wavelets whose resolution levels vary per coordinate), and a model is
//! selected from the pyramidal collection by a penalized least-squares
//! criterion solved exactly with a greedy sort-and-select pass.
//!
//! Module map:
//! - [`uniwavelet`] — univariate bases on `[0,1]`; Haar is the shipped instance.
//! - [`hyperbolic`] — level vectors, index enumeration, tensor evaluation.
//! - [`pyramid`] — sparsity schedules, pyramidal models, exhaustive enumeration.
//! - [`frameworks`] — data ingestion, empirical coefficients and variances.
//! - [`selection`] — penalties, the two-step selector and validation oracles.
//! - [`simlab`] — ground-truth scenarios, samplers and Monte Carlo risk.

#![forbid(unsafe_code)]

pub mod frameworks;
pub mod hyperbolic;
pub mod numeric;
pub mod pyramid;
pub mod selection;
pub mod selftest;
pub mod simlab;
pub mod uniwavelet;

use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("point outside domain: {0}")]
    OutsideDomain(String),

    #[error("empty level range: {0}")]
    EmptyLevelRange(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("variance undefined: {0}")]
    VarianceUndefined(String),

    #[error("model collection too large: {0}")]
    EnumerationCap(String),

    #[error("coefficient tables cover different index sets: {0}")]
    CoverageMismatch(String),

    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Crate version, embedded into serialized outputs for provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
