//! Maximum-likelihood reconstruction of quantum channels from
//! random-measurement data, worked out for the optimal 1-to-2 qubit cloner.
//!
//! The crate is split the way the computation flows:
//!
//! - [`matlin`]: small dense complex matrices (Kronecker products, partial
//!   traces, semidefinite Cholesky, Hermitian eigensolver).
//! - [`channel`]: Choi matrices, Kraus operators, and the cloner itself.
//! - [`experiment`]: simulated input states, clone measurements and
//!   outcome sampling, plus the dataset file format.
//! - [`estimator`]: the Cholesky-parametrized likelihood, the downhill
//!   simplex maximizer, and the error/scaling diagnostics.

pub mod channel;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod matlin;

pub use error::{Error, Result};
