//! The guide's code listings, compiled and run by `cargo test --doc`.
//!
//! mdbook cannot link a listing against a workspace crate, so each chapter
//! is pulled in here as module docs and rustdoc runs its code blocks. One
//! module per chapter keeps failures traceable to a file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/choi.md")]
pub mod choi {}
#[doc = include_str!("../../../book/src/experiment.md")]
pub mod experiment {}
#[doc = include_str!("../../../book/src/likelihood.md")]
pub mod likelihood {}
#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
