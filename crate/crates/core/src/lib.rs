//! Verbalized machine learning.
//!
//! A learner is a chat model conditioned on natural-language parameters. An
//! optimizer model rewrites those parameters from batch feedback. This crate
//! holds the training loop and everything around it. See [`backend`] for the
//! chat providers and [`studies`] for the evaluation studies.

pub mod backend;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod domain;
pub mod error;
pub mod numfmt;
pub mod parsing;
pub mod prompting;
pub mod studies;
pub mod training;

pub use error::{Result, VmlError};
