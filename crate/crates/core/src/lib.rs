//! View-aligned, semantics-gated key/value token caching for navigation
//! transformers, with a synthetic environment, a toy decoder oracle and
//! analytic cost accounting.

pub mod accounting;
pub mod cache;
pub mod config;
pub mod error;
pub mod gating;
pub mod geometry;
pub mod pipeline;
pub mod semantics;
pub mod simulator;
pub mod toy_model;

pub use error::{Error, Result};
