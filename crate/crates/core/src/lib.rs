//! Holdout randomization tests for conditional-independence feature selection.

pub mod bench;
pub mod calibrate;
pub mod cde;
pub mod cli;
pub mod data;
pub mod error;
pub mod hrt;
pub(crate) mod linalg;
pub mod models;
pub(crate) mod nn;
pub mod pvalue;
pub mod risk;
pub mod rng;
pub mod select;
pub mod split;

pub use error::{ExternalError, HrtError, Result};
