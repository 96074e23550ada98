//! Expression-blinded embedding transformations and their evaluation.

pub mod data;
pub mod error;
pub mod fairness;
pub mod pipeline;
pub mod probes;
pub mod suppression;
pub mod tensor;

pub use error::{Error, Result};
