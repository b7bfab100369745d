//! Autoencoder ensemble for ranking anomalous processes in boolean
//! provenance-trace datasets.

pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod models;
pub mod report;
pub mod tensor;
pub mod viz;

pub use error::{Error, Result};
