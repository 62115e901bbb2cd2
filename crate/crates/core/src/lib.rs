//! Predictive-maintenance toolkit for semiconductor lasers.

pub mod datagen;
pub mod error;
pub mod metrics;
pub mod models;
pub mod pipeline;

pub use error::{Error, Result};
