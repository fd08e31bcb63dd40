//! Numerical laboratory for temporally adaptive interpolated distillation.

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod models;
pub mod objectives;
pub mod plot;
pub mod prob;
pub mod scheduler;
pub mod theory;
pub mod trainer;

pub use error::{Result, TaidError};
