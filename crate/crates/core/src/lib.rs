//! Random-projection kernel aggregation of regression machines.

pub mod aggregator;
pub mod datamodel;
pub mod error;
pub mod harness;
pub mod learners;
pub mod projection;
pub mod seed;
pub mod simgen;

pub use error::{Error, Result};
