pub mod benchmarks;
pub mod closed_loop;
pub mod config;
pub mod error;
pub mod evolution;
pub mod identification;
pub mod lifting;
pub mod linalg;
pub mod plant;
pub mod regulators;
pub mod signal;

pub use error::{Error, Result};
