//! Files, datasets, training driver and evaluation for query-point matching
//! registration. The numerical core lives in `quiz-core`.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod landmarks;
pub mod plot;
pub mod qvol;
pub mod runner;

mod error;

pub use error::{Error, Result};
