//! Files, ledgers, experiments and the command line around `ecgfilter-core`.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod interchange;
pub mod ledger;
pub mod plot;
pub mod stages;

pub use error::{AppError, Result};
