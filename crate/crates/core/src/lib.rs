#![no_std]
extern crate alloc;

pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nas;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod serde_float;
pub mod signal;
pub mod stats;
pub mod system;
pub mod uad;
pub mod wavelet;

pub use error::{Error, Result};
