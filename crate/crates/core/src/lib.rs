#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod fit;
pub mod glmm;
pub mod inla;
pub mod lgm;
pub mod likelihood;
pub mod math;
pub mod mle;
pub mod model;
pub mod posthoc;
pub mod report;
pub mod simgen;
pub mod sparse;

pub use error::{Error, Result};
