//! Universally valid p-value merging under arbitrary dependence.

pub mod analysis;
pub mod calibrate;
pub mod classic;
pub mod discovery;
pub mod error;
pub mod induced;
pub mod method;
pub mod numeric;
pub mod pvec;
pub mod simlab;

pub use error::{MergeError, Result};
pub use pvec::{ExtReal, MergeResult, PVector};
