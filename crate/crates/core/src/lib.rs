#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod candidates;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod pca;
pub mod reaction;
pub mod rollout;
pub mod scalar;
pub mod ssa;
pub mod subnet;
pub mod tvr;

pub use error::{Error, Result};
