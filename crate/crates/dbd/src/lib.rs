//! Pipeline stages, file formats and configuration for the `dbd` tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod figures;
pub mod io;
pub mod manifest;
pub mod pipeline;

pub use error::{Error, Result};
