//! Iterative image super-resolution.
//!
//! The model unrolls a half-quadratic-splitting style alternation into a
//! fixed number of iterations: a shared super-resolution solver proposes a
//! high-resolution estimate, a learned down-sampler projects it back to the
//! low-resolution grid, and a small corrector network refines the running
//! low-resolution state against the observation. A final fusion head
//! combines the per-iteration estimates into the output image. Everything
//! runs on a self-contained `NCHW` autograd core written in this crate.

pub mod blocks;
pub mod cli;
pub mod config;
pub mod data;
pub mod degrade;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod pipeline;
pub mod solvers;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
