//! Hierarchical portfolio allocation by recursive bisection of a
//! covariance matrix, with optional Schur-complement augmentation of the
//! sub-blocks.
//!
//! The entry point is [`allocate`]. With `gamma = 0` it reproduces
//! hierarchical risk parity; with `gamma = 1` (debiased mode, minimum-variance
//! fitness, no capping) it reproduces the minimum-variance portfolio.

// `!(x > y)` is used on purpose so that NaN fails validation checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod cli;
pub mod covmat;
pub mod error;
pub mod linalg;
mod par;
pub mod portfolio;
pub mod schur;
pub mod seriation;
pub mod shrinkage;
pub mod sim;

#[cfg(test)]
mod testdata;

pub use allocator::{allocate, allocate_exact, AllocationConfig, AllocationReport, Mode, TerminalMethod};
pub use covmat::{CovarianceMatrix, ReturnsPanel};
pub use error::{Error, Result};
pub use par::is_parallel;
pub use portfolio::{FitnessKind, WeightVector};
pub use schur::{GammaPair, Tolerances};
pub use seriation::{Permutation, SeriationMethod};
pub use shrinkage::{ShrinkageConfig, ShrinkageResult};
