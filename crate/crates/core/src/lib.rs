//! Norm-loss weight regularization and a minimal training engine.
//!
//! Everything in this crate is pure computation on in-memory buffers and
//! builds without `std` (an allocator is required). File formats, timing
//! and the command line live in the companion `normloss` crate.
//!
//! Weight matrices follow the row-matrix convention: one row per output
//! filter, so an `n x p` matrix holds `n` filters of dimensionality `p`.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod regularizers;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use regularizers::{LayerDims, RegKind, RegularizerConfig, WeightMatrix};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;
