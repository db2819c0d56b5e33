//! Sparse importance-masked continual learning.
//!
//! A small float64 reverse-mode autodiff core with MLP and tiny decoder
//! transformer models, per-parameter importance estimators (empirical Fisher
//! diagonal, second-order normalized gradient, output-magnitude), top-k
//! gradient masks, masked SGD/Adam, a sequential task runner with a data
//! access audit, the usual continual-learning baselines, and the score-matrix
//! and text metrics used to compare them.
//!
//! The crate is `no_std` and only needs `alloc`. Files, the CLI and manifest
//! handling live in the `sparsecl` companion crate.

#![cfg_attr(not(test), no_std)]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod autodiff;
pub mod baselines;
pub mod continual;
pub mod error;
pub mod importance;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod store;
pub mod tasks;
pub mod tensor;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use error::{Error, Result};
pub use store::{GradientRecord, Granularity, ParameterStore};
pub use tensor::Tensor;
