//! Robust Bayesian learning with (m, t)-free energies under mean-field Gaussian posteriors.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod tensor;
pub mod trainer;
pub mod variational;

pub use error::{Error, Result};
pub use tensor::Tensor;
