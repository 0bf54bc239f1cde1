//! Low-rank matrix estimation from noisy, possibly incomplete data.
//!
//! The model is `X = mu + noise` with `mu` of low rank. Estimators shrink the
//! singular values of `X` ([`shrinkage`]), tune the shrinkage by Stein-type risk
//! estimates ([`risk`]), use stable autoencoders for non-Gaussian noise
//! ([`isa`]) and extend to missing values by iterative imputation ([`missing`]).

// `!(x > 0.0)` is how the validators reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ca;
pub mod diagnostics;
pub mod error;
pub mod isa;
pub mod matrix;
pub mod missing;
pub mod noise;
pub mod result;
pub mod risk;
pub mod rng;
pub mod search;
pub mod shrinkage;
pub mod sim;
pub mod svd;

pub use diagnostics::Diagnostic;
pub use error::{Error, Result};
pub use matrix::{CenterState, DataMatrix, Mask};
pub use result::{ShrinkageResult, TuningParams};

pub use faer::Mat;
