//! Semi-supervised deep Sobolev regression with ReQU networks.
//!
//! Networks are fitted by least squares plus a penalty on the mean squared
//! input-gradient norm, estimated on unlabeled covariates. The fitted network
//! doubles as a derivative estimator, which drives variable selection and
//! source recovery for elliptic equations.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod model;
pub mod training;

pub use error::{Result, SdoreError};
