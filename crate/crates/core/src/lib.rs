//! Conditional distance correlation estimators, penalised training of causally
//! stable predictors on synthetic structural causal models, and exact
//! counterfactual pathway analysis on discrete models.

// `!(x > 0.0)` is used deliberately so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod conditional;
pub mod dependence;
pub mod error;
pub mod matrix;
pub mod pathways;
pub mod rng;
pub mod scm;
pub mod trainer;

pub use error::{Error, Result};
