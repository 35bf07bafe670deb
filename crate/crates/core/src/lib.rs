//! Univariate radial basis function (U-RBF) layers and the experiments that
//! compare them with MLP and multivariate RBF baselines.

// Range checks are written `!(x >= lo)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod dqn;
pub mod error;
pub mod layers;
pub mod maze;
pub mod optim;
pub mod regression;
pub mod rng;
pub mod runner;
pub mod verification;

pub use autodiff::{Graph, OpKind, Tensor, Var};
pub use error::{Error, Result};
pub use layers::{Network, NetworkSpec};
